//! Gibbs sampling of the anisotropic-TV posterior
//! `q(y) ∝ exp(-(|x-y|^2/2t + lambda TV(y))/eps)` on images.
//!
//! Each single-site conditional is a piecewise Gaussian split at the
//! neighbour values and is sampled exactly: a segment is picked by its mass
//! (scaled against the conditional's peak so nothing underflows), then the
//! truncated normal CDF is inverted in log space.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::special::{erfcx, ln_1m_exp, ln_normal_interval, ln_normal_sf, normal_cdf, normal_isf, normal_isf_from_ln};
use crate::tv_imaging::image::lattice_neighbors;
use crate::tv_imaging::Image;

/// Batches per chain used for Monte-Carlo standard errors.
pub const BATCHES_PER_CHAIN: usize = 20;

/// R-hat above which a run is reported as not converged.
pub const RHAT_LIMIT: f64 = 1.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Sweeps per chain, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { sweeps: 20_000, burn_in: 2_000, seed: 0, chains: 4, thin: 1 }
    }
}

impl SamplerConfig {
    /// Retained states per chain.
    pub fn retained(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(invalid(format!("sweeps ({}) must exceed burn_in ({})", self.sweeps, self.burn_in)));
        }
        if self.chains == 0 || self.thin == 0 {
            return Err(invalid("chains and thin must be at least 1"));
        }
        if self.retained() < 2 * BATCHES_PER_CHAIN {
            return Err(invalid(format!(
                "need at least {} retained sweeps per chain, got {}",
                2 * BATCHES_PER_CHAIN,
                self.retained()
            )));
        }
        Ok(())
    }
}

/// One piece of a piecewise Gaussian: density `∝ exp(-(a y^2/2 - b y + c))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPiece {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GaussianPiece {
    pub fn mean(&self) -> f64 {
        self.b / self.a
    }

    fn exponent(&self, y: f64) -> f64 {
        0.5 * self.a * y * y - self.b * y + self.c
    }
}

/// Density on the real line that is Gaussian between consecutive breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseGaussian1D {
    /// Sorted; piece `s` lives on `[breakpoints[s-1], breakpoints[s]]` with
    /// infinite outer ends.
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<GaussianPiece>,
}

impl PiecewiseGaussian1D {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<GaussianPiece>) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(invalid("need exactly one more piece than breakpoints"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] <= w[1])) || breakpoints.iter().any(|v| !v.is_finite()) {
            return Err(invalid("breakpoints must be finite and sorted"));
        }
        if pieces.iter().any(|p| !(p.a > 0.0) || !p.b.is_finite() || !p.c.is_finite()) {
            return Err(invalid("every piece needs positive curvature and finite coefficients"));
        }
        for (k, &v) in breakpoints.iter().enumerate() {
            let (l, r) = (pieces[k].exponent(v), pieces[k + 1].exponent(v));
            if (l - r).abs() > 1e-9 * (1.0 + l.abs()) {
                return Err(invalid(format!("density jumps at breakpoint {v}: {l} vs {r}")));
            }
        }
        Ok(Self { breakpoints, pieces })
    }

    fn bounds(&self, s: usize) -> (f64, f64) {
        let lo = if s == 0 { f64::NEG_INFINITY } else { self.breakpoints[s - 1] };
        let hi = self.breakpoints.get(s).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Natural log of each piece's unnormalised mass.
    pub fn log_masses(&self) -> Vec<f64> {
        (0..self.pieces.len())
            .map(|s| {
                let p = self.pieces[s];
                let (lo, hi) = self.bounds(s);
                let (mu, sd) = (p.mean(), p.a.sqrt().recip());
                let floor = p.c - 0.5 * p.b * p.b / p.a;
                -floor
                    + (2.0 * std::f64::consts::PI).sqrt().ln()
                    + sd.ln()
                    + ln_normal_interval((lo - mu) / sd, (hi - mu) / sd)
            })
            .collect()
    }

    /// Exact draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lw = self.log_masses();
        let s = pick(&lw, rng.random());
        let p = self.pieces[s];
        let (lo, hi) = self.bounds(s);
        let (mu, sd) = (p.mean(), p.a.sqrt().recip());
        mu + sd * truncated_std_normal((lo - mu) / sd, (hi - mu) / sd, rng.random())
    }
}

/// Index drawn from weights `exp(lw)` using the uniform `u`.
fn pick(lw: &[f64], u: f64) -> usize {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = lw.iter().map(|v| (v - m).exp()).sum();
    let mut target = u * total;
    for (s, v) in lw.iter().enumerate() {
        let w = (v - m).exp();
        if target < w {
            return s;
        }
        target -= w;
    }
    // u * total rounded past the last cumulative weight
    lw.iter().rposition(|v| v.is_finite()).unwrap_or(0)
}

/// Solves `ln Q(z) = target` on `[lo, hi]` where `Q` is the standard normal
/// survival function, starting at `z`.
/// Inverse-CDF draw from the standard normal restricted to `[alpha, beta]`.
pub fn truncated_std_normal(alpha: f64, beta: f64, u: f64) -> f64 {
    if alpha >= 0.0 {
        upper_tail(alpha, beta, u)
    } else if beta <= 0.0 {
        -upper_tail(-beta, -alpha, 1.0 - u)
    } else {
        // interval straddles 0: invert whichever tail keeps the target accurate
        let mass = ln_normal_interval(alpha, beta).exp();
        let below = normal_cdf(alpha) + u * mass;
        let z = if below <= 0.5 {
            -normal_isf_from_ln(below.ln())
        } else {
            normal_isf_from_ln((normal_cdf(-beta) + (1.0 - u) * mass).ln())
        };
        z.clamp(alpha, beta)
    }
}

fn upper_tail(alpha: f64, beta: f64, u: f64) -> f64 {
    let la = ln_normal_sf(alpha);
    let lb = if beta.is_infinite() { f64::NEG_INFINITY } else { ln_normal_sf(beta) };
    // ln(Q(alpha) - u (Q(alpha) - Q(beta)))
    let gap = ln_1m_exp(lb - la);
    let target = la + (-(u * gap.exp())).ln_1p();
    normal_isf_from_ln(target).clamp(alpha, beta)
}

/// Single-site conditional of pixel `idx` given the rest of `state`.
pub fn conditional_density(
    state: &Image,
    idx: usize,
    x: &Image,
    t: f64,
    eps: f64,
    lambda: f64,
) -> Result<PiecewiseGaussian1D> {
    if !state.same_shape(x) {
        return Err(crate::Error::DimensionMismatch { expected: x.len(), got: state.len() });
    }
    if idx >= x.len() {
        return Err(invalid(format!("pixel index {idx} out of range")));
    }
    let mut v: Vec<f64> = state.neighbors(idx).map(|j| state.pixels()[j]).collect();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    let total: f64 = v.iter().sum();
    let a = 1.0 / (t * eps);
    let xi = x.pixels()[idx];
    let mut below = 0.0;
    let pieces = (0..=v.len())
        .map(|s| {
            if s > 0 {
                below += v[s - 1];
            }
            let slope = 2.0 * s as f64 - k;
            GaussianPiece {
                a,
                b: (xi / t - lambda * slope) / eps,
                c: (xi * xi / (2.0 * t) + lambda * (total - 2.0 * below)) / eps,
            }
        })
        .collect();
    PiecewiseGaussian1D::new(v, pieces)
}

/// `Q(z) e^{z^2/2}` for `z >= 0`, so that `Q(z) = e^{-z^2/2} mills(z)`.
#[inline]
fn mills(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else {
        0.5 * erfcx(z * FRAC_1_SQRT_2)
    }
}

/// Draws pixel `idx` from its conditional without allocating.
///
/// Segment masses are written as `density(endpoint) * mills(...)`, which
/// shares the breakpoint densities between neighbouring segments and reuses
/// the Mills ratios for the inversion.
#[inline]
#[allow(clippy::too_many_arguments)]
fn gibbs_update<R: Rng>(
    y: &[f64],
    idx: usize,
    w: usize,
    h: usize,
    xi: f64,
    t: f64,
    sd: f64,
    lambda: f64,
    rng: &mut R,
) -> f64 {
    let mut v = [0.0f64; 4];
    let mut k = 0;
    for j in lattice_neighbors(w, h, idx) {
        v[k] = y[j];
        k += 1;
    }
    v[..k].sort_unstable_by(f64::total_cmp);
    let inv_eps = t / (sd * sd);
    let total: f64 = v[..k].iter().sum();
    let tl = t * lambda;
    // E/eps at each breakpoint, evaluated with the piece to its left
    let mut e = [0.0f64; 4];
    let mut below = 0.0;
    for j in 0..k {
        let slope = 2.0 * j as f64 - k as f64;
        e[j] = (0.5 * (v[j] - xi) * (v[j] - xi) / t + lambda * (slope * v[j] + total - 2.0 * below)) * inv_eps;
        below += v[j];
    }
    let mut floor = [f64::INFINITY; 5];
    let mut reference = e[..k].iter().copied().fold(f64::INFINITY, f64::min);
    below = 0.0;
    for s in 0..=k {
        let slope = 2.0 * s as f64 - k as f64;
        let mu = xi - tl * slope;
        let lo = if s == 0 { f64::NEG_INFINITY } else { v[s - 1] };
        let hi = if s == k { f64::INFINITY } else { v[s] };
        if lo < mu && mu < hi {
            floor[s] = (0.5 * (mu - xi) * (mu - xi) / t + lambda * (slope * mu + total - 2.0 * below)) * inv_eps;
            reference = reference.min(floor[s]);
        }
        if s < k {
            below += v[s];
        }
    }
    let mut dens = [0.0f64; 4];
    for j in 0..k {
        dens[j] = (reference - e[j]).exp();
    }

    // per segment: (alpha, beta, mills at the two ends in the orientation used)
    let mut seg = [(0.0f64, 0.0f64, 0.0f64, 0.0f64); 5];
    let mut wts = [0.0f64; 5];
    let mut sum = 0.0;
    for s in 0..=k {
        let mu = xi - tl * (2.0 * s as f64 - k as f64);
        let (a, d_lo) = if s == 0 { (f64::NEG_INFINITY, 0.0) } else { ((v[s - 1] - mu) / sd, dens[s - 1]) };
        let (b, d_hi) = if s == k { (f64::INFINITY, 0.0) } else { ((v[s] - mu) / sd, dens[s]) };
        let wt = if a >= 0.0 {
            let (ma, mb) = (mills(a), mills(b));
            seg[s] = (a, b, ma, mb);
            d_lo * ma - d_hi * mb
        } else if b <= 0.0 {
            let (ma, mb) = (mills(-a), mills(-b));
            seg[s] = (a, b, ma, mb);
            d_hi * mb - d_lo * ma
        } else {
            let (ma, mb) = (mills(-a), mills(b));
            seg[s] = (a, b, ma, mb);
            (reference - floor[s]).exp() - d_lo * ma - d_hi * mb
        };
        wts[s] = wt.max(0.0);
        sum += wts[s];
    }

    let mut target = rng.random::<f64>() * sum;
    let mut s = k;
    for (j, &wt) in wts[..=k].iter().enumerate() {
        if target < wt {
            s = j;
            break;
        }
        target -= wt;
    }
    while wts[s] == 0.0 && s > 0 {
        s -= 1;
    }
    let u: f64 = rng.random();
    let mu = xi - tl * (2.0 * s as f64 - k as f64);
    let lo = if s == 0 { f64::NEG_INFINITY } else { v[s - 1] };
    let hi = if s == k { f64::INFINITY } else { v[s] };
    let (a, b, ma, mb) = seg[s];
    let z = if a >= 0.0 {
        // density ratio hi/lo along this piece
        let ratio = if s == k { 0.0 } else { (e[s - 1] - e[s]).exp() };
        normal_isf_from_ln(-0.5 * a * a + (ma - u * (ma - ratio * mb)).ln())
    } else if b <= 0.0 {
        let ratio = if s == 0 { 0.0 } else { (e[s] - e[s - 1]).exp() };
        -normal_isf_from_ln(-0.5 * b * b + (mb - (1.0 - u) * (mb - ratio * ma)).ln())
    } else {
        let below = if s == 0 { 0.0 } else { (-0.5 * a * a).exp() * ma };
        let above = if s == k { 0.0 } else { (-0.5 * b * b).exp() * mb };
        let mass = 1.0 - below - above;
        let p = below + u * mass;
        if p <= 0.5 {
            -normal_isf(p)
        } else {
            normal_isf(above + (1.0 - u) * mass)
        }
    };
    (mu + sd * z.clamp(a, b)).clamp(lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcResult {
    pub mean_image: Image,
    /// Batch-means Monte-Carlo standard error of each pixel mean.
    pub stderr_image: Image,
    /// Per-pixel posterior variance estimate.
    pub variance_image: Image,
    /// Batch-means standard error of each variance estimate.
    pub variance_stderr_image: Image,
    /// Largest split-chain R-hat over pixels.
    pub rhat_max: f64,
    /// Retained states summed over chains.
    pub accepted_sweeps: usize,
    /// `rhat_max <= RHAT_LIMIT`.
    pub converged: bool,
}

struct ChainStats {
    batch_sum: Vec<f64>,
    batch_sq: Vec<f64>,
    batch_len: Vec<usize>,
    half_sum: [Vec<f64>; 2],
    half_sq: [Vec<f64>; 2],
    half_len: usize,
}

fn run_chain(x: &Image, t: f64, eps: f64, lambda: f64, cfg: &SamplerConfig, chain: usize) -> ChainStats {
    let (w, h) = (x.width(), x.height());
    let n = x.len();
    let xs = x.pixels();
    let sd = (t * eps).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(chain as u64));
    // over-dispersed start for the between-chain diagnostic
    let mut y: Vec<f64> = xs
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect();
    let retained = cfg.retained();
    let half_len = retained / 2;
    let mut st = ChainStats {
        batch_sum: vec![0.0; BATCHES_PER_CHAIN * n],
        batch_sq: vec![0.0; BATCHES_PER_CHAIN * n],
        batch_len: vec![0; BATCHES_PER_CHAIN],
        half_sum: [vec![0.0; n], vec![0.0; n]],
        half_sq: [vec![0.0; n], vec![0.0; n]],
        half_len,
    };
    let mut kept = 0;
    for sweep in 0..cfg.sweeps {
        for i in 0..n {
            y[i] = gibbs_update(&y, i, w, h, xs[i], t, sd, lambda, &mut rng);
        }
        if sweep < cfg.burn_in || !(sweep - cfg.burn_in).is_multiple_of(cfg.thin) || kept >= retained {
            continue;
        }
        let b = kept * BATCHES_PER_CHAIN / retained;
        st.batch_len[b] += 1;
        let (bs, bq) = (&mut st.batch_sum[b * n..(b + 1) * n], &mut st.batch_sq[b * n..(b + 1) * n]);
        for i in 0..n {
            bs[i] += y[i];
            bq[i] += y[i] * y[i];
        }
        let half = if kept < half_len {
            Some(0)
        } else if kept >= retained - half_len {
            Some(1)
        } else {
            None
        };
        if let Some(hh) = half {
            for ((s, q), v) in st.half_sum[hh].iter_mut().zip(&mut st.half_sq[hh]).zip(y.iter()) {
                *s += v;
                *q += v * v;
            }
        }
        kept += 1;
    }
    st
}

/// Split-chain potential scale reduction from per-sequence means and
/// (unbiased) variances of equally long sequences.
pub fn rhat_from_moments(means: &[f64], variances: &[f64], len: usize) -> f64 {
    let m = means.len() as f64;
    let n = len as f64;
    let grand = means.iter().sum::<f64>() / m;
    let between = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let within = variances.iter().sum::<f64>() / m;
    if within <= 0.0 {
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * within + between) / within).sqrt()
}

/// Split R-hat of scalar chains (each chain cut in two halves).
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for c in chains {
        for part in [&c[..n], &c[c.len() - n..]] {
            let mean = part.iter().sum::<f64>() / n as f64;
            means.push(mean);
            vars.push(part.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0));
        }
    }
    rhat_from_moments(&means, &vars, n)
}

/// Posterior-mean image by multi-chain Gibbs sampling. Chain `c` is seeded with
/// `seed + c`; results do not depend on how chains are scheduled.
pub fn posterior_mean_mcmc(x: &Image, t: f64, eps: f64, lambda: f64, cfg: &SamplerConfig) -> Result<McmcResult> {
    cfg.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid("t must be positive"));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps must be positive for posterior sampling"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda must be nonnegative"));
    }
    let chains: Vec<ChainStats> =
        (0..cfg.chains).into_par_iter().map(|c| run_chain(x, t, eps, lambda, cfg, c)).collect();

    let n = x.len();
    let total_batches = (cfg.chains * BATCHES_PER_CHAIN) as f64;
    let accepted: usize = chains.iter().map(|c| c.batch_len.iter().sum::<usize>()).sum();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for c in &chains {
        for b in 0..BATCHES_PER_CHAIN {
            for i in 0..n {
                mean[i] += c.batch_sum[b * n + i];
                second[i] += c.batch_sq[b * n + i];
            }
        }
    }
    for i in 0..n {
        mean[i] /= accepted as f64;
        second[i] /= accepted as f64;
    }
    let mut se = vec![0.0; n];
    let mut var = vec![0.0; n];
    let mut var_se = vec![0.0; n];
    let mut rhat_max: f64 = 1.0;
    let mut hm = Vec::with_capacity(2 * cfg.chains);
    let mut hv = Vec::with_capacity(2 * cfg.chains);
    for i in 0..n {
        let m = mean[i];
        var[i] = (second[i] - m * m).max(0.0);
        let (mut s_mean, mut s_var) = (0.0, 0.0);
        for c in &chains {
            for b in 0..BATCHES_PER_CHAIN {
                let len = c.batch_len[b] as f64;
                let mb = c.batch_sum[b * n + i] / len;
                let qb = c.batch_sq[b * n + i] / len;
                s_mean += (mb - m).powi(2);
                // pseudo-value whose batch average is the pooled variance
                let vb = qb - 2.0 * m * mb + m * m;
                s_var += (vb - var[i]).powi(2);
            }
        }
        se[i] = (s_mean / (total_batches * (total_batches - 1.0))).sqrt();
        var_se[i] = (s_var / (total_batches * (total_batches - 1.0))).sqrt();

        hm.clear();
        hv.clear();
        for c in &chains {
            let l = c.half_len as f64;
            for hh in 0..2 {
                let mh = c.half_sum[hh][i] / l;
                hm.push(mh);
                hv.push(((c.half_sq[hh][i] - l * mh * mh) / (l - 1.0)).max(0.0));
            }
        }
        let r = rhat_from_moments(&hm, &hv, chains[0].half_len);
        if r > rhat_max || r.is_nan() {
            rhat_max = if r.is_nan() { f64::INFINITY } else { r };
        }
    }
    let img = |v: Vec<f64>| Image::new(x.width(), x.height(), v);
    Ok(McmcResult {
        mean_image: img(mean)?,
        stderr_image: img(se)?,
        variance_image: img(var)?,
        variance_stderr_image: img(var_se)?,
        rhat_max,
        accepted_sweeps: accepted,
        converged: rhat_max <= RHAT_LIMIT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_normal_inverts_the_cdf() {
        let cases = [
            (-1.0, 2.0),
            (0.5, 3.0),
            (-3.0, -0.2),
            (4.0, f64::INFINITY),
            (f64::NEG_INFINITY, -7.0),
            (20.0, 21.0),
            (-1e-3, 1e-3),
            (f64::NEG_INFINITY, f64::INFINITY),
        ];
        for (a, b) in cases {
            for &u in &[1e-9, 0.01, 0.3, 0.5, 0.77, 0.999999] {
                let z = truncated_std_normal(a, b, u);
                assert!(z >= a && z <= b, "{a} {b} {u}: {z}");
                let p = (ln_normal_interval(a, z) - ln_normal_interval(a, b)).exp();
                assert!((p - u).abs() < 1e-9 * (1.0 + u / (1.0 - u).max(1e-300)).min(1e3), "{a} {b} {u}: z={z} p={p}");
            }
        }
    }

    #[test]
    fn truncated_normal_mean_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (0.5f64, 2.0f64);
        let draws = 100_000;
        let m: f64 = (0..draws).map(|_| truncated_std_normal(a, b, rng.random())).sum::<f64>() / draws as f64;
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let want = (pdf(a) - pdf(b)) / (normal_cdf(b) - normal_cdf(a));
        assert!((m - want).abs() < 0.01, "{m} vs {want}");
    }

    #[test]
    fn piecewise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let std = PiecewiseGaussian1D::new(vec![], vec![GaussianPiece { a: 1.0, b: 0.0, c: 0.0 }]).unwrap();
        let m: f64 = (0..100_000).map(|_| std.sample(&mut rng)).sum::<f64>() / 1e5;
        assert!(m.abs() < 0.02);

        // Laplace-like symmetric pair split at 0
        let sym = PiecewiseGaussian1D::new(
            vec![0.0],
            vec![GaussianPiece { a: 1.0, b: 1.0, c: 0.0 }, GaussianPiece { a: 1.0, b: -1.0, c: 0.0 }],
        )
        .unwrap();
        let mut d: Vec<f64> = (0..100_000).map(|_| sym.sample(&mut rng)).collect();
        d.sort_by(f64::total_cmp);
        assert!(d[50_000].abs() < 0.02);

        // two pieces carrying masses 0.9 and 0.1: shift the right piece's constant
        let base = GaussianPiece { a: 1.0, b: 0.0, c: 0.0 };
        let probe = PiecewiseGaussian1D::new(vec![0.0], vec![base, base]).unwrap();
        let lm = probe.log_masses();
        assert!((lm[0] - lm[1]).abs() < 1e-12);
        let lw = [0.9f64.ln(), 0.1f64.ln()];
        let hits = (0..100_000).filter(|_| pick(&lw, rng.random()) == 0).count();
        assert!((hits as f64 / 1e5 - 0.9).abs() < 0.01);
        assert!(PiecewiseGaussian1D::new(vec![0.0], vec![base, GaussianPiece { a: 1.0, b: 0.0, c: 1.0 }]).is_err());
    }

    #[test]
    fn conditional_structure() {
        let x = Image::filled(3, 3, 10.0);
        let pg = conditional_density(&x, 4, &x, 2.0, 1.0, 1.5).unwrap();
        assert_eq!(pg.breakpoints, vec![10.0; 4]);
        let lm = pg.log_masses();
        // all mass sits on the outer pieces, symmetric about 10
        assert!((lm[0] - lm[4]).abs() < 1e-12);

        let two = Image::new(2, 1, vec![100.0, 120.0]).unwrap();
        let pg = conditional_density(&two, 0, &two, 20.0, 20.0, 1.0).unwrap();
        assert_eq!(pg.breakpoints, vec![120.0]);
        assert_eq!(pg.pieces.len(), 2);

        let corner = conditional_density(&x, 0, &x, 1.0, 1.0, 1.0).unwrap();
        assert!(corner.pieces.len() <= 3);
    }

    #[test]
    fn fast_update_matches_conditional_density() {
        // same uniforms through both paths give the same draw
        let x = Image::new(3, 3, vec![3.0, 9.0, -2.0, 5.0, 5.0, 40.0, 0.0, 7.5, 7.5]).unwrap();
        let states = [
            Image::new(3, 3, vec![1.0, 8.0, 0.0, 6.0, 4.0, 20.0, -3.0, 7.5, 7.5]).unwrap(),
            Image::new(3, 3, vec![5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]).unwrap(),
            Image::new(3, 3, vec![-50.0, 60.0, 0.0, 1e-9, 0.0, -1e-9, 300.0, 2.0, -300.0]).unwrap(),
        ];
        let params: [(f64, f64, f64); 6] = [
            (1.5, 0.7, 2.0),
            (20.0, 20.0, 1.0),
            (1.0, 0.01, 50.0),
            (0.1, 5.0, 0.01),
            (2.0, 1e-4, 3.0),
            (1.0, 1.0, 0.0),
        ];
        for state in &states {
            for &(t, eps, lambda) in &params {
                let sd = (t * eps).sqrt();
                for idx in 0..9 {
                    let pg = conditional_density(state, idx, &x, t, eps, lambda).unwrap();
                    let mut r1 = ChaCha8Rng::seed_from_u64(idx as u64);
                    let mut r2 = r1.clone();
                    for _ in 0..50 {
                        let a = pg.sample(&mut r1);
                        let b = gibbs_update(state.pixels(), idx, 3, 3, x.pixels()[idx], t, sd, lambda, &mut r2);
                        assert!((a - b).abs() < 1e-9 * (1.0 + a.abs() + sd), "{t} {eps} {lambda} {idx}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn rhat_examples() {
        let a: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let b: Vec<f64> = (0..1000).map(|i| ((i * 104729) % 1000) as f64).collect();
        assert!((split_rhat(&[&a, &b]) - 1.0).abs() < 0.01);
        let c: Vec<f64> = a.iter().map(|v| v + 5000.0).collect();
        assert!(split_rhat(&[&a, &c]) > 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig { sweeps: 10, burn_in: 10, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { chains: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { sweeps: 30, burn_in: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn one_pixel_and_constant_images() {
        let cfg = SamplerConfig { sweeps: 4000, burn_in: 200, seed: 5, ..Default::default() };
        let one = Image::new(1, 1, vec![42.0]).unwrap();
        let r = posterior_mean_mcmc(&one, 2.0, 3.0, 1.0, &cfg).unwrap();
        let (m, se) = (r.mean_image.pixels()[0], r.stderr_image.pixels()[0]);
        assert!((m - 42.0).abs() < 4.0 * se, "{m} ± {se}");
        assert!((r.variance_image.pixels()[0] - 6.0).abs() < 3.0 * r.variance_stderr_image.pixels()[0]);
        assert!(r.converged);

        let flat = Image::filled(4, 3, 50.0);
        let r = posterior_mean_mcmc(&flat, 5.0, 2.0, 1.0, &cfg).unwrap();
        for (m, se) in r.mean_image.pixels().iter().zip(r.stderr_image.pixels()) {
            assert!((m - 50.0).abs() < 3.5 * se, "{m} ± {se}");
        }
        assert!(r.rhat_max >= 1.0 - 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let x = Image::new(3, 3, (0..9).map(|v| v as f64 * 10.0).collect()).unwrap();
        let cfg = SamplerConfig { sweeps: 300, burn_in: 50, seed: 9, chains: 2, thin: 2 };
        let a = posterior_mean_mcmc(&x, 2.0, 1.0, 1.0, &cfg).unwrap();
        let b = posterior_mean_mcmc(&x, 2.0, 1.0, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = posterior_mean_mcmc(&x, 2.0, 1.0, 1.0, &SamplerConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.mean_image, c.mean_image);
    }
}
