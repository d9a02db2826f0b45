//! Iterated adaptive Gauss-Kronrod (7/15) integration of
//! `f(y) exp(-(|x-y|^2/2t + J(y) - S_0(x,t))/eps)` over a box around the
//! posterior mode, one coordinate at a time.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::first_order_hj::envelope;
use crate::priors::Prior;
use crate::tv_imaging::image::lattice_neighbors;

/// Controls for the posterior integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Half-width of the integration box in units of `sqrt(t eps)`.
    pub window: f64,
    /// Nominal node count per axis; sets the initial panel count to
    /// `ceil((nodes_per_dim - 1) / 14)`.
    pub nodes_per_dim: usize,
    /// Relative accuracy target on the integrals.
    pub refine_tol: f64,
    /// Maximum bisection depth of any panel.
    pub max_refine: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { window: 12.0, nodes_per_dim: 2001, refine_tol: 1e-10, max_refine: 6 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window >= 6.0) || !self.window.is_finite() {
            return Err(invalid(format!("window must be >= 6, got {}", self.window)));
        }
        if self.nodes_per_dim < 51 || self.nodes_per_dim.is_multiple_of(2) {
            return Err(invalid(format!("nodes_per_dim must be odd and >= 51, got {}", self.nodes_per_dim)));
        }
        if !(self.refine_tol > 0.0 && self.refine_tol < 1.0) {
            return Err(invalid(format!("refine_tol must lie in (0, 1), got {}", self.refine_tol)));
        }
        Ok(())
    }

    fn initial_panels(&self) -> usize {
        (self.nodes_per_dim - 1).div_ceil(14).max(1)
    }
}

/// A convex potential seen by the integrator.
pub(crate) trait Potential: Sync {
    /// `J(y)`, `+inf` off the domain.
    fn value(&self, y: &[f64]) -> f64;
    /// `J(y)` for points the integrator generated inside the per-coordinate
    /// supports; rounding may put such points an ulp outside the domain.
    fn value_in_support(&self, y: &[f64]) -> f64 {
        self.value(y)
    }
    /// Range of coordinate `k` inside the domain given the earlier coordinates.
    fn support(&self, k: usize, prefix: &[f64]) -> Option<(f64, f64)>;
    /// Points along coordinate `k` where the integrand loses smoothness.
    fn kinks(&self, k: usize, prefix: &[f64], out: &mut Vec<f64>);
    /// Minimiser and minimum of `|x-y|^2/2t + J(y)`.
    fn envelope(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)>;
}

impl Potential for Prior {
    fn value(&self, y: &[f64]) -> f64 {
        Prior::value(self, y)
    }

    fn value_in_support(&self, y: &[f64]) -> f64 {
        match self {
            Prior::BallIndicator { .. } => 0.0,
            _ => Prior::value(self, y),
        }
    }

    fn support(&self, _k: usize, prefix: &[f64]) -> Option<(f64, f64)> {
        match self {
            Prior::BallIndicator { radius, .. } => {
                let rem = radius * radius - prefix.iter().map(|v| v * v).sum::<f64>();
                (rem > 0.0).then(|| (-rem.sqrt(), rem.sqrt()))
            }
            _ => Some((f64::NEG_INFINITY, f64::INFINITY)),
        }
    }

    fn kinks(&self, k: usize, prefix: &[f64], out: &mut Vec<f64>) {
        match self {
            Prior::WeightedL1 { .. } => out.push(0.0),
            Prior::AnisotropicTv2d { width, height, .. } => {
                out.extend(lattice_neighbors(*width, *height, k).filter(|&j| j < k).map(|j| prefix[j]));
            }
            _ => {}
        }
    }

    fn envelope(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let e = envelope(self, x, t)?;
        Ok((e.minimizer, e.value))
    }
}

/// The Moreau envelope `y -> S_0(y, mu)` of a prior, itself a prior with full
/// domain.
pub(crate) struct MoreauSmoothed<'a> {
    pub prior: &'a Prior,
    pub mu: f64,
}

impl Potential for MoreauSmoothed<'_> {
    fn value(&self, y: &[f64]) -> f64 {
        envelope(self.prior, y, self.mu).map(|e| e.value).unwrap_or(f64::INFINITY)
    }

    fn support(&self, _k: usize, _prefix: &[f64]) -> Option<(f64, f64)> {
        Some((f64::NEG_INFINITY, f64::INFINITY))
    }

    fn kinks(&self, k: usize, prefix: &[f64], out: &mut Vec<f64>) {
        match self.prior {
            Prior::WeightedL1 { lambda } => {
                out.push(-self.mu * lambda[k]);
                out.push(self.mu * lambda[k]);
            }
            Prior::BallIndicator { radius, .. } => {
                let rem = radius * radius - prefix.iter().map(|v| v * v).sum::<f64>();
                if rem > 0.0 {
                    out.push(-rem.sqrt());
                    out.push(rem.sqrt());
                }
            }
            _ => {}
        }
    }

    fn envelope(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        // joint minimisation over (y, z) of |x-y|^2/2t + |y-z|^2/2mu + J(z)
        let outer = envelope(self.prior, x, t + self.mu)?;
        let s = t / (t + self.mu);
        let y = x.iter().zip(&outer.minimizer).map(|(a, z)| a + s * (z - a)).collect();
        Ok((y, outer.value))
    }
}

const ABS_FLOOR: f64 = 1e-150;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_64, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Integrals of `[1, f_1, .., f_m]` against the shifted Gibbs weight.
#[derive(Clone, Debug)]
pub(crate) struct Moments {
    /// `int exp(-(Phi - S_0)/eps) dy`.
    pub mass: f64,
    /// Posterior expectations of the requested features.
    pub mean: Vec<f64>,
}

struct Integrator<'a, P: ?Sized, F> {
    pot: &'a P,
    x: &'a [f64],
    t: f64,
    eps: f64,
    j_mode: f64,
    center: &'a [f64],
    half_width: f64,
    cfg: &'a QuadratureConfig,
    width: usize,
    features: F,
}

/// Change of variables on one segment. Segments ending on the boundary of the
/// support use `y = e +- len s^2`, which turns the square-root behaviour of
/// inner integrals near a curved boundary into a smooth function of `s`.
#[derive(Clone, Copy)]
enum Map {
    Identity,
    FromLeft { a: f64, len: f64 },
    FromRight { b: f64, len: f64 },
}

impl Map {
    #[inline]
    fn apply(self, s: f64) -> (f64, f64) {
        match self {
            Map::Identity => (s, 1.0),
            Map::FromLeft { a, len } => (a + len * s * s, 2.0 * len * s),
            Map::FromRight { b, len } => (b - len * s * s, 2.0 * len * s),
        }
    }
}

struct Panel {
    seg: usize,
    a: f64,
    b: f64,
    depth: usize,
    val: Vec<f64>,
    err: Vec<f64>,
}

impl<P, F> Integrator<'_, P, F>
where
    P: Potential + ?Sized,
    F: Fn(&[f64], &mut [f64]),
{
    fn leaf(&self, y: &[f64], out: &mut [f64]) {
        // Phi(y) - S_0 expanded around the mode: |x-y|^2 - |x-c|^2 = |d|^2 - 2<d, x-c>
        // with d = y - c, so no large terms cancel
        let mut quad = 0.0;
        for ((yi, ci), xi) in y.iter().zip(self.center.iter()).zip(self.x.iter()) {
            let d = yi - ci;
            quad += d * (d - 2.0 * (xi - ci));
        }
        let excess = quad / (2.0 * self.t) + (self.pot.value_in_support(y) - self.j_mode);
        let w = (-excess / self.eps).exp();
        if !(w > 0.0) || !w.is_finite() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        out[0] = 1.0;
        (self.features)(y, &mut out[1..]);
        out.iter_mut().for_each(|v| *v *= w);
    }

    fn point(&self, k: usize, y: &mut [f64], tol: f64, out: &mut [f64]) -> Result<()> {
        if k + 1 == y.len() {
            self.leaf(y, out);
            Ok(())
        } else {
            self.level(k + 1, y, tol * 0.1, out)
        }
    }

    fn kronrod(&self, k: usize, y: &mut [f64], map: Map, a: f64, b: f64, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut f = vec![0.0; self.width];
        let mut kr = vec![0.0; self.width];
        let mut ga = vec![0.0; self.width];
        for i in 0..8 {
            let nodes: &[f64] = if i == 7 { &[0.0] } else { &[-XGK[i], XGK[i]] };
            for &s in nodes {
                let (yk, jac) = map.apply(c + h * s);
                y[k] = yk;
                self.point(k, y, tol, &mut f)?;
                for j in 0..self.width {
                    let v = f[j] * jac;
                    kr[j] += WGK[i] * v;
                    if i % 2 == 1 {
                        ga[j] += WG[i / 2] * v;
                    }
                }
            }
        }
        let mut err = vec![0.0; self.width];
        for j in 0..self.width {
            kr[j] *= h;
            err[j] = (kr[j] - ga[j] * h).abs();
        }
        Ok((kr, err))
    }

    fn level(&self, k: usize, y: &mut [f64], tol: f64, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let w_lo = self.center[k] - self.half_width;
        let w_hi = self.center[k] + self.half_width;
        let Some((s_lo, s_hi)) = self.pot.support(k, &y[..k]) else {
            return Ok(());
        };
        let (lo, hi) = (w_lo.max(s_lo), w_hi.min(s_hi));
        if !(lo < hi) {
            return Ok(());
        }
        let (lo_edge, hi_edge) = (s_lo > w_lo, s_hi < w_hi);
        let mut cuts = vec![lo];
        let mut kinks = Vec::new();
        self.pot.kinks(k, &y[..k], &mut kinks);
        kinks.retain(|&v| v > lo && v < hi);
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        if kinks.is_empty() && lo_edge && hi_edge {
            kinks.push(0.5 * (lo + hi));
        }
        cuts.extend(kinks);
        cuts.push(hi);
        let panel_len = 2.0 * self.half_width / self.cfg.initial_panels() as f64;
        let last = cuts.len() - 2;

        let mut maps = Vec::with_capacity(last + 1);
        let mut panels = Vec::new();
        for (seg, c) in cuts.windows(2).enumerate() {
            let len = c[1] - c[0];
            let (map, s_lo, s_hi) = if seg == 0 && lo_edge {
                (Map::FromLeft { a: c[0], len }, 0.0, 1.0)
            } else if seg == last && hi_edge {
                (Map::FromRight { b: c[1], len }, 0.0, 1.0)
            } else {
                (Map::Identity, c[0], c[1])
            };
            maps.push(map);
            let pieces = (len / panel_len).ceil().max(1.0) as usize;
            let step = (s_hi - s_lo) / pieces as f64;
            let mut breaks: Vec<f64> = (0..pieces).map(|p| s_lo + step * p as f64).collect();
            breaks.push(s_hi);
            for w in breaks.windows(2) {
                if w[1] > w[0] {
                    let (val, err) = self.kronrod(k, y, map, w[0], w[1], tol)?;
                    panels.push(Panel { seg, a: w[0], b: w[1], depth: 0, val, err });
                }
            }
        }
        let mut scale = vec![0.0; self.width];
        loop {
            // each component is judged against its own size, and never
            // below the mass: the weight is 1 at the mode, so slices carrying
            // less than ABS_FLOOR cannot move the total at any requested tolerance
            let mass: f64 = panels.iter().map(|p| p.val[0]).sum::<f64>().abs().max(ABS_FLOOR);
            for (j, sc) in scale.iter_mut().enumerate() {
                *sc = panels.iter().map(|p| p.val[j]).sum::<f64>().abs().max(mass);
            }
            let rel = |p: &Panel| p.err.iter().zip(&scale).map(|(e, s)| e / s).fold(0.0, f64::max);
            let worst_total =
                (0..self.width).map(|j| panels.iter().map(|p| p.err[j]).sum::<f64>() / scale[j]).fold(0.0, f64::max);
            if worst_total <= tol {
                break;
            }
            let worst = panels
                .iter()
                .enumerate()
                .filter(|(_, p)| p.depth < self.cfg.max_refine)
                .max_by(|a, b| rel(a.1).total_cmp(&rel(b.1)))
                .map(|(i, _)| i);
            let Some(i) = worst else {
                return Err(Error::RefinementFailure { estimate: worst_total, tolerance: tol });
            };
            let p = panels.swap_remove(i);
            let m = 0.5 * (p.a + p.b);
            for (a, b) in [(p.a, m), (m, p.b)] {
                let (val, err) = self.kronrod(k, y, maps[p.seg], a, b, tol)?;
                panels.push(Panel { seg: p.seg, a, b, depth: p.depth + 1, val, err });
            }
        }
        // fixed summation order keeps results reproducible
        panels.sort_by(|p, q| p.seg.cmp(&q.seg).then(p.a.total_cmp(&q.a)));
        for p in &panels {
            for (o, v) in out.iter_mut().zip(&p.val) {
                *o += v;
            }
        }
        Ok(())
    }
}

/// Computes the posterior mass (shifted by `S_0`) and expectations of `m`
/// features. `mode` must be the envelope minimiser; the weight is normalised
/// to 1 there.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate<P, F>(
    pot: &P,
    x: &[f64],
    t: f64,
    eps: f64,
    mode: &[f64],
    cfg: &QuadratureConfig,
    m: usize,
    features: F,
) -> Result<Moments>
where
    P: Potential + ?Sized,
    F: Fn(&[f64], &mut [f64]),
{
    cfg.validate()?;
    if x.len() > 3 {
        return Err(Error::Unsupported(format!(
            "tensor-product quadrature is limited to 3 dimensions, got {}",
            x.len()
        )));
    }
    let it = Integrator {
        pot,
        x,
        t,
        eps,
        j_mode: pot.value_in_support(mode),
        center: mode,
        half_width: cfg.window * (t * eps).sqrt(),
        cfg,
        width: m + 1,
        features,
    };
    let mut y = mode.to_vec();
    let mut out = vec![0.0; m + 1];
    it.level(0, &mut y, cfg.refine_tol, &mut out)?;
    let mass = out[0];
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::RefinementFailure { estimate: f64::NAN, tolerance: cfg.refine_tol });
    }
    Ok(Moments { mass, mean: out[1..].iter().map(|v| v / mass).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_mass_and_moments() {
        let p = Prior::zero();
        let (t, eps) = (2.0, 0.5);
        let x = [1.0, -2.0];
        let cfg = QuadratureConfig { nodes_per_dim: 201, ..Default::default() };
        let mom = integrate(&p, &x, t, eps, &x, &cfg, 3, |y, o| {
            o[0] = y[0];
            o[1] = y[1];
            o[2] = (y[0] - 1.0).powi(2);
        })
        .unwrap();
        assert!((mom.mass / (2.0 * PI * t * eps) - 1.0).abs() < 1e-12);
        assert!((mom.mean[0] - 1.0).abs() < 1e-12);
        assert!((mom.mean[1] + 2.0).abs() < 1e-12);
        assert!((mom.mean[2] - t * eps).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig { window: 5.0, ..Default::default() }.validate().is_err());
        assert!(QuadratureConfig { nodes_per_dim: 100, ..Default::default() }.validate().is_err());
        assert!(QuadratureConfig { nodes_per_dim: 49, ..Default::default() }.validate().is_err());
        assert!(QuadratureConfig::default().validate().is_ok());
        assert_eq!(QuadratureConfig::default().initial_panels(), 143);
    }

    #[test]
    fn four_dimensions_rejected() {
        let x = [0.0; 4];
        let r = integrate(&Prior::zero(), &x, 1.0, 1.0, &x, &QuadratureConfig::default(), 0, |_, _| {});
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn smoothed_envelope_mode() {
        let p = Prior::weighted_l1(vec![2.0]).unwrap();
        let sm = MoreauSmoothed { prior: &p, mu: 0.5 };
        let (y, v) = sm.envelope(&[5.0], 1.0).unwrap();
        // direct minimisation over a fine grid
        let huber = |u: f64| envelope(&p, &[u], 0.5).unwrap().value;
        let (mut by, mut bv) = (0.0, f64::INFINITY);
        for k in 0..=100_000 {
            let u = k as f64 * 6.0 / 100_000.0;
            let f = (5.0 - u).powi(2) / 2.0 + huber(u);
            if f < bv {
                bv = f;
                by = u;
            }
        }
        assert!((y[0] - by).abs() < 1e-4 && (v - bv).abs() < 1e-8, "{y:?} {v} vs {by} {bv}");
    }
}
