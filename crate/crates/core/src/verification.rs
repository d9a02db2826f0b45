//! Numeric checks of the estimator identities, bounds and limits, collected
//! into JSON reports.
//!
//! Every check owns a generator seeded from the report seed and the check's
//! position in its suite, so results do not depend on scheduling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::first_order_hj::{envelope, grad_s0_limit_check, hj_residual, hopf_check_1d, Grid1D};
use crate::gibbs_sampler::{posterior_mean_mcmc, McmcResult, SamplerConfig};
use crate::priors::{DomainLocation, Prior};
use crate::tv_imaging::{add_gaussian_noise, plateau_fraction, psnr, rof_map, Image, NoiseSpec, DEFAULT_PLATEAU_TOL};
use crate::viscous_hj::{
    heat_residual, mean_min_subgradient, pm_via_moreau_smoothing, posterior_expectations, posterior_summary,
    posterior_summary_quadrature, s_eps_closed_quadratic, u_pm_closed_l1, viscous_residual, EstimatorParams,
    KConjugate1d, PosteriorSummary, QuadratureConfig,
};

/// Relative slack granted to every inequality.
pub const INEQUALITY_SLACK: f64 = 1e-9;
/// Quadrature-versus-closed-form agreement.
pub const EQUALITY_TOL: f64 = 1e-6;
/// Smallest accepted observed convergence order of finite-difference residuals.
pub const MIN_ORDER: f64 = 1.5;
/// Residual step sizes; each halves the previous.
pub const RESIDUAL_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
/// Required ratio of MAP to PM plateau fractions.
pub const STAIRCASE_FACTOR: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    #[serde(with = "reals")]
    pub observed: Vec<f64>,
    #[serde(with = "reals")]
    pub bound_or_target: Vec<f64>,
    #[serde(with = "real")]
    pub tolerance: f64,
    pub details: String,
}

impl CheckResult {
    pub fn new(
        name: impl Into<String>,
        passed: bool,
        observed: Vec<f64>,
        bound_or_target: Vec<f64>,
        tolerance: f64,
        details: impl Into<String>,
    ) -> Self {
        Self { name: name.into(), passed, observed, bound_or_target, tolerance, details: details.into() }
    }

    fn errored(name: impl Into<String>, err: &Error) -> Self {
        Self::new(name, false, vec![], vec![], 0.0, format!("numerical failure: {err}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub seed: u64,
    /// RFC 3339 creation time.
    pub timestamp: String,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

// JSON has no infinities or NaN; those are written as the strings
// "inf", "-inf" and "nan".
mod real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, \"inf\", \"-inf\" or \"nan\", got {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod reals {
    use super::real::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Closed forms, representation formulas, Moreau decomposition, Bregman
    /// risk, topology, Hopf formula.
    Core,
    /// MSE and MAP-PM bounds, monotonicity, small-t and small-eps limits.
    Bounds,
    /// Finite-difference PDE residuals and convexity/monotonicity in (x, t, eps).
    Pde,
    /// Gibbs sampler against quadrature, and the staircasing comparison.
    Imaging,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Core, Suite::Bounds, Suite::Pde, Suite::Imaging];
    /// Suites run when none is named; imaging takes minutes.
    pub const DEFAULT: [Suite; 3] = [Suite::Core, Suite::Bounds, Suite::Pde];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Bounds => "bounds",
            Suite::Pde => "pde",
            Suite::Imaging => "imaging",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite {s:?}; expected core, bounds, pde or imaging")))
    }
}

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|a| format!("{a:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Dimension used for random trials: the prior's own, else 2.
fn trial_dim(prior: &Prior) -> usize {
    prior.dim().unwrap_or(2)
}

/// `x ~ U[-10,10]^n`, `t ~ logU[0.05, 50]`, `eps ~ logU[0.01, 50]`.
pub fn random_trial<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, EstimatorParams) {
    let x = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let t = log_uniform(rng, 0.05, 50.0);
    let eps = log_uniform(rng, 0.01, 50.0);
    (x, EstimatorParams { t, eps })
}

fn summary(prior: &Prior, x: &[f64], p: EstimatorParams) -> Result<PosteriorSummary> {
    posterior_summary(prior, x, p, &cfg())
}

/// `n t eps / (1 + m t)`.
fn mse_bound(prior: &Prior, n: usize, p: EstimatorParams) -> f64 {
    n as f64 * p.t * p.eps / (1.0 + prior.strong_convexity() * p.t)
}

fn guard(name: String, f: impl FnOnce(&str) -> Result<CheckResult>) -> CheckResult {
    match f(&name) {
        Ok(c) => c,
        Err(e) => CheckResult::errored(name, &e),
    }
}

/// Posterior MSE never exceeds `n t eps/(1+mt)`, with equality for quadratic priors.
pub fn check_mse_bound<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("mse_bound[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let exact = matches!(prior, Prior::Quadratic { .. });
        let (mut ok, mut worst, mut worst_eq) = (true, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, n);
            let s = summary(prior, &x, p)?;
            let bound = mse_bound(prior, n, p);
            ok &= s.mse <= bound + INEQUALITY_SLACK * bound.max(1.0);
            worst = worst.max(s.mse / bound);
            if exact {
                let rel = (s.mse - bound).abs() / bound;
                ok &= rel <= INEQUALITY_SLACK;
                worst_eq = worst_eq.max(rel);
            }
        }
        let mut details = format!("{trials} trials; largest MSE/bound {worst:.6}");
        if exact {
            details += &format!("; largest relative gap to equality {worst_eq:.2e}");
        }
        Ok(CheckResult::new(name, ok, vec![worst], vec![1.0], INEQUALITY_SLACK, details))
    })
}

/// `|u_MAP - u_PM|^2 <= n t eps/(1+mt)`.
pub fn check_map_pm_distance<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("map_pm_distance[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let (mut ok, mut worst) = (true, 0.0f64);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, n);
            let s = summary(prior, &x, p)?;
            let map = prior.prox(&x, p.t)?;
            let d2 = dist(&map, &s.u_pm).powi(2);
            let bound = mse_bound(prior, n, p);
            ok &= d2 <= bound + INEQUALITY_SLACK * bound.max(1.0);
            worst = worst.max(d2 / bound);
        }
        let details = format!("{trials} trials; largest squared distance / bound {worst:.6}");
        Ok(CheckResult::new(name, ok, vec![worst], vec![1.0], INEQUALITY_SLACK, details))
    })
}

/// `x -> u_PM` is monotone and 1-Lipschitz.
pub fn check_nonexpansive_monotone<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("nonexpansive_monotone[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let (mut ok, mut min_inner, mut max_ratio) = (true, f64::INFINITY, 0.0f64);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, n);
            let mag = log_uniform(rng, 1e-3, 10.0);
            let mut d: Vec<f64> = (0..n).map(|_| gauss(rng)).collect();
            let dn = norm(&d);
            d.iter_mut().for_each(|v| *v *= mag / dn);
            let xd: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let (u0, u1) = (summary(prior, &x, p)?.u_pm, summary(prior, &xd, p)?.u_pm);
            let du: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
            let inner = dot(&du, &d);
            ok &= inner >= -INEQUALITY_SLACK && norm(&du) <= mag + INEQUALITY_SLACK;
            min_inner = min_inner.min(inner / (mag * mag));
            max_ratio = max_ratio.max(norm(&du) / mag);
        }
        let details = format!("{trials} pairs; min <du,d>/|d|^2 = {min_inner:.3e}, max |du|/|d| = {max_ratio:.9}");
        Ok(CheckResult::new(name, ok, vec![min_inner, max_ratio], vec![0.0, 1.0], INEQUALITY_SLACK, details))
    })
}

/// Distances `|u_PM(x + t_k d_k, t_k) - x|` together with their envelopes
/// `|t_k d_k| + t_k |pi_dJ(x)(0)| + sqrt(n t_k eps/(1+m t_k))`.
fn t_to_zero_sequence(
    prior: &Prior,
    x: &[f64],
    eps: f64,
    t_seq: &[f64],
    d_seq: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t_seq.len() != d_seq.len() || t_seq.is_empty() {
        return Err(invalid("t_seq and d_seq must be non-empty and of equal length"));
    }
    let n = x.len();
    let g0 = norm(&prior.min_subgradient(x)?);
    let mut dists = Vec::with_capacity(t_seq.len());
    let mut envs = Vec::with_capacity(t_seq.len());
    for (&t, d) in t_seq.iter().zip(d_seq) {
        let p = EstimatorParams::new(t, eps)?;
        let z: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let u = summary(prior, &z, p)?.u_pm;
        dists.push(dist(&u, x));
        envs.push(t * norm(d) + t * g0 + mse_bound(prior, n, p).sqrt());
    }
    Ok((dists, envs))
}

/// `u_PM(x + t_k d_k, t_k, eps) -> x` as `t_k -> 0`, for `x` in `dom dJ`.
pub fn check_t_to_zero(prior: &Prior, x: &[f64], eps: f64, t_seq: &[f64], d_seq: &[Vec<f64>]) -> CheckResult {
    guard(format!("t_to_zero[{}]", prior.label()), |name| {
        let (dists, envs) = t_to_zero_sequence(prior, x, eps, t_seq, d_seq)?;
        let within = dists.iter().zip(&envs).all(|(d, e)| *d <= e + INEQUALITY_SLACK * e.max(1.0));
        let t_last = *t_seq.last().unwrap();
        let last = *dists.last().unwrap();
        let final_cap = 10.0 * (x.len() as f64 * t_last * eps).sqrt();
        let details = format!("final distance {last:.3e} (cap {final_cap:.3e}); all within envelope: {within}");
        let mut bound = envs;
        bound.push(final_cap);
        Ok(CheckResult::new(name, within && last < final_cap, dists, bound, INEQUALITY_SLACK, details))
    })
}

/// [`check_t_to_zero`] over random `x`, `eps` and directions, with
/// `t_k = 10^{-k}`, `k = 0..=5`.
pub fn check_t_to_zero_random<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("t_to_zero[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let t_seq: Vec<f64> = (0..6).map(|k| 10f64.powi(-k)).collect();
        let (mut ok, mut worst, mut worst_final) = (true, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let (mut x, p) = random_trial(rng, n);
            if let Prior::BallIndicator { radius, .. } = prior {
                let s = rng.random_range(0.0..1.0) * radius / norm(&x).max(f64::MIN_POSITIVE);
                x.iter_mut().for_each(|v| *v *= s);
            }
            let d_seq: Vec<Vec<f64>> = t_seq.iter().map(|_| (0..n).map(|_| 5.0 * gauss(rng)).collect()).collect();
            let (dists, envs) = t_to_zero_sequence(prior, &x, p.eps, &t_seq, &d_seq)?;
            for (d, e) in dists.iter().zip(&envs) {
                ok &= *d <= e + INEQUALITY_SLACK * e.max(1.0);
                worst = worst.max(d / e);
            }
            let cap = 10.0 * (n as f64 * t_seq[5] * p.eps).sqrt();
            ok &= dists[5] < cap;
            worst_final = worst_final.max(dists[5] / cap);
        }
        let details = format!(
            "{trials} sequences; largest distance/envelope {worst:.4}, largest final distance/cap {worst_final:.4}"
        );
        Ok(CheckResult::new(name, ok, vec![worst, worst_final], vec![1.0, 1.0], INEQUALITY_SLACK, details))
    })
}

/// Sup-norm gaps `|S_eps - S_0|` and `|u_PM - u_MAP|` over a grid of points are
/// non-increasing along `eps_seq`, and the last `u` gap is at most
/// `sqrt(n t eps_last)` at every point.
pub fn check_eps_to_zero(prior: &Prior, xs: &[Vec<f64>], ts: &[f64], eps_seq: &[f64]) -> CheckResult {
    guard(format!("eps_to_zero[{}]", prior.label()), |name| {
        let mut s_gaps = Vec::with_capacity(eps_seq.len());
        let mut u_gaps = Vec::with_capacity(eps_seq.len());
        let mut last_ok = true;
        let mut last_ratio = 0.0f64;
        for (k, &eps) in eps_seq.iter().enumerate() {
            let (mut sg, mut ug) = (0.0f64, 0.0f64);
            for x in xs {
                for &t in ts {
                    let p = EstimatorParams::new(t, eps)?;
                    let s = summary(prior, x, p)?;
                    let e = envelope(prior, x, t)?;
                    sg = sg.max((s.s_eps - e.value).abs());
                    let du = dist(&s.u_pm, &e.minimizer);
                    ug = ug.max(du);
                    if k + 1 == eps_seq.len() {
                        let cap = (x.len() as f64 * t * eps).sqrt();
                        last_ok &= du <= cap;
                        last_ratio = last_ratio.max(du / cap);
                    }
                }
            }
            s_gaps.push(sg);
            u_gaps.push(ug);
        }
        let mono = |g: &[f64]| g.windows(2).all(|w| w[1] <= w[0] + INEQUALITY_SLACK);
        let ok = mono(&s_gaps) && mono(&u_gaps) && last_ok;
        let details = format!(
            "eps {eps_seq:?}: sup|S_eps - S_0| {s_gaps_s}, sup|u_PM - u_MAP| {u_gaps_s}; last gap / sqrt(n t eps) <= {last_ratio:.4}", s_gaps_s = sci(&s_gaps), u_gaps_s = sci(&u_gaps)
        );
        let mut observed = s_gaps;
        observed.extend(u_gaps);
        Ok(CheckResult::new(name, ok, observed, vec![last_ratio.max(1.0)], INEQUALITY_SLACK, details))
    })
}

/// For the ball indicator, `u_PM` lies strictly inside the ball and
/// `J(u_PM) <= E[J] <= eps (e^{S_eps/eps} - 1)`.
pub fn check_topology<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("topology[{}]", prior.label()), |name| {
        let Prior::BallIndicator { radius, .. } = prior else {
            return Err(invalid("topology check needs a BallIndicator prior"));
        };
        let n = trial_dim(prior);
        let (mut ok, mut min_margin, mut max_ej) = (true, f64::INFINITY, 0.0f64);
        for k in 0..trials {
            let (_, p) = random_trial(rng, n);
            let mut x: Vec<f64> = (0..n).map(|_| gauss(rng)).collect();
            let scale = if k == 0 { 0.0 } else { rng.random_range(0.0..50.0) / norm(&x) };
            x.iter_mut().for_each(|v| *v *= scale);
            let s = posterior_summary_quadrature(prior, &x, p, &cfg())?;
            // J at the nearest point of dom J, so rounding at the rim cannot
            // turn an in-domain node into +inf
            let ej = posterior_expectations(prior, &x, p, &cfg(), 1, |y, out| {
                out[0] = prior.value(&prior.prox(y, 1.0).expect("projection"));
            })?[0];
            let j_u = prior.value(&s.u_pm);
            let upper = p.eps * (s.s_eps / p.eps).exp_m1();
            let margin = radius - norm(&s.u_pm);
            ok &= prior.domain_contains(&s.u_pm) == DomainLocation::Interior && margin >= 1e-9 * radius;
            ok &= j_u <= ej + INEQUALITY_SLACK && ej <= upper + INEQUALITY_SLACK;
            min_margin = min_margin.min(margin);
            max_ej = max_ej.max(ej);
        }
        let details = format!(
            "{trials} points with |x| up to 50; smallest r - |u_PM| = {min_margin:.3e}; largest E[J] = {max_ej:.1e}"
        );
        Ok(CheckResult::new(name, ok, vec![min_margin], vec![1e-9 * radius], INEQUALITY_SLACK, details))
    })
}

/// Fourth-order central difference of `f` at `x` along coordinate `i`.
fn derivative4(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], i: usize, h: f64) -> Result<f64> {
    let mut y = x.to_vec();
    let mut at = |s: f64| {
        y[i] = x[i] + s * h;
        f(&y)
    };
    let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// `grad S_eps = E[pi_dJ(y)(0)]` and `MSE = n t eps - t E[<pi_dJ(y)(0), y - u_PM>]`.
pub fn check_representation<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("representation[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let (mut ok, mut worst_g, mut worst_m) = (true, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, n);
            let s = summary(prior, &x, p)?;
            let mms = mean_min_subgradient(prior, &x, p, &cfg())?;
            ok &= mms.iter().all(|v| v.is_finite());
            let h = 0.01 * (p.t * p.eps).sqrt().min(p.t);
            let f = |y: &[f64]| summary(prior, y, p).map(|s| s.s_eps);
            for (i, g) in mms.iter().enumerate() {
                let fd = derivative4(&f, &x, i, h)?;
                let err = (fd - g).abs() / g.abs().max(1.0);
                ok &= err <= EQUALITY_TOL;
                worst_g = worst_g.max(err);
            }
            let u = s.u_pm.clone();
            let cross = posterior_expectations(prior, &x, p, &cfg(), 1, |y, out| {
                let g = prior.min_subgradient(y).expect("full-domain prior");
                out[0] = (0..n).map(|i| g[i] * (y[i] - u[i])).sum();
            })?[0];
            let nte = n as f64 * p.t * p.eps;
            let rep = nte - p.t * cross;
            let err = (rep - s.mse).abs() / nte.max(1.0);
            ok &= err <= EQUALITY_TOL;
            worst_m = worst_m.max(err);
        }
        let details =
            format!("{trials} trials; gradient rel. error {worst_g:.2e}, MSE identity rel. error {worst_m:.2e}");
        Ok(CheckResult::new(name, ok, vec![worst_g, worst_m], vec![0.0, 0.0], EQUALITY_TOL, details))
    })
}

/// `(1/t + m) E|y - y0|^2 <= n eps - <(y0 - x)/t + pi_dJ(y0)(0), u_PM - y0>`.
pub fn check_monotonicity_inequality<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("monotonicity_inequality[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let m = prior.strong_convexity();
        let (mut ok, mut worst) = (true, f64::NEG_INFINITY);
        for k in 0..trials {
            let (x, p) = random_trial(rng, n);
            let s = summary(prior, &x, p)?;
            let sigma = (p.t * p.eps).sqrt();
            let spread = rng.random_range(0.0..3.0);
            let mut y0: Vec<f64> =
                if k == 0 { s.u_pm.clone() } else { s.u_pm.iter().map(|u| u + spread * sigma * gauss(rng)).collect() };
            if !prior.has_full_domain() {
                y0 = prior.prox(&y0, 1.0)?;
            }
            let y0c = y0.clone();
            let second = posterior_expectations(prior, &x, p, &cfg(), 1, |y, out| {
                out[0] = y.iter().zip(&y0c).map(|(a, b)| (a - b) * (a - b)).sum();
            })?[0];
            let g = prior.min_subgradient(&y0)?;
            let phi: Vec<f64> = (0..n).map(|i| (y0[i] - x[i]) / p.t + g[i]).collect();
            let du: Vec<f64> = s.u_pm.iter().zip(&y0).map(|(a, b)| a - b).collect();
            let lhs = (1.0 / p.t + m) * second;
            let inner = dot(&phi, &du);
            let rhs = n as f64 * p.eps - inner;
            let scale = lhs.abs().max(inner.abs()).max(n as f64 * p.eps).max(1.0);
            ok &= lhs <= rhs + INEQUALITY_SLACK * scale;
            worst = worst.max((lhs - rhs) / scale);
        }
        let details = format!("{trials} anchors y0; largest (lhs - rhs)/scale = {worst:.3e}");
        Ok(CheckResult::new(name, ok, vec![worst], vec![0.0], INEQUALITY_SLACK, details))
    })
}

/// Evaluates the Bregman risk `u -> E[D_Phi(u, phi(y))]` on `grid` and checks
/// that its grid minimiser is within one cell of `u_MAP`.
pub fn check_bregman_risk_1d(prior: &Prior, x: f64, t: f64, eps: f64, grid: &Grid1D) -> CheckResult {
    guard(format!("bregman_risk[{}]", prior.label()), |name| {
        prior.check_dim(1)?;
        if !prior.has_full_domain() {
            return Err(invalid("the Bregman characterisation needs a prior with full domain"));
        }
        let (star, risk, map) = bregman_argmin(prior, x, t, eps, grid)?;
        let h = grid.spacing();
        let ok = (star - map).abs() <= h;
        let details = format!("x={x}, t={t}, eps={eps}: grid argmin {star:.6}, u_MAP {map:.6}, min risk {risk:.3e}");
        Ok(CheckResult::new(name, ok, vec![star, risk], vec![map], h, details))
    })
}

/// Grid minimiser, minimal risk and `u_MAP`.
fn bregman_argmin(prior: &Prior, x: f64, t: f64, eps: f64, grid: &Grid1D) -> Result<(f64, f64, f64)> {
    let p = EstimatorParams::new(t, eps)?;
    let big_phi = |y: f64| (x - y) * (x - y) / (2.0 * t) + prior.value(&[y]);
    // E[phi], E[Phi], E[phi y] with phi(y) = (y - x)/t + pi_dJ(y)(0)
    let e = posterior_expectations(prior, &[x], p, &cfg(), 3, |y, out| {
        let phi = (y[0] - x) / t + prior.min_subgradient(y).expect("full-domain prior")[0];
        out[0] = phi;
        out[1] = big_phi(y[0]);
        out[2] = phi * y[0];
    })?;
    let risk = |u: f64| big_phi(u) - e[1] - e[0] * u + e[2];
    let (mut best, mut best_val) = (0, f64::INFINITY);
    for (i, &u) in grid.values.iter().enumerate() {
        let r = risk(u);
        if r < best_val {
            best = i;
            best_val = r;
        }
    }
    if best == 0 || best == grid.count - 1 {
        return Err(Error::EndpointArgmax { what: "Bregman risk" });
    }
    Ok((grid.values[best], best_val, prior.prox(&[x], t)?[0]))
}

/// [`check_bregman_risk_1d`] at random `(x, t, eps)` on grids of spacing 1e-3.
pub fn check_bregman_random<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("bregman_risk[{}]", prior.label()), |name| {
        let h = 1e-3;
        let (mut ok, mut worst) = (true, 0.0f64);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, 1);
            let map = prior.prox(&x, p.t)?[0];
            let lo = (x[0].min(map) - 1.0).floor();
            let hi = (x[0].max(map) + 1.0).ceil();
            let grid = Grid1D::new(lo, hi, ((hi - lo) / h).round() as usize + 1)?;
            let (star, _, map) = bregman_argmin(prior, x[0], p.t, p.eps, &grid)?;
            ok &= (star - map).abs() <= grid.spacing();
            worst = worst.max((star - map).abs() / grid.spacing());
        }
        let details = format!("{trials} random (x,t,eps); largest |argmin - u_MAP| = {worst:.3} cells");
        Ok(CheckResult::new(name, ok, vec![worst], vec![1.0], h, details))
    })
}

/// `t S_eps(x,t) = min_y { (x-y)^2/2 + K_eps*(y) - y^2/2 }` on `x_grid`, with the
/// minimiser at `u_PM` and `y -> K_eps*(y) - y^2/2` discretely convex.
pub fn check_moreau_decomposition_1d(prior: &Prior, x_grid: &[f64], t: f64, eps: f64) -> CheckResult {
    guard(format!("moreau_decomposition[{}]", prior.label()), |name| {
        prior.check_dim(1)?;
        if x_grid.is_empty() {
            return Err(invalid("empty x grid"));
        }
        let p = EstimatorParams::new(t, eps)?;
        let u = |x: f64| summary(prior, &[x], p).map(|s| s.u_pm[0]);
        let x_lo = x_grid.iter().copied().fold(f64::INFINITY, f64::min);
        let x_hi = x_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dy = 5e-3;
        let y_lo = u(x_lo)? - 0.25;
        let y_hi = u(x_hi)? + 0.25;
        // widen the inner grid until u_PM covers the y range with room to spare
        let mut reach = 1.0;
        while u(x_lo - reach)? > y_lo - 0.25 || u(x_hi + reach)? < y_hi + 0.25 {
            reach *= 2.0;
            if reach > 1e4 {
                return Err(invalid("u_PM does not cover the conjugate range"));
            }
        }
        let inner = Grid1D::new(x_lo - reach, x_hi + reach, (((x_hi - x_lo + 2.0 * reach) / dy).round() as usize) + 1)?;
        let kc = KConjugate1d::new(prior, p, &inner, &cfg())?;
        let ys = Grid1D::new(y_lo, y_hi, (((y_hi - y_lo) / dy).round() as usize) + 1)?;
        let g: Vec<f64> = ys.values.iter().map(|&y| kc.eval(y).map(|v| v.0 - 0.5 * y * y)).collect::<Result<_>>()?;
        let h = ys.spacing();
        let min_second = g.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::INFINITY, f64::min);
        let convex = min_second >= -1e-9;
        let (mut worst_id, mut worst_cell) = (0.0f64, 0.0f64);
        let mut ok = convex;
        for &x in x_grid {
            let s = summary(prior, &[x], p)?;
            let obj = |j: usize| 0.5 * (x - ys.values[j]).powi(2) + g[j];
            let best = (0..g.len()).min_by(|&a, &b| obj(a).total_cmp(&obj(b))).unwrap();
            if best == 0 || best == g.len() - 1 {
                return Err(Error::EndpointArgmax { what: "Moreau decomposition" });
            }
            let (fm, f0, fp) = (obj(best - 1), obj(best), obj(best + 1));
            let curv = fm - 2.0 * f0 + fp;
            let value = if curv > 0.0 { f0 - (fm - fp).powi(2) / (8.0 * curv) } else { f0 };
            let id_err = (value - t * s.s_eps).abs();
            let cell = (ys.values[best] - s.u_pm[0]).abs() / h;
            ok &= id_err <= 1e-4 && cell <= 1.0;
            worst_id = worst_id.max(id_err);
            worst_cell = worst_cell.max(cell);
        }
        let details = format!(
            "{} points, t={t}, eps={eps}: largest identity error {worst_id:.2e}, argmin off by {worst_cell:.3} cells, smallest second difference {min_second:.2e}",
            x_grid.len()
        );
        Ok(CheckResult::new(name, ok, vec![worst_id, worst_cell, min_second], vec![1e-4, 1.0, 0.0], 1e-4, details))
    })
}

/// Lax-Oleinik and discrete Hopf values agree within `10 h^2`.
pub fn check_hopf(prior: &Prior, grid: &Grid1D, x: f64, t: f64) -> CheckResult {
    guard(format!("hopf_formula[{}]", prior.label()), |name| {
        let (lax, hopf) = hopf_check_1d(prior, grid, x, t)?;
        let tol = 10.0 * grid.spacing().powi(2);
        let details = format!("x={x}, t={t}, {} nodes on [{}, {}]", grid.count, grid.lo, grid.hi);
        Ok(CheckResult::new(name, (lax - hopf).abs() <= tol, vec![hopf], vec![lax], tol, details))
    })
}

/// `grad S_0(y, t_k)` tends to the minimal-norm subgradient at `y`.
pub fn check_grad_s0_limit(prior: &Prior, y: &[f64]) -> CheckResult {
    guard(format!("grad_s0_limit[{}]", prior.label()), |name| {
        let t_seq: Vec<f64> = (0..8).map(|k| 10f64.powi(-k)).collect();
        let grads = grad_s0_limit_check(prior, y, &t_seq)?;
        let target = prior.min_subgradient(y)?;
        let gaps: Vec<f64> = grads.iter().map(|g| dist(g, &target)).collect();
        let tol = 1e-6 * (1.0 + norm(&target));
        let ok = *gaps.last().unwrap() <= tol;
        let details =
            format!("y={y:?}: distance to the minimal subgradient along t=1..1e-7: {gaps_s}", gaps_s = sci(&gaps));
        Ok(CheckResult::new(name, ok, grads.last().unwrap().clone(), target, tol, details))
    })
}

/// Tikhonov closed forms against quadrature, at random `(m, x, t, eps)` with `n = 1`.
pub fn check_tikhonov_closed_forms<R: Rng>(trials: usize, rng: &mut R) -> CheckResult {
    guard("tikhonov_closed_forms".to_string(), |name| {
        let (mut ok, mut worst) = (true, 0.0f64);
        for _ in 0..trials {
            let m = log_uniform(rng, 0.1, 10.0);
            let (x, p) = random_trial(rng, 1);
            let q = posterior_summary_quadrature(&Prior::quadratic(m)?, &x, p, &cfg())?;
            let c = s_eps_closed_quadratic(m, &x, p)?;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
            let err = rel(q.s_eps, c.s_eps).max(rel(q.u_pm[0], c.u_pm[0])).max(rel(q.mse, c.mse));
            ok &= err <= EQUALITY_TOL;
            worst = worst.max(err);
        }
        let details = format!("{trials} trials; largest relative error over S_eps, u_PM, MSE: {worst:.2e}");
        Ok(CheckResult::new(name, ok, vec![worst], vec![0.0], EQUALITY_TOL, details))
    })
}

/// Closed-form l1 posterior mean against quadrature on `x in [-100, 100]`; the
/// curves must be increasing, lie between the soft threshold and the identity,
/// and approach the soft threshold as `eps` shrinks.
pub fn check_soft_threshold_closed_form(t: f64, lambda: f64, eps_seq: &[f64], points: usize) -> CheckResult {
    guard("soft_threshold_closed_form".to_string(), |name| {
        let prior = Prior::weighted_l1(vec![lambda])?;
        let tol = 1e-8;
        let (mut ok, mut worst) = (true, 0.0f64);
        let mut sup_to_threshold = Vec::new();
        for &eps in eps_seq {
            let p = EstimatorParams::new(t, eps)?;
            let mut prev = f64::NEG_INFINITY;
            let mut sup = 0.0f64;
            for k in 0..points {
                let x = -100.0 + 200.0 * k as f64 / (points - 1) as f64;
                let c = u_pm_closed_l1(&[lambda], &[x], p)?.u_pm[0];
                let q = posterior_summary_quadrature(&prior, &[x], p, &cfg())?.u_pm[0];
                worst = worst.max((c - q).abs());
                ok &= (c - q).abs() <= tol && c > prev;
                prev = c;
                let soft = prior.prox(&[x], t)?[0];
                // between the soft threshold and the identity
                ok &= (c - soft) * x.signum() >= -tol && (x - c) * x.signum() >= -tol;
                sup = sup.max((c - soft).abs());
            }
            sup_to_threshold.push(sup);
        }
        let mut order: Vec<usize> = (0..eps_seq.len()).collect();
        order.sort_by(|&a, &b| eps_seq[b].total_cmp(&eps_seq[a]));
        ok &= order.windows(2).all(|w| sup_to_threshold[w[1]] <= sup_to_threshold[w[0]]);
        let details = format!(
            "t={t}, lambda={lambda}, {points} points per eps {eps_seq:?}; largest |closed - quadrature| {worst:.2e}; sup distance to soft threshold {sup_to_threshold_s}", sup_to_threshold_s = sci(&sup_to_threshold)
        );
        Ok(CheckResult::new(name, ok, vec![worst], vec![0.0], tol, details))
    })
}

/// Posterior means under Moreau-smoothed priors approach the ball posterior mean.
pub fn check_smoothing_limit(prior: &Prior, x: &[f64], t: f64, eps: f64, mu_seq: &[f64]) -> CheckResult {
    guard(format!("moreau_smoothing_limit[{}]", prior.label()), |name| {
        let p = EstimatorParams::new(t, eps)?;
        let target = posterior_summary_quadrature(prior, x, p, &cfg())?.u_pm;
        let seq = pm_via_moreau_smoothing(prior, x, p, mu_seq, &cfg())?;
        let gaps: Vec<f64> = seq.iter().map(|u| dist(u, &target)).collect();
        let decreasing = gaps.windows(2).all(|w| w[1] <= w[0] + INEQUALITY_SLACK);
        // leakage outside a ball scales like sqrt(mu)
        let cap = 10.0 * mu_seq.last().unwrap().sqrt();
        let ok = decreasing && *gaps.last().unwrap() <= cap;
        let details = format!("mu {mu_seq:?}: gaps {gaps_s}", gaps_s = sci(&gaps));
        Ok(CheckResult::new(name, ok, gaps, vec![cap], INEQUALITY_SLACK, details))
    })
}

/// Aggregated observed order of a residual family at the halving steps
/// [`RESIDUAL_STEPS`]: `log2` of consecutive ratios of summed residuals.
fn residual_orders(rows: &[[f64; 3]]) -> (f64, f64) {
    let s: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k]).sum()).collect();
    ((s[0] / s[1]).log2(), (s[1] / s[2]).log2())
}

fn order_result(name: &str, rows: &[[f64; 3]], what: &str) -> CheckResult {
    let (o1, o2) = residual_orders(rows);
    let total: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k]).sum()).collect();
    let ok = o1 >= MIN_ORDER && o2 >= MIN_ORDER;
    let details = format!(
        "{} points, {what}; summed residuals {total_s} at h {RESIDUAL_STEPS:?}; observed orders {o1:.3}, {o2:.3}",
        rows.len(),
        total_s = sci(&total)
    );
    CheckResult::new(name, ok, vec![o1, o2], vec![MIN_ORDER], 0.0, details)
}

/// First-order HJ residual of `S_0` at random points away from kinks.
pub fn check_hj_residual_order<R: Rng>(prior: &Prior, points: usize, rng: &mut R) -> CheckResult {
    guard(format!("hj_residual_order[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let hmax = RESIDUAL_STEPS[0];
        let mut rows = Vec::with_capacity(points);
        while rows.len() < points {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = rng.random_range(0.5..5.0);
            // S_0 is only differentiable off the threshold set |x_i| = t lambda_i
            if let Prior::WeightedL1 { lambda } = prior {
                let near = x.iter().zip(lambda).any(|(v, l)| {
                    let reach = 10.0 * hmax * (1.0 + l);
                    (v.abs() - t * l).abs() <= reach || v.abs() <= reach
                });
                if near {
                    continue;
                }
            }
            let mut r = [0.0; 3];
            for (k, &h) in RESIDUAL_STEPS.iter().enumerate() {
                r[k] = hj_residual(prior, &x, t, h)?;
            }
            rows.push(r);
        }
        // piecewise-linear-in-t branches have zero truncation error; keep the
        // family meaningful by requiring some residual above roundoff
        let coarse: f64 = rows.iter().map(|r| r[0]).sum();
        if coarse <= 1e-12 * points as f64 {
            let details =
                format!("{points} points; residuals at roundoff level ({coarse:.2e} summed), exact at every step");
            return Ok(CheckResult::new(name, true, vec![coarse], vec![0.0], 0.0, details));
        }
        Ok(order_result(name, &rows, "t in [0.5, 5]"))
    })
}

/// Viscous HJ residual of the quadrature `S_eps`.
pub fn check_viscous_residual_order<R: Rng>(prior: &Prior, points: usize, eps: f64, rng: &mut R) -> CheckResult {
    guard(format!("viscous_residual_order[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let mut rows = Vec::with_capacity(points);
        for _ in 0..points {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let t = rng.random_range(0.5..5.0);
            let mut r = [0.0; 3];
            for (k, &h) in RESIDUAL_STEPS.iter().enumerate() {
                r[k] = viscous_residual(prior, &x, t, eps, h, &cfg())?;
            }
            rows.push(r);
        }
        Ok(order_result(name, &rows, &format!("t in [0.5, 5], eps = {eps}")))
    })
}

/// Heat-equation residual of the quadrature `w_eps`.
pub fn check_heat_residual_order<R: Rng>(prior: &Prior, points: usize, eps: f64, rng: &mut R) -> CheckResult {
    guard(format!("heat_residual_order[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let mut rows = Vec::with_capacity(points);
        for _ in 0..points {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(0.5..5.0);
            let mut r = [0.0; 3];
            for (k, &h) in RESIDUAL_STEPS.iter().enumerate() {
                r[k] = heat_residual(prior, &x, t, eps, h, &cfg())?;
            }
            rows.push(r);
        }
        Ok(order_result(name, &rows, &format!("t in [0.5, 5], eps = {eps}")))
    })
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Monotonicity and convexity of `S_eps` in `(x, t, eps)` on sampled grids:
/// `t -> S - (n eps/2) ln t` and `eps -> S/eps - (n/2) ln eps` strictly
/// decreasing (the latter is `eps^{n/2} w_eps` increasing; `S - (n eps/2) ln eps`
/// itself is not monotone, e.g. for `J = 0`), `x -> |x|^2/2 - t S` strictly convex, `x -> u_PM` strictly
/// increasing (1D), and midpoint convexity of `(x,t) -> S - (n eps/2) ln t`.
pub fn check_s_eps_shape<R: Rng>(prior: &Prior, trials: usize, rng: &mut R) -> CheckResult {
    guard(format!("s_eps_shape[{}]", prior.label()), |name| {
        let n = trial_dim(prior);
        let nf = n as f64;
        let (mut mono_t, mut mono_eps, mut convex_k, mut incr_u, mut joint) = (true, true, true, true, true);
        for _ in 0..trials {
            let (x, p) = random_trial(rng, n);
            let f_t: Vec<f64> = (0..12)
                .map(|k| {
                    let t = p.t * 1.5f64.powi(k - 6);
                    summary(prior, &x, EstimatorParams { t, eps: p.eps }).map(|s| s.s_eps - 0.5 * nf * p.eps * t.ln())
                })
                .collect::<Result<_>>()?;
            mono_t &= strictly_decreasing(&f_t);
            let f_e: Vec<f64> = (0..12)
                .map(|k| {
                    let eps = p.eps * 1.5f64.powi(k - 6);
                    summary(prior, &x, EstimatorParams { t: p.t, eps }).map(|s| s.s_eps / eps - 0.5 * nf * eps.ln())
                })
                .collect::<Result<_>>()?;
            mono_eps &= strictly_decreasing(&f_e);

            // 1D slices along a random direction
            let mut d: Vec<f64> = (0..n).map(|_| gauss(rng)).collect();
            let dn = norm(&d);
            d.iter_mut().for_each(|v| *v /= dn);
            let step = 0.25 * (p.t * p.eps).sqrt().max(0.05);
            let line: Vec<PosteriorSummary> = (-10..=10)
                .map(|k| {
                    let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * k as f64 * b).collect();
                    summary(prior, &y, p)
                })
                .collect::<Result<_>>()?;
            let k_vals: Vec<f64> = line
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    0.5 * (step * (k as f64 - 10.0)).powi(2)
                        + step * (k as f64 - 10.0) * dot(&x, &d)
                        + 0.5 * dot(&x, &x)
                        - p.t * s.s_eps
                })
                .collect();
            convex_k &= k_vals.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] > 0.0);
            if n == 1 {
                incr_u &= line.windows(2).all(|w| (w[1].u_pm[0] - w[0].u_pm[0]) * d[0] > 0.0);
            }

            let (x2, p2) = random_trial(rng, n);
            let g = |x: &[f64], t: f64| {
                summary(prior, x, EstimatorParams { t, eps: p.eps }).map(|s| s.s_eps - 0.5 * nf * p.eps * t.ln())
            };
            let xm: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
            let tm = 0.5 * (p.t + p2.t);
            let (ga, gb, gm) = (g(&x, p.t)?, g(&x2, p2.t)?, g(&xm, tm)?);
            joint &= gm <= 0.5 * (ga + gb) + INEQUALITY_SLACK * (ga.abs() + gb.abs()).max(1.0);
        }
        let ok = mono_t && mono_eps && convex_k && incr_u && joint;
        let details = format!(
            "{trials} trials: t-monotone {mono_t}, eps-monotone {mono_eps}, K strictly convex {convex_k}, u_PM increasing {incr_u}, midpoint convex {joint}"
        );
        let flags = [mono_t, mono_eps, convex_k, incr_u, joint].map(|b| if b { 1.0 } else { 0.0 });
        Ok(CheckResult::new(name, ok, flags.to_vec(), vec![1.0; 5], INEQUALITY_SLACK, details))
    })
}

/// `w_eps(x, t) -> e^{-J(x)/eps}` as `t -> 0` at a point of `int dom J`,
/// compared in log form.
pub fn check_small_t_limit(prior: &Prior, x: &[f64], eps: f64) -> CheckResult {
    guard(format!("small_t_limit[{}]", prior.label()), |name| {
        let target = -prior.eval(x)? / eps;
        let mut gaps = Vec::new();
        for k in 0..7 {
            let t = 10f64.powi(-k);
            let s = summary(prior, x, EstimatorParams::new(t, eps)?)?;
            gaps.push((s.ln_w_eps - target).abs());
        }
        // the gap is O(t) but need not shrink monotonically for t near 1
        let tail = &gaps[2..];
        let ok = tail.windows(2).all(|w| w[1] <= w[0] + INEQUALITY_SLACK) && *gaps.last().unwrap() <= 1e-4;
        let details = format!("x={x:?}, eps={eps}: |ln w_eps + J/eps| along t=1..1e-6: {gaps_s}", gaps_s = sci(&gaps));
        Ok(CheckResult::new(name, ok, gaps, vec![target], 1e-4, details))
    })
}

/// One Gibbs setting compared against 2D quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPixelSetting {
    pub x: [f64; 2],
    pub t: f64,
    pub eps: f64,
    pub lambda: f64,
}

/// The reference setting followed by `extra` random ones.
pub fn two_pixel_settings<R: Rng>(extra: usize, rng: &mut R) -> Vec<TwoPixelSetting> {
    let mut v = vec![TwoPixelSetting { x: [100.0, 120.0], t: 20.0, eps: 20.0, lambda: 1.0 }];
    for _ in 0..extra {
        v.push(TwoPixelSetting {
            x: [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
            t: rng.random_range(1.0..30.0),
            eps: rng.random_range(1.0..30.0),
            lambda: rng.random_range(0.2..3.0),
        });
    }
    v
}

/// Gibbs sampler means (and optionally variances) against 2D quadrature,
/// within 3 Monte-Carlo standard errors, with `R-hat <= 1.05`. Setting `k`
/// uses sampler seed `cfg.seed + 1000 k`.
pub fn check_sampler_two_pixel(settings: &[TwoPixelSetting], cfg: &SamplerConfig, with_variance: bool) -> CheckResult {
    sampler_two_pixel_study(settings, cfg, with_variance).0
}

/// [`check_sampler_two_pixel`] together with the sampler output of every
/// setting that ran.
pub fn sampler_two_pixel_study(
    settings: &[TwoPixelSetting],
    cfg: &SamplerConfig,
    with_variance: bool,
) -> (CheckResult, Vec<McmcResult>) {
    let label = if with_variance { "sampler_two_pixel_variance" } else { "sampler_two_pixel_mean" };
    let mut runs = Vec::with_capacity(settings.len());
    let check = guard(label.to_string(), |name| {
        let (mut ok, mut worst_z, mut worst_rhat, mut worst_mse) = (true, 0.0f64, 0.0f64, f64::NEG_INFINITY);
        let mut lines = Vec::new();
        for (k, s) in settings.iter().enumerate() {
            let prior = Prior::anisotropic_tv(s.lambda, 2, 1)?;
            let p = EstimatorParams::new(s.t, s.eps)?;
            let q = posterior_expectations(&prior, &s.x, p, &QuadratureConfig::default(), 4, |y, out| {
                out[0] = y[0];
                out[1] = y[1];
                out[2] = y[0] * y[0];
                out[3] = y[1] * y[1];
            })?;
            let img = Image::new(2, 1, s.x.to_vec())?;
            let run_cfg = SamplerConfig { seed: cfg.seed.wrapping_add(1000 * k as u64), ..cfg.clone() };
            let r = posterior_mean_mcmc(&img, s.t, s.eps, s.lambda, &run_cfg)?;
            let (m, se) = (r.mean_image.pixels(), r.stderr_image.pixels());
            let mut zs = vec![(m[0] - q[0]) / se[0], (m[1] - q[1]) / se[1]];
            if with_variance {
                let (v, vse) = (r.variance_image.pixels(), r.variance_stderr_image.pixels());
                zs.push((v[0] - (q[2] - q[0] * q[0])) / vse[0]);
                zs.push((v[1] - (q[3] - q[1] * q[1])) / vse[1]);
                // E|y - mean|^2 <= n t eps
                let total_se = vse[0].hypot(vse[1]);
                let excess = (v[0] + v[1] - 2.0 * s.t * s.eps) / total_se;
                ok &= excess <= 3.0;
                worst_mse = worst_mse.max(excess);
            }
            let z = zs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            ok &= z <= 3.0 && r.rhat_max <= 1.05;
            worst_z = worst_z.max(z);
            worst_rhat = worst_rhat.max(r.rhat_max);
            lines.push(format!("{:?}: |z| {:.2}, R-hat {:.4}", s.x, z, r.rhat_max));
            runs.push(r);
        }
        let mut details = format!("{} settings; {}", settings.len(), lines.join("; "));
        if with_variance {
            details += &format!("; largest (variance sum - 2 t eps)/se = {worst_mse:.2}");
        }
        Ok(CheckResult::new(name, ok, vec![worst_z, worst_rhat], vec![3.0, 1.05], 3.0, details))
    });
    (check, runs)
}

/// MAP reconstructions show far more exactly-flat edges than the posterior mean.
pub fn check_staircasing(
    clean: &Image,
    sigma: f64,
    t: f64,
    eps: f64,
    lambda: f64,
    sampler_cfg: &SamplerConfig,
) -> CheckResult {
    staircasing_study(clean, sigma, t, eps, lambda, sampler_cfg).0
}

/// [`check_staircasing`] together with the sampler output. The noise seed is
/// the sampler seed.
pub fn staircasing_study(
    clean: &Image,
    sigma: f64,
    t: f64,
    eps: f64,
    lambda: f64,
    sampler_cfg: &SamplerConfig,
) -> (CheckResult, Option<McmcResult>) {
    let mut run = None;
    let check = guard("staircasing".to_string(), |name| {
        if sigma == 0.0 && lambda == 0.0 {
            return Ok(CheckResult::new(
                name,
                true,
                vec![],
                vec![],
                0.0,
                "degenerate: no noise and no regularisation; skipped",
            ));
        }
        let noisy = add_gaussian_noise(clean, NoiseSpec { sigma, seed: sampler_cfg.seed })?;
        let map = rof_map(&noisy, t, lambda)?;
        let pm = posterior_mean_mcmc(&noisy, t, eps, lambda, sampler_cfg)?;
        let pf_map = plateau_fraction(&map, DEFAULT_PLATEAU_TOL);
        let pf_pm = plateau_fraction(&pm.mean_image, DEFAULT_PLATEAU_TOL);
        let ok = pf_map > STAIRCASE_FACTOR * pf_pm;
        let details = format!(
            "{}x{}, sigma={sigma}, t={t}, eps={eps}, lambda={lambda}, {} sweeps x {} chains: plateau MAP {pf_map:.4}, PM {pf_pm:.4}; PSNR noisy {:.2} dB, MAP {:.2} dB, PM {:.2} dB; R-hat {:.4}",
            clean.width(),
            clean.height(),
            sampler_cfg.sweeps,
            sampler_cfg.chains,
            psnr(&noisy, clean)?,
            psnr(&map, clean)?,
            psnr(&pm.mean_image, clean)?,
            pm.rhat_max
        );
        run = Some(pm);
        Ok(CheckResult::new(name, ok, vec![pf_map, pf_pm], vec![STAIRCASE_FACTOR], 0.0, details))
    });
    (check, run)
}

type Job = Box<dyn Fn(&mut ChaCha8Rng) -> CheckResult + Send + Sync>;

fn job(f: impl Fn(&mut ChaCha8Rng) -> CheckResult + Send + Sync + 'static) -> Job {
    Box::new(f)
}

fn closed_form_priors() -> (Prior, Prior) {
    (Prior::quadratic(1.0).expect("valid").with_dim(Some(1)), Prior::weighted_l1(vec![2.0]).expect("valid"))
}

fn suite_jobs(suite: Suite) -> Vec<Job> {
    let bound_priors = || {
        vec![
            Prior::zero().with_dim(Some(2)),
            Prior::quadratic(1.0).expect("valid").with_dim(Some(2)),
            Prior::weighted_l1(vec![2.0, 0.5]).expect("valid"),
        ]
    };
    match suite {
        Suite::Core => {
            let (q, l1) = closed_form_priors();
            let ball = Prior::ball(1.0).expect("valid").with_dim(Some(2));
            let ball1 = Prior::ball(1.0).expect("valid").with_dim(Some(1));
            let x_grid: Vec<f64> = (0..=100).map(|k| -5.0 + 0.1 * k as f64).collect();
            let mut jobs: Vec<Job> = vec![
                job(|rng| check_tikhonov_closed_forms(200, rng)),
                job(|_| check_soft_threshold_closed_form(1.25, 2.0, &[1.0, 0.5, 0.25, 0.1, 0.025], 201)),
            ];
            for prior in [Prior::zero().with_dim(Some(1)), q.clone(), l1.clone()] {
                let pr = prior.clone();
                jobs.push(job(move |rng| check_representation(&pr, 50, rng)));
            }
            for (prior, t, eps) in [(q.clone(), 1.0, 1.0), (l1.clone(), 1.25, 0.5)] {
                let xg = x_grid.clone();
                jobs.push(job(move |_| check_moreau_decomposition_1d(&prior, &xg, t, eps)));
            }
            for prior in [q.clone(), l1.clone()] {
                jobs.push(job(move |rng| check_bregman_random(&prior, 20, rng)));
            }
            jobs.push(job(move |rng| check_topology(&ball, 200, rng)));
            let grid = Grid1D::new(-10.0, 10.0, 4001).expect("valid grid");
            for (prior, x, t) in [(q.clone(), 2.0, 1.0), (Prior::weighted_l1(vec![1.0]).expect("valid"), 0.5, 1.0)] {
                let g = grid.clone();
                jobs.push(job(move |_| check_hopf(&prior, &g, x, t)));
            }
            for (prior, y) in
                [(q.clone(), vec![1.0]), (l1.clone(), vec![0.0]), (Prior::ball(1.0).expect("valid"), vec![0.5, 0.0])]
            {
                jobs.push(job(move |_| check_grad_s0_limit(&prior, &y)));
            }
            jobs.push(job(move |_| check_smoothing_limit(&ball1, &[3.0], 1.0, 1.0, &[0.5, 0.1, 0.02, 1e-3])));
            jobs
        }
        Suite::Bounds => {
            let mut jobs: Vec<Job> = Vec::new();
            for prior in bound_priors() {
                let (a, b, c, d, e) = (prior.clone(), prior.clone(), prior.clone(), prior.clone(), prior);
                jobs.push(job(move |rng| check_mse_bound(&a, 500, rng)));
                jobs.push(job(move |rng| check_map_pm_distance(&b, 500, rng)));
                jobs.push(job(move |rng| check_nonexpansive_monotone(&c, 500, rng)));
                jobs.push(job(move |rng| check_t_to_zero_random(&d, 500, rng)));
                jobs.push(job(move |rng| check_monotonicity_inequality(&e, 100, rng)));
            }
            let (q, l1) = closed_form_priors();
            let xs: Vec<Vec<f64>> = (0..=100).map(|k| vec![-5.0 + 0.1 * k as f64]).collect();
            for prior in [q, l1] {
                let xs = xs.clone();
                jobs.push(job(move |_| check_eps_to_zero(&prior, &xs, &EPS_LIMIT_TS, &EPS_LIMIT_SEQ)));
            }
            jobs
        }
        Suite::Pde => {
            let (q, l1) = closed_form_priors();
            let mut jobs: Vec<Job> = Vec::new();
            for prior in [q.clone(), l1.clone()] {
                let (a, b, c) = (prior.clone(), prior.clone(), prior);
                jobs.push(job(move |rng| check_hj_residual_order(&a, 50, rng)));
                jobs.push(job(move |rng| check_viscous_residual_order(&b, 50, 1.0, rng)));
                jobs.push(job(move |rng| check_heat_residual_order(&c, 50, 1.0, rng)));
            }
            for prior in [
                Prior::zero().with_dim(Some(1)),
                q.clone(),
                l1.clone(),
                Prior::weighted_l1(vec![2.0, 0.5]).expect("valid"),
            ] {
                jobs.push(job(move |rng| check_s_eps_shape(&prior, 20, rng)));
            }
            for (prior, x) in [(q, vec![1.5]), (l1, vec![0.7])] {
                jobs.push(job(move |_| check_small_t_limit(&prior, &x, 1.0)));
            }
            jobs
        }
        Suite::Imaging => {
            vec![
                job(|rng| {
                    let (settings, cfg) = two_pixel_setup(rng);
                    check_sampler_two_pixel(&settings, &cfg, false)
                }),
                job(|rng| {
                    let settings = two_pixel_settings(0, rng);
                    check_sampler_two_pixel(
                        &settings,
                        &SamplerConfig { seed: rng.random(), ..SamplerConfig::default() },
                        true,
                    )
                }),
                job(|rng| {
                    let (clean, cfg) = staircase_setup(rng);
                    check_staircasing(&clean, 20.0, 20.0, 20.0, 1.0, &cfg)
                }),
            ]
        }
    }
}

fn two_pixel_setup(rng: &mut ChaCha8Rng) -> (Vec<TwoPixelSetting>, SamplerConfig) {
    let settings = two_pixel_settings(9, rng);
    (settings, SamplerConfig { seed: rng.random(), ..SamplerConfig::default() })
}

fn staircase_setup(rng: &mut ChaCha8Rng) -> (Image, SamplerConfig) {
    (crate::tv_imaging::synthetic_phantom(64, 64), SamplerConfig { seed: rng.random(), ..SamplerConfig::default() })
}

/// Settings and sampler configuration of the two-pixel mean check of the
/// imaging suite for report seed `seed`.
pub fn imaging_two_pixel_setup(seed: u64) -> (Vec<TwoPixelSetting>, SamplerConfig) {
    two_pixel_setup(&mut ChaCha8Rng::seed_from_u64(job_seed(seed, Suite::Imaging, 0)))
}

/// Clean image and sampler configuration of the staircasing check of the
/// imaging suite for report seed `seed` (sigma = 20, t = eps = 20, lambda = 1).
pub fn imaging_staircase_setup(seed: u64) -> (Image, SamplerConfig) {
    staircase_setup(&mut ChaCha8Rng::seed_from_u64(job_seed(seed, Suite::Imaging, 2)))
}

/// `t` values of the vanishing-viscosity check.
pub const EPS_LIMIT_TS: [f64; 5] = [0.5, 1.0, 1.25, 2.0, 5.0];
/// Viscosities of the vanishing-viscosity check.
pub const EPS_LIMIT_SEQ: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

fn job_seed(seed: u64, suite: Suite, index: usize) -> u64 {
    let tag = match suite {
        Suite::Core => 1u64,
        Suite::Bounds => 2,
        Suite::Pde => 3,
        Suite::Imaging => 4,
    };
    seed ^ (tag << 56) ^ ((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the checks of one suite in parallel; result order is fixed.
pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    suite_jobs(suite)
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(job_seed(seed, suite, i));
            f(&mut rng)
        })
        .collect()
}

/// Runs the given suites (or [`Suite::DEFAULT`] when empty) into one report.
pub fn run(suites: &[Suite], seed: u64) -> VerificationReport {
    let chosen: &[Suite] = if suites.is_empty() { &Suite::DEFAULT } else { suites };
    let checks = chosen.iter().flat_map(|&s| run_suite(s, seed)).collect();
    VerificationReport { checks, seed, timestamp: chrono::Utc::now().to_rfc3339() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn mse_bound_examples() {
        let q = Prior::quadratic(1.0).unwrap();
        let s = s_eps_closed_quadratic(1.0, &[0.3], EstimatorParams::new(1.0, 1.0).unwrap()).unwrap();
        assert!((s.mse - 0.5).abs() < 1e-15);
        assert!(check_mse_bound(&q.with_dim(Some(1)), 20, &mut rng()).passed);
        assert!(check_mse_bound(&Prior::zero().with_dim(Some(1)), 20, &mut rng()).passed);
        let c = check_mse_bound(&Prior::weighted_l1(vec![2.0]).unwrap(), 200, &mut rng());
        assert!(c.passed, "{}", c.details);
        assert!(c.observed[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn map_pm_distance_examples() {
        let c = check_map_pm_distance(&Prior::quadratic(1.0).unwrap().with_dim(Some(1)), 20, &mut rng());
        assert!(c.passed && c.observed[0] == 0.0);
        let c = check_map_pm_distance(&Prior::zero().with_dim(Some(3)), 20, &mut rng());
        assert!(c.passed && c.observed[0] == 0.0);
        let p = EstimatorParams::new(1.25, 0.5).unwrap();
        let u = u_pm_closed_l1(&[2.0], &[1.0], p).unwrap().u_pm[0];
        assert!((u - 0.0).powi(2) <= 0.625);
    }

    #[test]
    fn nonexpansive_examples() {
        let c = check_nonexpansive_monotone(&Prior::zero().with_dim(Some(2)), 30, &mut rng());
        assert!(c.passed && (c.observed[1] - 1.0).abs() < 1e-9);
        let c = check_nonexpansive_monotone(&Prior::quadratic(2.0).unwrap().with_dim(Some(1)), 30, &mut rng());
        assert!(c.passed && c.observed[1] < 1.0);
        assert!(check_nonexpansive_monotone(&Prior::weighted_l1(vec![2.0]).unwrap(), 100, &mut rng()).passed);
    }

    #[test]
    fn t_to_zero_examples() {
        let ts = [1.0, 0.1, 0.01, 1e-3, 1e-4];
        let ds = vec![vec![1.0]; 5];
        for (prior, x) in [
            (Prior::zero().with_dim(Some(1)), 2.0),
            (Prior::quadratic(1.0).unwrap(), 2.0),
            (Prior::weighted_l1(vec![2.0]).unwrap(), 0.3),
        ] {
            let c = check_t_to_zero(&prior, &[x], 1.0, &ts, &ds);
            assert!(c.passed, "{}: {}", c.name, c.details);
        }
        let c = check_t_to_zero(&Prior::zero(), &[1.0], 1.0, &ts, &ds[..2]);
        assert!(!c.passed && c.details.starts_with("numerical failure"));
    }

    #[test]
    fn eps_to_zero_examples() {
        let xs: Vec<Vec<f64>> = (0..=20).map(|k| vec![-5.0 + 0.5 * k as f64]).collect();
        let c = check_eps_to_zero(&Prior::zero().with_dim(Some(1)), &xs, &[1.0], &[1.0, 0.1]);
        assert!(c.passed && c.observed.iter().all(|v| *v == 0.0));
        let c = check_eps_to_zero(&Prior::quadratic(1.0).unwrap(), &xs, &[1.0], &[1.0, 0.1, 0.01]);
        // |S_eps - S_0| = (eps/2) ln 2
        assert!((c.observed[0] - 0.5 * 2f64.ln()).abs() < 1e-12, "{:?}", c.observed);
        assert!(c.passed);
        let c = check_eps_to_zero(&Prior::weighted_l1(vec![2.0]).unwrap(), &xs, &[1.25], &[1.0, 0.5, 0.25, 0.1, 0.025]);
        assert!(c.passed, "{}", c.details);
    }

    #[test]
    fn representation_examples() {
        let p = EstimatorParams::new(1.0, 1.0).unwrap();
        let g = mean_min_subgradient(&Prior::quadratic(1.0).unwrap(), &[2.0], p, &cfg()).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
        let c = check_representation(&Prior::weighted_l1(vec![2.0]).unwrap(), 10, &mut rng());
        assert!(c.passed, "{}", c.details);
        let c = check_representation(&Prior::zero().with_dim(Some(1)), 5, &mut rng());
        assert!(c.passed, "{}", c.details);
    }

    #[test]
    fn monotonicity_examples() {
        for prior in
            [Prior::zero().with_dim(Some(1)), Prior::quadratic(1.0).unwrap(), Prior::weighted_l1(vec![2.0]).unwrap()]
        {
            let c = check_monotonicity_inequality(&prior, 30, &mut rng());
            assert!(c.passed, "{}: {}", c.name, c.details);
        }
    }

    #[test]
    fn bregman_examples() {
        let grid = Grid1D::new(-1.0, 6.0, 7001).unwrap();
        let c = check_bregman_risk_1d(&Prior::quadratic(1.0).unwrap(), 3.0, 1.0, 1.0, &grid);
        assert!(c.passed && (c.observed[0] - 1.5).abs() <= 1e-3, "{}", c.details);
        let c = check_bregman_risk_1d(&Prior::zero().with_dim(Some(1)), 3.0, 1.0, 1.0, &grid);
        assert!(c.passed && (c.observed[0] - 3.0).abs() <= 1e-3);
        let c = check_bregman_risk_1d(&Prior::weighted_l1(vec![2.0]).unwrap(), 5.0, 1.25, 0.5, &grid);
        assert!(c.passed && (c.observed[0] - 2.5).abs() <= 1e-3, "{}", c.details);
        let narrow = Grid1D::new(3.0, 6.0, 301).unwrap();
        assert!(!check_bregman_risk_1d(&Prior::quadratic(1.0).unwrap(), 3.0, 1.0, 1.0, &narrow).passed);
    }

    #[test]
    fn moreau_decomposition_examples() {
        let xs: Vec<f64> = (0..=20).map(|k| -5.0 + 0.5 * k as f64).collect();
        for (prior, t, eps) in [
            (Prior::zero().with_dim(Some(1)), 1.0, 1.0),
            (Prior::quadratic(1.0).unwrap(), 1.0, 1.0),
            (Prior::weighted_l1(vec![2.0]).unwrap(), 1.25, 0.5),
        ] {
            let c = check_moreau_decomposition_1d(&prior, &xs, t, eps);
            assert!(c.passed, "{}: {}", c.name, c.details);
        }
    }

    #[test]
    fn topology_examples() {
        let c = check_topology(&Prior::ball(1.0).unwrap().with_dim(Some(2)), 10, &mut rng());
        assert!(c.passed, "{}", c.details);
        let c = check_topology(&Prior::zero(), 1, &mut rng());
        assert!(!c.passed);
    }

    #[test]
    fn hopf_and_gradient_limit() {
        let grid = Grid1D::new(-10.0, 10.0, 4001).unwrap();
        assert!(check_hopf(&Prior::quadratic(1.0).unwrap(), &grid, 2.0, 1.0).passed);
        assert!(check_hopf(&Prior::zero().with_dim(Some(1)), &grid, 3.0, 2.0).passed);
        assert!(check_grad_s0_limit(&Prior::quadratic(1.0).unwrap(), &[1.0]).passed);
        assert!(check_grad_s0_limit(&Prior::ball(1.0).unwrap(), &[0.5, 0.0]).passed);
    }

    #[test]
    fn residual_orders_detect_convergence() {
        let rows = [[4e-4, 1e-4, 2.5e-5], [8e-4, 2e-4, 5e-5]];
        let (a, b) = residual_orders(&rows);
        assert!((a - 2.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        let c = order_result("x", &[[1e-4, 1e-4, 1e-4]], "flat");
        assert!(!c.passed);
    }

    #[test]
    fn pde_checks_pass_on_small_samples() {
        let q = Prior::quadratic(1.0).unwrap();
        assert!(check_viscous_residual_order(&q, 5, 1.0, &mut rng()).passed);
        assert!(check_heat_residual_order(&q, 5, 1.0, &mut rng()).passed);
        let c = check_hj_residual_order(&Prior::weighted_l1(vec![2.0]).unwrap(), 10, &mut rng());
        assert!(c.passed, "{}", c.details);
        let c = check_s_eps_shape(&Prior::weighted_l1(vec![2.0]).unwrap(), 5, &mut rng());
        assert!(c.passed, "{}", c.details);
        let c = check_small_t_limit(&q, &[1.5], 1.0);
        assert!(c.passed, "{}", c.details);
    }

    #[test]
    fn report_json_round_trip_keeps_infinities() {
        let r = VerificationReport {
            checks: vec![CheckResult::new("psnr", true, vec![f64::INFINITY, 1.5], vec![f64::NEG_INFINITY], 0.0, "")],
            seed: 7,
            timestamp: "2026-01-01T00:00:00+00:00".into(),
        };
        let s = r.to_json();
        assert!(s.contains("\"inf\"") && s.contains("\"-inf\""));
        assert_eq!(VerificationReport::from_json(&s).unwrap(), r);
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }
}
