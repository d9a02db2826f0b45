//! Posterior-mean side: `S_eps = -eps ln w_eps`, where `w_eps` solves the heat
//! equation with data `exp(-J/eps)`, together with `u_PM = x - t grad S_eps`,
//! the MSE, `K_eps = |x|^2/2 - t S_eps` and its discrete conjugate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::first_order_hj::{check_t, envelope, Grid1D};
use crate::priors::Prior;
use crate::quadrature::{integrate, MoreauSmoothed, Potential};
use crate::special::{erfc, erfcx, ln_add_exp, FRAC_1_SQRT_PI};

pub use crate::quadrature::QuadratureConfig;

/// Time `t > 0` and noise level `eps >= 0`; `eps = 0` selects the MAP path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub t: f64,
    pub eps: f64,
}

impl EstimatorParams {
    pub fn new(t: f64, eps: f64) -> Result<Self> {
        check_t(t)?;
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(invalid(format!("eps must be nonnegative and finite, got {eps}")));
        }
        Ok(Self { t, eps })
    }

    pub fn is_map(&self) -> bool {
        self.eps == 0.0
    }

    fn require_viscous(&self) -> Result<()> {
        Self::new(self.t, self.eps)?;
        if self.is_map() {
            return Err(invalid("eps = 0 selects the MAP estimate; posterior quantities need eps > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// `w_eps(x,t)`, in `(0, 1]`; may underflow to 0 where `ln_w_eps` does not.
    pub w_eps: f64,
    pub ln_w_eps: f64,
    pub s_eps: f64,
    pub u_pm: Vec<f64>,
    pub mse: f64,
    pub grad_s_eps: Vec<f64>,
    pub laplacian_s_eps: f64,
}

impl PosteriorSummary {
    /// Builds the summary from `S_eps`, the gradient and the MSE. `u_pm` and the
    /// Laplacian are derived so that both moment identities hold exactly.
    fn assemble(x: &[f64], p: EstimatorParams, s_eps: f64, grad: Vec<f64>, mse: f64) -> Self {
        let n = x.len() as f64;
        let u_pm = x.iter().zip(&grad).map(|(a, g)| a - p.t * g).collect();
        let ln_w = -s_eps / p.eps;
        Self {
            w_eps: ln_w.exp(),
            ln_w_eps: ln_w,
            s_eps,
            u_pm,
            mse,
            grad_s_eps: grad,
            laplacian_s_eps: n / p.t - mse / (p.t * p.t * p.eps),
        }
    }
}

fn summary_quadrature<P: Potential + ?Sized>(
    pot: &P,
    x: &[f64],
    p: EstimatorParams,
    cfg: &QuadratureConfig,
) -> Result<PosteriorSummary> {
    let n = x.len();
    let (mode, s0) = pot.envelope(x, p.t)?;
    let sigma = (p.t * p.eps).sqrt();
    let mom = integrate(pot, x, p.t, p.eps, &mode, cfg, n + 1, |y, out| {
        let mut r2 = 0.0;
        for i in 0..n {
            let z = (y[i] - mode[i]) / sigma;
            out[i] = z;
            r2 += z * z;
        }
        out[n] = r2;
    })?;
    let offset: Vec<f64> = mom.mean[..n].iter().map(|m| m * sigma).collect();
    let spread = mom.mean[n] * sigma * sigma;
    let mse = (spread - offset.iter().map(|o| o * o).sum::<f64>()).max(0.0);
    let s_eps = s0 - p.eps * mom.mass.ln() + 0.5 * n as f64 * p.eps * (2.0 * std::f64::consts::PI * p.t * p.eps).ln();
    let grad = (0..n).map(|i| (x[i] - mode[i] - offset[i]) / p.t).collect();
    Ok(PosteriorSummary::assemble(x, p, s_eps, grad, mse))
}

/// All posterior quantities by adaptive quadrature (dimension at most 3).
pub fn posterior_summary_quadrature(
    prior: &Prior,
    x: &[f64],
    params: EstimatorParams,
    cfg: &QuadratureConfig,
) -> Result<PosteriorSummary> {
    prior.check_dim(x.len())?;
    params.require_viscous()?;
    summary_quadrature(prior, x, params, cfg)
}

/// Posterior expectations of `m` user features `f(y, out)`, by quadrature.
pub fn posterior_expectations<F>(
    prior: &Prior,
    x: &[f64],
    params: EstimatorParams,
    cfg: &QuadratureConfig,
    m: usize,
    features: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    prior.check_dim(x.len())?;
    params.require_viscous()?;
    let e = envelope(prior, x, params.t)?;
    Ok(integrate(prior, x, params.t, params.eps, &e.minimizer, cfg, m, features)?.mean)
}

/// Closed-form summary for `J = (m/2)|y|^2`; `m = 0` is the zero prior.
pub fn s_eps_closed_quadratic(m: f64, x: &[f64], params: EstimatorParams) -> Result<PosteriorSummary> {
    params.require_viscous()?;
    if !(m >= 0.0) || !m.is_finite() {
        return Err(invalid(format!("m must be nonnegative, got {m}")));
    }
    let (t, eps) = (params.t, params.eps);
    let n = x.len() as f64;
    let q = 1.0 + m * t;
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    let s_eps = m * norm2 / (2.0 * q) + 0.5 * n * eps * q.ln();
    let grad = x.iter().map(|v| m * v / q).collect();
    let mut s = PosteriorSummary::assemble(x, params, s_eps, grad, n * t * eps / q);
    s.u_pm = x.iter().map(|v| v / q).collect();
    s.laplacian_s_eps = n * m / q;
    Ok(s)
}

/// `ln L(z)` with `L(z) = exp(z^2) erfc(z) / 2`.
fn ln_l(z: f64) -> f64 {
    if z >= 0.0 {
        (0.5 * erfcx(z)).ln()
    } else {
        z * z + (0.5 * erfc(z)).ln()
    }
}

/// One coordinate of the weighted-l1 posterior: returns `(S_i, u_i, du_i/dx_i)`.
fn l1_component(x: f64, lambda: f64, t: f64, eps: f64) -> (f64, f64, f64) {
    let s = (2.0 * t * eps).sqrt();
    let tl = t * lambda;
    // side with x' = +x and x' = -x; each carries a = eps ln L(z) - x^2/2t
    let side = |xs: f64| -> (f64, f64, f64) {
        let z = (xs + tl) / s;
        let a = if z >= 0.0 {
            eps * (0.5 * erfcx(z)).ln() - x * x / (2.0 * t)
        } else {
            xs * lambda + 0.5 * tl * lambda + eps * (0.5 * erfc(z)).ln()
        };
        // d ln L / dz = 2z - 1/(sqrt(pi) L)
        let dlnl = 2.0 * z - FRAC_1_SQRT_PI * (-ln_l(z)).exp();
        (z, a, dlnl)
    };
    let (_, a_p, dl_p) = side(x);
    let (_, a_m, dl_m) = side(-x);
    let s_i = -eps * ln_add_exp(a_p / eps, a_m / eps);
    let d = (a_p - a_m) / eps;
    let half = 0.5 * d;
    let u = x + tl * half.tanh();
    let sech2 = if half.abs() > 350.0 { 0.0 } else { 1.0 / half.cosh().powi(2) };
    let dd_dx = (dl_p + dl_m) / s;
    let du = 1.0 + tl * 0.5 * sech2 * dd_dx;
    (s_i, u, du)
}

/// Closed-form summary for `J(y) = sum lambda_i |y_i|`, evaluated through the
/// scaled complementary error function so it stays finite for large `|x|`.
///
/// The mean is `u_i = x_i + t lambda_i (L+ - L-)/(L+ + L-)` with
/// `L+- = L((+-x_i + t lambda_i)/sqrt(2 t eps))`, the derivative of `S_eps`.
pub fn u_pm_closed_l1(lambda: &[f64], x: &[f64], params: EstimatorParams) -> Result<PosteriorSummary> {
    params.require_viscous()?;
    if lambda.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: lambda.len(), got: x.len() });
    }
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(invalid("lambda entries must be positive"));
    }
    let (t, eps) = (params.t, params.eps);
    let mut s_eps = 0.0;
    let mut u = Vec::with_capacity(x.len());
    let mut div = 0.0;
    for (&xi, &li) in x.iter().zip(lambda) {
        let (s_i, u_i, du_i) = l1_component(xi, li, t, eps);
        s_eps += s_i;
        u.push(u_i);
        div += du_i;
    }
    let grad = x.iter().zip(&u).map(|(a, b)| (a - b) / t).collect();
    let mut s = PosteriorSummary::assemble(x, params, s_eps, grad, t * eps * div);
    s.u_pm = u;
    s.laplacian_s_eps = (x.len() as f64 - div) / t;
    Ok(s)
}

/// Closed form when the prior has one (Zero, Quadratic, WeightedL1), quadrature
/// otherwise.
pub fn posterior_summary(
    prior: &Prior,
    x: &[f64],
    params: EstimatorParams,
    cfg: &QuadratureConfig,
) -> Result<PosteriorSummary> {
    prior.check_dim(x.len())?;
    match prior {
        Prior::Zero { .. } => s_eps_closed_quadratic(0.0, x, params),
        Prior::Quadratic { m, .. } => s_eps_closed_quadratic(*m, x, params),
        Prior::WeightedL1 { lambda } => u_pm_closed_l1(lambda, x, params),
        _ => posterior_summary_quadrature(prior, x, params, cfg),
    }
}

/// `u_MAP` when `eps = 0`, `u_PM` otherwise.
pub fn estimate(prior: &Prior, x: &[f64], params: EstimatorParams, cfg: &QuadratureConfig) -> Result<Vec<f64>> {
    if params.is_map() {
        check_t(params.t)?;
        prior.prox(x, params.t)
    } else {
        posterior_summary(prior, x, params, cfg).map(|s| s.u_pm)
    }
}

/// `K_eps(x,t) = |x|^2/2 - t S_eps(x,t)`.
pub fn k_eps(prior: &Prior, x: &[f64], params: EstimatorParams, cfg: &QuadratureConfig) -> Result<f64> {
    let s = posterior_summary(prior, x, params, cfg)?;
    Ok(0.5 * x.iter().map(|v| v * v).sum::<f64>() - params.t * s.s_eps)
}

/// Discrete conjugate `K_eps*(y) = max_x (x y - K_eps(x))` over a fixed grid,
/// with `K_eps` tabulated once.
#[derive(Clone, Debug)]
pub struct KConjugate1d {
    grid: Grid1D,
    k: Vec<f64>,
}

impl KConjugate1d {
    pub fn new(prior: &Prior, params: EstimatorParams, grid: &Grid1D, cfg: &QuadratureConfig) -> Result<Self> {
        prior.check_dim(1)?;
        let k = grid.values.iter().map(|&x| k_eps(prior, &[x], params, cfg)).collect::<Result<_>>()?;
        Ok(Self { grid: grid.clone(), k })
    }

    /// Value and maximiser; the maximum is sharpened by a parabola through the
    /// best node and its neighbours.
    pub fn eval(&self, y: f64) -> Result<(f64, f64)> {
        let g = &self.grid.values;
        let f = |i: usize| g[i] * y - self.k[i];
        let mut best = 0;
        for i in 1..g.len() {
            if f(i) > f(best) {
                best = i;
            }
        }
        if best == 0 || best == g.len() - 1 {
            return Err(Error::EndpointArgmax { what: "conjugate of K_eps" });
        }
        let (fm, f0, fp) = (f(best - 1), f(best), f(best + 1));
        let curv = fm - 2.0 * f0 + fp;
        let h = self.grid.spacing();
        if curv < 0.0 {
            let s = 0.5 * (fm - fp) / curv;
            Ok((f0 - 0.25 * (fm - fp) * s, g[best] + s * h))
        } else {
            Ok((f0, g[best]))
        }
    }
}

pub fn k_eps_conjugate_1d(
    prior: &Prior,
    y: f64,
    params: EstimatorParams,
    grid: &Grid1D,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    KConjugate1d::new(prior, params, grid, cfg)?.eval(y).map(|v| v.0)
}

/// Posterior means under the smoothed priors `y -> S_0(y, mu_k)`, one per `mu_k`.
pub fn pm_via_moreau_smoothing(
    prior: &Prior,
    x: &[f64],
    params: EstimatorParams,
    mu_seq: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<Vec<f64>>> {
    prior.check_dim(x.len())?;
    params.require_viscous()?;
    mu_seq
        .iter()
        .map(|&mu| {
            check_t(mu)?;
            summary_quadrature(&MoreauSmoothed { prior, mu }, x, params, cfg).map(|s| s.u_pm)
        })
        .collect()
}

/// Posterior mean of the minimal-norm subgradient of `J`; equals
/// `grad S_eps` whenever `dom J` is the whole space.
pub fn mean_min_subgradient(
    prior: &Prior,
    x: &[f64],
    params: EstimatorParams,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    if !prior.has_full_domain() {
        return Err(invalid("mean minimal subgradient needs a prior with full domain"));
    }
    let n = x.len();
    prior.check_dim(n)?;
    params.require_viscous()?;
    let mode = prior.prox(x, params.t)?;
    let g0 = prior.min_subgradient(&mode)?;
    let mean = posterior_expectations(prior, x, params, cfg, n, |y, out| {
        let g = prior.min_subgradient(y).expect("full-domain prior");
        for i in 0..n {
            out[i] = g[i] - g0[i];
        }
    })?;
    Ok(mean.iter().zip(&g0).map(|(a, b)| a + b).collect())
}

/// `S_eps` by quadrature only.
pub fn s_eps_quadrature(prior: &Prior, x: &[f64], params: EstimatorParams, cfg: &QuadratureConfig) -> Result<f64> {
    posterior_summary_quadrature(prior, x, params, cfg).map(|s| s.s_eps)
}

fn central_differences(
    f: &dyn Fn(&[f64], f64) -> Result<f64>,
    x: &[f64],
    t: f64,
    h: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    if !(h > 0.0) || h >= t {
        return Err(invalid("finite-difference step must lie in (0, t)"));
    }
    let c = f(x, t)?;
    let dt = (f(x, t + h)? - f(x, t - h)?) / (2.0 * h);
    let mut grad = Vec::with_capacity(x.len());
    let mut lap = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp, t)?;
        xp[i] = x[i] - h;
        let dn = f(&xp, t)?;
        xp[i] = x[i];
        grad.push((up - dn) / (2.0 * h));
        lap += (up - 2.0 * c + dn) / (h * h);
    }
    Ok((dt, grad, lap))
}

/// `|dS/dt + |grad S|^2/2 - (eps/2) lap S|` for the quadrature `S_eps`, every
/// derivative by central differences of step `h`.
pub fn viscous_residual(prior: &Prior, x: &[f64], t: f64, eps: f64, h: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let f = |x: &[f64], t: f64| s_eps_quadrature(prior, x, EstimatorParams::new(t, eps)?, cfg);
    let (dt, grad, lap) = central_differences(&f, x, t, h)?;
    Ok((dt + 0.5 * grad.iter().map(|g| g * g).sum::<f64>() - 0.5 * eps * lap).abs())
}

/// `|dw/dt - (eps/2) lap w|` for the quadrature `w_eps`, by central differences.
pub fn heat_residual(prior: &Prior, x: &[f64], t: f64, eps: f64, h: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let f =
        |x: &[f64], t: f64| posterior_summary_quadrature(prior, x, EstimatorParams::new(t, eps)?, cfg).map(|s| s.w_eps);
    let (dt, _, lap) = central_differences(&f, x, t, h)?;
    Ok((dt - 0.5 * eps * lap).abs())
}
