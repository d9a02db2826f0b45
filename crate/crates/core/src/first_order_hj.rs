//! Moreau-Yosida envelope `S_0(x,t) = min_y (1/2t)||x-y||^2 + J(y)`, the
//! viscosity solution of `dS/dt + |grad S|^2 / 2 = 0` with `S(x,0) = J(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::priors::Prior;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    /// `S_0(x,t)`.
    pub value: f64,
    /// `u_MAP(x,t)`, the proximal point.
    pub minimizer: Vec<f64>,
    /// `(x - u_MAP)/t`.
    pub gradient: Vec<f64>,
}

/// Uniform grid on `[lo, hi]` with `count >= 3` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub values: Vec<f64>,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if count < 3 {
            return Err(invalid("grid needs at least 3 nodes"));
        }
        let h = (hi - lo) / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|i| lo + h * i as f64).collect();
        values[count - 1] = hi;
        Ok(Self { lo, hi, count, values })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }
}

pub(crate) fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("t must be positive and finite, got {t}")))
    }
}

/// Envelope value, proximal point and gradient at `(x, t)`.
pub fn envelope(prior: &Prior, x: &[f64], t: f64) -> Result<EnvelopeResult> {
    check_t(t)?;
    let minimizer = prior.prox(x, t)?;
    let dist2: f64 = x.iter().zip(&minimizer).map(|(a, b)| (a - b) * (a - b)).sum();
    let value = dist2 / (2.0 * t) + prior.value(&minimizer);
    let gradient = x.iter().zip(&minimizer).map(|(a, b)| (a - b) / t).collect();
    Ok(EnvelopeResult { value, minimizer, gradient })
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values.enumerate().fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

/// Discrete Legendre transform `f*(p) = max_k (p g_k - f_k)` for every node `p`
/// of `grid`, by exhaustive scan. Nodes where `f` is infinite never win.
fn legendre_on_grid(grid: &[f64], f: &[f64]) -> Vec<f64> {
    grid.iter().map(|&p| argmax(grid.iter().zip(f).map(|(g, fv)| p * g - fv)).1).collect()
}

/// Returns `(lax, hopf)`: the envelope `S_0(x,t)` from the proximal point and
/// the same value from a doubly discrete Hopf formula
/// `max_p (x p - t p^2/2 - J*(p))`, where `J*` is itself a discrete transform.
/// Both transforms run on `grid`. Fails with [`Error::EndpointArgmax`] when the
/// outer maximiser lands on an end node.
pub fn hopf_check_1d(prior: &Prior, grid: &Grid1D, x: f64, t: f64) -> Result<(f64, f64)> {
    prior.check_dim(1)?;
    let lax = envelope(prior, &[x], t)?.value;
    let j: Vec<f64> = grid.values.iter().map(|&y| prior.value(&[y])).collect();
    if j.iter().all(|v| v.is_infinite()) {
        return Err(invalid("grid misses the domain of the prior"));
    }
    let j_star = legendre_on_grid(&grid.values, &j);
    let (k, hopf) = argmax(grid.values.iter().zip(&j_star).map(|(&p, js)| x * p - 0.5 * t * p * p - js));
    if k == 0 || k == grid.count - 1 {
        return Err(Error::EndpointArgmax { what: "Hopf formula" });
    }
    Ok((lax, hopf))
}

/// `grad_x S_0(y, t_k)` for each `t_k`; tends to the minimal-norm subgradient of
/// `J` at `y` as `t_k -> 0`.
pub fn grad_s0_limit_check(prior: &Prior, y: &[f64], t_seq: &[f64]) -> Result<Vec<Vec<f64>>> {
    t_seq.iter().map(|&t| envelope(prior, y, t).map(|e| e.gradient)).collect()
}

/// Default central-difference step `1e-4 (1 + |c|)` for coordinate value `c`.
pub fn default_step(c: f64) -> f64 {
    1e-4 * (1.0 + c.abs())
}

/// `|dS_0/dt + |grad S_0|^2 / 2|` at `(x, t)` with every derivative taken by
/// central differences of step `h` in `t` and each `x_i`.
pub fn hj_residual(prior: &Prior, x: &[f64], t: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || h >= t {
        return Err(invalid("finite-difference step must lie in (0, t)"));
    }
    let s = |x: &[f64], t: f64| envelope(prior, x, t).map(|e| e.value);
    let dt = (s(x, t + h)? - s(x, t - h)?) / (2.0 * h);
    let mut grad2 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = s(&xp, t)?;
        xp[i] = x[i] - h;
        let dn = s(&xp, t)?;
        xp[i] = x[i];
        grad2 += ((up - dn) / (2.0 * h)).powi(2);
    }
    Ok((dt + 0.5 * grad2).abs())
}
