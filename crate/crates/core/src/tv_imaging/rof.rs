use super::image::{tv_of_slice, Edges, Image};
use crate::error::{invalid, Error, Result};

/// Objective `(1/2t)||x - y||^2 + lambda TV(y)` of the anisotropic ROF model.
pub fn rof_objective(x: &Image, y: &Image, t: f64, lambda: f64) -> f64 {
    let fid: f64 = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b).powi(2)).sum();
    fid / (2.0 * t) + lambda * tv_of_slice(y.pixels(), y.width(), y.height())
}

/// Primal-dual (Chambolle-Pock) solver for the anisotropic ROF problem with
/// dual variables on lattice edges.
#[derive(Clone, Debug)]
pub struct RofSolver {
    /// Stop once `||y_{k+1} - y_k|| / ||y_k||` drops below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Record the objective value after every iteration.
    pub track_objective: bool,
}

impl Default for RofSolver {
    fn default() -> Self {
        Self { rel_tol: 1e-14, max_iter: 20_000, track_objective: false }
    }
}

#[derive(Clone, Debug)]
pub struct RofOutcome {
    pub image: Image,
    pub iterations: usize,
    pub rel_change: f64,
    pub converged: bool,
    pub objective: Vec<f64>,
}

impl RofSolver {
    pub fn solve(&self, x: &Image, t: f64, lambda: f64) -> Result<RofOutcome> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid("t must be positive"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda must be nonnegative"));
        }
        if lambda == 0.0 {
            return Ok(RofOutcome {
                image: x.clone(),
                iterations: 0,
                rel_change: 0.0,
                converged: true,
                objective: Vec::new(),
            });
        }
        let (w, h) = (x.width(), x.height());
        let edges: Vec<(usize, usize)> = Edges::new(w, h).collect();
        let n = x.len();
        // ||D||^2 <= 8 for the 4-neighbour difference operator
        let tau = 1.0 / 8f64.sqrt();
        let sigma = tau;
        let data_weight = tau / t;

        let xs = x.pixels();
        let mut y = xs.to_vec();
        let mut y_bar = y.clone();
        let mut y_prev = vec![0.0; n];
        let mut p = vec![0.0; edges.len()];
        let mut div = vec![0.0; n];
        let mut objective = Vec::new();
        let mut rel_change = f64::INFINITY;
        let mut iterations = 0;

        while iterations < self.max_iter {
            iterations += 1;
            for (pe, &(i, j)) in p.iter_mut().zip(&edges) {
                *pe = (*pe + sigma * (y_bar[j] - y_bar[i])).clamp(-lambda, lambda);
            }
            // div = -D^T p
            div.iter_mut().for_each(|d| *d = 0.0);
            for (&pe, &(i, j)) in p.iter().zip(&edges) {
                div[i] += pe;
                div[j] -= pe;
            }
            y_prev.copy_from_slice(&y);
            let mut step2 = 0.0;
            let mut norm2 = 0.0;
            for k in 0..n {
                let v = (y[k] + tau * div[k] + data_weight * xs[k]) / (1.0 + data_weight);
                step2 += (v - y[k]).powi(2);
                norm2 += v * v;
                y[k] = v;
            }
            for k in 0..n {
                y_bar[k] = 2.0 * y[k] - y_prev[k];
            }
            if self.track_objective {
                let fid: f64 = xs.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
                objective.push(fid / (2.0 * t) + lambda * tv_of_slice(&y, w, h));
            }
            rel_change = step2.sqrt() / norm2.sqrt().max(f64::MIN_POSITIVE);
            if rel_change < self.rel_tol || step2 == 0.0 {
                break;
            }
        }
        let converged = rel_change < self.rel_tol || rel_change == 0.0;
        Ok(RofOutcome { image: Image::new(w, h, y)?, iterations, rel_change, converged, objective })
    }
}

/// MAP estimate of the anisotropic ROF model with the default solver settings.
/// Returns [`Error::NotConverged`] (carrying the final relative change) when the
/// iteration budget runs out.
pub fn rof_map(x: &Image, t: f64, lambda: f64) -> Result<Image> {
    let out = RofSolver::default().solve(x, t, lambda)?;
    if !out.converged {
        return Err(Error::NotConverged { iterations: out.iterations, residual: out.rel_change });
    }
    Ok(out.image)
}
