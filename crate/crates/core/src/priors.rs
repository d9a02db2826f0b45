//! Convex regularizers `J` that are proper, lower semicontinuous, have a
//! domain with non-empty interior and satisfy `inf J = 0`.
//!
//! Every prior exposes its value, proximal map, minimal-norm subgradient,
//! strong-convexity modulus and an exact domain classifier.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tv_imaging::{self, Edges, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", try_from = "PriorDescriptor", into = "PriorDescriptor")]
pub enum Prior {
    /// `J = 0` on a space of any (or the given) dimension.
    Zero { dim: Option<usize> },
    /// `J(y) = (m/2)||y||^2`.
    Quadratic { m: f64, dim: Option<usize> },
    /// `J(y) = sum_i lambda_i |y_i|`.
    WeightedL1 { lambda: Vec<f64> },
    /// `J(y) = lambda * sum over 4-neighbour edges |y_i - y_j|` on a row-major lattice.
    AnisotropicTv2d { lambda: f64, width: usize, height: usize },
    /// Indicator of the closed Euclidean ball of the given radius.
    BallIndicator { radius: f64, dim: Option<usize> },
}

/// Where a point sits relative to `dom J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainLocation {
    Interior,
    Boundary,
    Outside,
}

// JSON face of `Prior`; conversion validates parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum PriorDescriptor {
    Zero {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
    Quadratic {
        m: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
    WeightedL1 {
        lambda: Vec<f64>,
    },
    #[serde(rename = "AnisotropicTV2D")]
    AnisotropicTv2d {
        lambda: f64,
        width: usize,
        height: usize,
    },
    BallIndicator {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

impl TryFrom<PriorDescriptor> for Prior {
    type Error = Error;

    fn try_from(d: PriorDescriptor) -> Result<Self> {
        match d {
            PriorDescriptor::Zero { dim } => Ok(Prior::Zero { dim }),
            PriorDescriptor::Quadratic { m, dim } => Prior::quadratic(m).map(|p| p.with_dim(dim)),
            PriorDescriptor::WeightedL1 { lambda } => Prior::weighted_l1(lambda),
            PriorDescriptor::AnisotropicTv2d { lambda, width, height } => Prior::anisotropic_tv(lambda, width, height),
            PriorDescriptor::BallIndicator { radius, dim } => Prior::ball(radius).map(|p| p.with_dim(dim)),
        }
    }
}

impl From<Prior> for PriorDescriptor {
    fn from(p: Prior) -> Self {
        match p {
            Prior::Zero { dim } => PriorDescriptor::Zero { dim },
            Prior::Quadratic { m, dim } => PriorDescriptor::Quadratic { m, dim },
            Prior::WeightedL1 { lambda } => PriorDescriptor::WeightedL1 { lambda },
            Prior::AnisotropicTv2d { lambda, width, height } => {
                PriorDescriptor::AnisotropicTv2d { lambda, width, height }
            }
            Prior::BallIndicator { radius, dim } => PriorDescriptor::BallIndicator { radius, dim },
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be a positive finite number, got {v}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Soft thresholding `T(a, alpha) = sign(a) max(|a| - alpha, 0)`.
#[inline]
pub fn soft_threshold(a: f64, alpha: f64) -> f64 {
    if a > alpha {
        a - alpha
    } else if a < -alpha {
        a + alpha
    } else {
        0.0
    }
}

impl Prior {
    pub fn zero() -> Self {
        Prior::Zero { dim: None }
    }

    pub fn quadratic(m: f64) -> Result<Self> {
        Ok(Prior::Quadratic { m: positive("m", m)?, dim: None })
    }

    pub fn weighted_l1(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(invalid("lambda must have at least one entry"));
        }
        for &l in &lambda {
            positive("lambda", l)?;
        }
        Ok(Prior::WeightedL1 { lambda })
    }

    pub fn anisotropic_tv(lambda: f64, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("lattice dimensions must be positive"));
        }
        Ok(Prior::AnisotropicTv2d { lambda: positive("lambda", lambda)?, width, height })
    }

    pub fn ball(radius: f64) -> Result<Self> {
        Ok(Prior::BallIndicator { radius: positive("radius", radius)?, dim: None })
    }

    /// Pins the dimension of a dimension-agnostic prior. No-op for priors
    /// whose parameters already fix it.
    pub fn with_dim(self, d: Option<usize>) -> Self {
        match self {
            Prior::Zero { .. } => Prior::Zero { dim: d },
            Prior::Quadratic { m, .. } => Prior::Quadratic { m, dim: d },
            Prior::BallIndicator { radius, .. } => Prior::BallIndicator { radius, dim: d },
            other => other,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prior descriptors always serialize")
    }

    /// Fixed dimension, if the prior's parameters determine one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Prior::Zero { dim } | Prior::Quadratic { dim, .. } | Prior::BallIndicator { dim, .. } => *dim,
            Prior::WeightedL1 { lambda } => Some(lambda.len()),
            Prior::AnisotropicTv2d { width, height, .. } => Some(width * height),
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(invalid("vectors must have at least one component"));
        }
        match self.dim() {
            Some(d) if d != n => Err(Error::DimensionMismatch { expected: d, got: n }),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Prior::Zero { .. } => "Zero".into(),
            Prior::Quadratic { m, .. } => format!("Quadratic(m={m})"),
            Prior::WeightedL1 { lambda } => format!("WeightedL1(lambda={lambda:?})"),
            Prior::AnisotropicTv2d { lambda, width, height } => {
                format!("AnisotropicTV2D(lambda={lambda}, {width}x{height})")
            }
            Prior::BallIndicator { radius, .. } => format!("BallIndicator(r={radius})"),
        }
    }

    /// True when `dom J` is the whole space.
    pub fn has_full_domain(&self) -> bool {
        !matches!(self, Prior::BallIndicator { .. })
    }

    /// `J(y)`, `+inf` outside the domain.
    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y.len())?;
        Ok(self.value(y))
    }

    /// `J(y)` without the dimension check.
    pub(crate) fn value(&self, y: &[f64]) -> f64 {
        match self {
            Prior::Zero { .. } => 0.0,
            Prior::Quadratic { m, .. } => 0.5 * m * norm2(y),
            Prior::WeightedL1 { lambda } => lambda.iter().zip(y).map(|(l, v)| l * v.abs()).sum(),
            Prior::AnisotropicTv2d { lambda, width, height } => {
                lambda * Edges::new(*width, *height).map(|(i, j)| (y[i] - y[j]).abs()).sum::<f64>()
            }
            Prior::BallIndicator { radius, .. } => {
                if norm2(y) <= radius * radius {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Unique minimizer of `(1/2t)||x - y||^2 + J(y)`.
    pub fn prox(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        positive("t", t)?;
        Ok(match self {
            Prior::Zero { .. } => x.to_vec(),
            Prior::Quadratic { m, .. } => x.iter().map(|v| v / (1.0 + m * t)).collect(),
            Prior::WeightedL1 { lambda } => x.iter().zip(lambda).map(|(&v, l)| soft_threshold(v, t * l)).collect(),
            Prior::AnisotropicTv2d { lambda, width, height } => {
                let img = Image::new(*width, *height, x.to_vec())?;
                tv_imaging::rof_map(&img, t, *lambda)?.into_pixels()
            }
            Prior::BallIndicator { radius, .. } => {
                let r = norm2(x).sqrt();
                if r <= *radius {
                    x.to_vec()
                } else {
                    // rounding may leave the scaled point a hair outside; pull it in
                    let mut scale = radius / r;
                    loop {
                        let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
                        if norm2(&y) <= radius * radius {
                            break y;
                        }
                        scale = f64::from_bits(scale.to_bits() - 1);
                    }
                }
            }
        })
    }

    /// Minimal-norm element of `dJ(y)`, i.e. the projection of the origin onto
    /// the subdifferential.
    pub fn min_subgradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y.len())?;
        match self {
            Prior::Zero { .. } => Ok(vec![0.0; y.len()]),
            Prior::Quadratic { m, .. } => Ok(y.iter().map(|v| m * v).collect()),
            Prior::WeightedL1 { lambda } => Ok(y
                .iter()
                .zip(lambda)
                .map(|(&v, l)| {
                    if v > 0.0 {
                        *l
                    } else if v < 0.0 {
                        -l
                    } else {
                        0.0
                    }
                })
                .collect()),
            Prior::AnisotropicTv2d { lambda, width, height } => Ok(tv_min_subgradient(y, *lambda, *width, *height)),
            Prior::BallIndicator { .. } => match self.domain_contains(y) {
                // 0 lies in the normal cone at every point of the closed ball
                DomainLocation::Interior | DomainLocation::Boundary => Ok(vec![0.0; y.len()]),
                DomainLocation::Outside => Err(Error::OutsideSubdifferentialDomain),
            },
        }
    }

    pub fn strong_convexity(&self) -> f64 {
        match self {
            Prior::Quadratic { m, .. } => *m,
            _ => 0.0,
        }
    }

    pub fn domain_contains(&self, y: &[f64]) -> DomainLocation {
        match self {
            Prior::BallIndicator { radius, .. } => {
                let r2 = norm2(y);
                let rr = radius * radius;
                if r2 < rr {
                    DomainLocation::Interior
                } else if r2 == rr {
                    DomainLocation::Boundary
                } else {
                    DomainLocation::Outside
                }
            }
            _ => DomainLocation::Interior,
        }
    }

    /// Subgradient inequality residual used by tests and verification:
    /// `J(z) - J(p) - <g, z - p>` with `g = (x - p)/t`.
    pub fn prox_inclusion_gap(&self, x: &[f64], t: f64, p: &[f64], z: &[f64]) -> f64 {
        let g: Vec<f64> = x.iter().zip(p).map(|(a, b)| (a - b) / t).collect();
        let dz: Vec<f64> = z.iter().zip(p).map(|(a, b)| a - b).collect();
        self.value(z) - self.value(p) - dot(&g, &dz)
    }
}

/// Minimal-norm subgradient of anisotropic TV: minimise `||D^T q||` over edge
/// weights `q` fixed to `lambda * sign(Dy)` on non-flat edges and boxed to
/// `[-lambda, lambda]` on flat ones, by projected gradient.
fn tv_min_subgradient(y: &[f64], lambda: f64, width: usize, height: usize) -> Vec<f64> {
    let edges: Vec<(usize, usize)> = Edges::new(width, height).collect();
    let mut q: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            let d = y[j] - y[i];
            if d > 0.0 {
                lambda
            } else if d < 0.0 {
                -lambda
            } else {
                0.0
            }
        })
        .collect();
    let free: Vec<bool> = edges.iter().map(|&(i, j)| y[i] == y[j]).collect();
    let apply = |q: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (&qe, &(i, j)) in q.iter().zip(&edges) {
            g[i] -= qe;
            g[j] += qe;
        }
    };
    let mut g = vec![0.0; y.len()];
    if free.iter().any(|&f| f) {
        let step = 1.0 / 8.0;
        for _ in 0..200_000 {
            apply(&q, &mut g);
            let mut change: f64 = 0.0;
            for (k, &(i, j)) in edges.iter().enumerate() {
                if free[k] {
                    // d/dq_e of 0.5||D^T q||^2 is (g_j - g_i)
                    let new = (q[k] - step * (g[j] - g[i])).clamp(-lambda, lambda);
                    change = change.max((new - q[k]).abs());
                    q[k] = new;
                }
            }
            if change <= 1e-15 * lambda {
                break;
            }
        }
    }
    apply(&q, &mut g);
    g
}
