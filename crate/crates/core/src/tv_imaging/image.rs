use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major grid of real intensities. Values are nominally in `[0, 255]` but
/// are never clamped here; clamping happens only when writing PGM files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: pixels.len() });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(invalid("image contains non-finite pixels"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Indices of the (at most four) lattice neighbours of pixel `idx`.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> {
        lattice_neighbors(self.width, self.height, idx)
    }

    /// Undirected 4-neighbour edges, each listed once.
    pub fn edges(&self) -> Edges {
        Edges::new(self.width, self.height)
    }
}

pub(crate) fn lattice_neighbors(width: usize, height: usize, idx: usize) -> impl Iterator<Item = usize> {
    let (col, row) = (idx % width, idx / width);
    let left = (col > 0).then(|| idx - 1);
    let right = (col + 1 < width).then(|| idx + 1);
    let up = (row > 0).then(|| idx - width);
    let down = (row + 1 < height).then(|| idx + width);
    [left, right, up, down].into_iter().flatten()
}

/// Iterator over horizontal then vertical lattice edges `(i, j)` with `i < j`.
#[derive(Clone, Debug)]
pub struct Edges {
    width: usize,
    height: usize,
    next: usize,
}

impl Edges {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, next: 0 }
    }

    pub fn count(width: usize, height: usize) -> usize {
        (width - 1) * height + width * (height - 1)
    }
}

impl Iterator for Edges {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let horizontal = (self.width - 1) * self.height;
        let k = self.next;
        if k < horizontal {
            self.next += 1;
            let row = k / (self.width - 1);
            let col = k % (self.width - 1);
            let i = row * self.width + col;
            Some((i, i + 1))
        } else if k < horizontal + self.width * (self.height - 1) {
            self.next += 1;
            let i = k - horizontal;
            Some((i, i + self.width))
        } else {
            None
        }
    }
}

/// Anisotropic total variation `lambda * sum_edges |y_i - y_j|`.
pub fn tv_eval(img: &Image, lambda: f64) -> f64 {
    lambda * tv_of_slice(img.pixels(), img.width(), img.height())
}

pub(crate) fn tv_of_slice(y: &[f64], width: usize, height: usize) -> f64 {
    Edges::new(width, height).map(|(i, j)| (y[i] - y[j]).abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds i.i.d. `N(0, sigma^2)` noise from a generator seeded with `spec.seed`.
pub fn add_gaussian_noise(img: &Image, spec: NoiseSpec) -> Result<Image> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(invalid("noise sigma must be a finite nonnegative number"));
    }
    let mut out = img.clone();
    if spec.sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for p in out.pixels_mut() {
        *p += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Piecewise-constant test scene with a linear ramp band: background, a
/// bright rectangle, a mid-gray disc and a horizontal ramp along the bottom.
pub fn synthetic_phantom(width: usize, height: usize) -> Image {
    let mut px = vec![60.0; width * height];
    let (w, h) = (width as f64, height as f64);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = ((col as f64 + 0.5) / w, (row as f64 + 0.5) / h);
            let v = &mut px[row * width + col];
            if (0.12..0.45).contains(&x) && (0.1..0.5).contains(&y) {
                *v = 190.0;
            }
            if (x - 0.7).powi(2) + (y - 0.35).powi(2) < 0.04 {
                *v = 120.0;
            }
            if (0.55..0.62).contains(&x) && (0.12..0.22).contains(&y) {
                *v = 235.0;
            }
            if y > 0.72 {
                *v = 30.0 + 180.0 * x;
            }
        }
    }
    Image { width, height, pixels: px }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_enumerate_each_pair_once() {
        let e: Vec<_> = Edges::new(3, 2).collect();
        assert_eq!(e.len(), Edges::count(3, 2));
        assert_eq!(e, vec![(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]);
        assert_eq!(Edges::new(1, 1).count(), 0);
    }

    #[test]
    fn neighbors_truncate_at_borders() {
        let img = Image::filled(3, 3, 0.0);
        assert_eq!(img.neighbors(0).count(), 2);
        assert_eq!(img.neighbors(1).count(), 3);
        assert_eq!(img.neighbors(4).count(), 4);
        let mut n: Vec<_> = img.neighbors(4).collect();
        n.sort();
        assert_eq!(n, vec![1, 3, 5, 7]);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_eval(&Image::filled(4, 3, 7.0), 3.0), 0.0);
        assert_eq!(tv_eval(&Image::new(2, 1, vec![0.0, 10.0]).unwrap(), 1.0), 10.0);
        // ((0,1),(1,0)): four unit edges, lambda 2
        let img = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(tv_eval(&img, 2.0), 8.0);
    }

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(matches!(Image::new(2, 2, vec![0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let clean = Image::filled(64, 64, 100.0);
        let spec = NoiseSpec { sigma: 20.0, seed: 11 };
        let a = add_gaussian_noise(&clean, spec).unwrap();
        let b = add_gaussian_noise(&clean, spec).unwrap();
        assert_eq!(a, b);
        let d: Vec<f64> = a.pixels().iter().map(|p| p - 100.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 1.0, "mean {mean}");
        assert!((sd - 20.0).abs() < 1.0, "sd {sd}");
        let same = add_gaussian_noise(&clean, NoiseSpec { sigma: 0.0, seed: 3 }).unwrap();
        assert_eq!(same, clean);
        assert!(add_gaussian_noise(&clean, NoiseSpec { sigma: -1.0, seed: 0 }).is_err());
    }

    #[test]
    fn phantom_has_flat_regions_and_a_ramp() {
        let p = synthetic_phantom(64, 64);
        assert_eq!(p.get(0, 0), 60.0);
        assert!(p.get(63, 63) > p.get(0, 63));
    }
}
