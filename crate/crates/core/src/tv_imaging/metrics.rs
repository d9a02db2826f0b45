use super::image::{Edges, Image};
use crate::error::{Error, Result};

/// Edge-equality tolerance for exactly-flat regions of a MAP reconstruction.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-6;

/// Fraction of 4-neighbour edges whose endpoint values differ by at most `tol`.
/// A single-pixel image has no edges and counts as flat.
pub fn plateau_fraction(img: &Image, tol: f64) -> f64 {
    let y = img.pixels();
    let total = Edges::count(img.width(), img.height());
    if total == 0 {
        return 1.0;
    }
    let flat = img.edges().filter(|&(i, j)| (y[i] - y[j]).abs() <= tol).count();
    flat as f64 / total as f64
}

/// Peak signal-to-noise ratio in dB for peak value 255. Identical images
/// yield `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let mse = a.pixels().iter().zip(b.pixels()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_examples() {
        assert_eq!(plateau_fraction(&Image::filled(5, 4, 3.0), 1e-6), 1.0);
        let ramp = Image::new(4, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(plateau_fraction(&ramp, 1e-6), 0.0);
        let checker =
            Image::new(4, 4, (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0.0 } else { 255.0 }).collect()).unwrap();
        assert_eq!(plateau_fraction(&checker, 1e-6), 0.0);
        assert_eq!(plateau_fraction(&Image::filled(1, 1, 0.0), 0.0), 1.0);
    }

    #[test]
    fn psnr_examples() {
        let a = Image::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let shift = |d: f64| Image::new(3, 2, a.pixels().iter().map(|p| p + d).collect()).unwrap();
        assert!(psnr(&a, &shift(255.0)).unwrap().abs() < 1e-12);
        let ten = psnr(&a, &shift(10.0)).unwrap();
        assert!((ten - 10.0 * (255.0f64.powi(2) / 100.0).log10()).abs() < 1e-12);
        assert!((ten - 28.13).abs() < 0.005);
        assert!(psnr(&a, &Image::filled(2, 3, 0.0)).is_err());
    }
}
