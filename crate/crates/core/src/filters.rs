//! Edge-preserving classical denoising used as a baseline and as the
//! pre/post stages around the network.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Bilateral filter parameters. Spatial units are pixels, range units are
/// intensity (images are scored in [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralConfig {
    pub radius: usize,
    pub sigma_spatial: f64,
    pub sigma_range: f64,
}

impl Default for BilateralConfig {
    fn default() -> Self {
        BilateralConfig {
            radius: 3,
            sigma_spatial: 2.0,
            sigma_range: 0.1,
        }
    }
}

impl BilateralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::invalid("bilateral radius must be at least 1"));
        }
        if !(self.sigma_spatial > 0.0) || !(self.sigma_range > 0.0) {
            return Err(Error::invalid(format!(
                "bilateral sigmas must be positive, got spatial {} range {}",
                self.sigma_spatial, self.sigma_range
            )));
        }
        Ok(())
    }
}

/// Bilateral filter: each output pixel is a convex combination of its
/// (2r+1)^2 neighborhood, weighted by Gaussian(spatial distance) times
/// Gaussian(intensity difference). Borders replicate the edge pixel.
///
/// The combination is evaluated as center + weighted mean of differences,
/// then clamped to the neighborhood extremes. Both steps keep the convexity
/// contract exact in floating point: a constant window returns the center
/// bit-for-bit, and output never escapes [window min, window max].
///
/// Output pixels are independent; rows fan out across threads with each
/// pixel summed serially, so results never depend on the thread count.
pub fn bilateral_filter(img: &ImageGrid, cfg: &BilateralConfig) -> Result<ImageGrid> {
    cfg.validate()?;
    if !img.all_finite() {
        return Err(Error::invalid("bilateral filter input has non-finite values"));
    }
    let h = img.height();
    let w = img.width();
    let r = cfg.radius as isize;
    let side = 2 * cfg.radius + 1;

    // spatial kernel, precomputed once
    let inv2ss = 1.0 / (2.0 * cfg.sigma_spatial * cfg.sigma_spatial);
    let spatial: Vec<f64> = (0..side * side)
        .map(|i| {
            let dy = i / side;
            let dx = i % side;
            let ddy = dy as f64 - cfg.radius as f64;
            let ddx = dx as f64 - cfg.radius as f64;
            (-(ddy * ddy + ddx * ddx) * inv2ss).exp()
        })
        .collect();
    let inv2sr = 1.0 / (2.0 * cfg.sigma_range * cfg.sigma_range);

    let src = img.data();
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let center = src[y * w + x];
            let mut num = 0.0;
            let mut den = 0.0;
            let mut lo = center;
            let mut hi = center;
            for dy in -r..=r {
                let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let v = src[ny * w + nx];
                    let diff = v - center;
                    let ws = spatial[((dy + r) * (2 * r + 1) + (dx + r)) as usize];
                    let wgt = ws * (-(diff * diff) * inv2sr).exp();
                    num += wgt * diff;
                    den += wgt;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            *slot = (center + num / den).clamp(lo, hi);
        }
    });
    ImageGrid::from_vec(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grid(seed: u64, h: usize, w: usize) -> ImageGrid {
        let mut rng = crate::seed::stream_rng(seed, 0);
        ImageGrid::from_vec(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap()
    }

    /// Normalized Gaussian blur with clamp-to-edge borders, written as its
    /// own straight-line loop.
    fn gaussian_blur_oracle(img: &ImageGrid, radius: usize, sigma: f64) -> ImageGrid {
        let h = img.height();
        let w = img.width();
        let r = radius as isize;
        let mut out = ImageGrid::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let mut num = 0.0;
                let mut den = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let g = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                        num += g * img.get(ny, nx);
                        den += g;
                    }
                }
                out.set(y, x, num / den);
            }
        }
        out
    }

    #[test]
    fn constant_image_is_a_fixed_point_exactly() {
        for c in [0.0, 0.3, 0.5, 1.0] {
            let img = ImageGrid::filled(9, 7, c);
            let out = bilateral_filter(&img, &BilateralConfig::default()).unwrap();
            assert_eq!(out.data(), img.data(), "constant {c} not preserved");
        }
    }

    #[test]
    fn output_stays_within_input_range() {
        for seed in 0..20 {
            let img = random_grid(seed, 12, 12);
            let (lo, hi) = img.min_max();
            let out = bilateral_filter(&img, &BilateralConfig::default()).unwrap();
            for &v in out.data() {
                assert!(v >= lo && v <= hi, "output {v} escapes [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn huge_range_sigma_degenerates_to_gaussian_blur() {
        let img = random_grid(31, 16, 16);
        let cfg = BilateralConfig {
            radius: 3,
            sigma_spatial: 2.0,
            sigma_range: 1e6,
        };
        let out = bilateral_filter(&img, &cfg).unwrap();
        let blur = gaussian_blur_oracle(&img, 3, 2.0);
        for (a, e) in out.data().iter().zip(blur.data()) {
            assert!((a - e).abs() < 1e-6, "bilateral {a} vs gaussian {e}");
        }
    }

    #[test]
    fn tiny_range_sigma_preserves_a_step_edge() {
        // hard horizontal edge: a narrow range kernel must not blur across it
        let mut img = ImageGrid::zeros(8, 8);
        for y in 4..8 {
            for x in 0..8 {
                img.set(y, x, 1.0);
            }
        }
        let cfg = BilateralConfig {
            radius: 2,
            sigma_spatial: 5.0,
            sigma_range: 0.01,
        };
        let out = bilateral_filter(&img, &cfg).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if y < 4 { 0.0 } else { 1.0 };
                assert!(
                    (out.get(y, x) - expect).abs() < 1e-3,
                    "edge blurred at ({y},{x}): {}",
                    out.get(y, x)
                );
            }
        }
    }

    #[test]
    fn smooths_noise_on_a_flat_region() {
        let mut rng = crate::seed::stream_rng(77, 0);
        let img = ImageGrid::from_fn(16, 16, |_, _| 0.5 + (rng.random::<f64>() - 0.5) * 0.1);
        let out = bilateral_filter(&img, &BilateralConfig::default()).unwrap();
        let var = |g: &ImageGrid| {
            let m = g.mean();
            g.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / g.data().len() as f64
        };
        assert!(var(&out) < var(&img) * 0.5, "filter failed to smooth noise");
    }

    #[test]
    fn rejects_bad_config() {
        let img = ImageGrid::filled(4, 4, 0.5);
        for cfg in [
            BilateralConfig { radius: 0, ..Default::default() },
            BilateralConfig { sigma_spatial: 0.0, ..Default::default() },
            BilateralConfig { sigma_range: -1.0, ..Default::default() },
        ] {
            assert!(matches!(
                bilateral_filter(&img, &cfg),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn transpose_commutes_with_filtering(seed in 0u64..500) {
            let img = random_grid(seed, 7, 5);
            let cfg = BilateralConfig { radius: 2, ..Default::default() };
            let a = bilateral_filter(&img.transposed(), &cfg).unwrap();
            let b = bilateral_filter(&img, &cfg).unwrap().transposed();
            for (x, y) in a.data().iter().zip(b.data()) {
                // identical weight multisets, different summation order
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn convexity_bound_holds_for_random_configs(
            seed in 0u64..200,
            radius in 1usize..4,
            ss in 0.5f64..4.0,
            sr in 0.02f64..2.0,
        ) {
            let img = random_grid(seed, 9, 9);
            let (lo, hi) = img.min_max();
            let cfg = BilateralConfig { radius, sigma_spatial: ss, sigma_range: sr };
            let out = bilateral_filter(&img, &cfg).unwrap();
            for &v in out.data() {
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }
}
