//! Seeded synthetic objects: soft-edged shapes on shaded backgrounds, used to
//! exercise the pipeline without an image corpus.
//!
//! Each object is drawn from its own random stream keyed by the object
//! index, so a given `(seed, height, width)` always yields the same scene
//! at any position in the batch. Scenes imitate the statistics of natural
//! photographs more than of binary masks: luminance is bimodal (a dark
//! background mode, a bright foreground mode), edges are feathered over a
//! pixel or two, and ramps plus low-frequency shading keep every window
//! non-constant while leaving most of the energy at scales a correlation
//! reconstruction can actually recover.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::seed;

const SYNTH_SALT: u64 = 0x7379_6e74;

/// Generate `count` scenes named `synth-000`, `synth-001`, ...
pub fn generate_objects(
    seed_value: u64,
    count: usize,
    height: usize,
    width: usize,
) -> Result<Vec<(String, ImageGrid)>> {
    if height < 4 || width < 4 {
        return Err(Error::invalid(format!(
            "synthetic objects need at least 4x4 pixels, got {height}x{width}"
        )));
    }
    Ok((0..count)
        .map(|i| {
            (
                format!("synth-{i:03}"),
                scene(seed::mix(seed_value, SYNTH_SALT), i, height, width),
            )
        })
        .collect())
}

fn scene(stream_seed: u64, index: usize, height: usize, width: usize) -> ImageGrid {
    let mut rng = seed::stream_rng(stream_seed, index as u64);
    // Two luminance modes per scene; shading stays well inside the gap so
    // the modes never blur into each other.
    let lo = rng.random_range(0.12..0.28);
    let hi = rng.random_range(0.62..0.85);
    let mut img = shaded_background(&mut rng, height, width, lo);

    // The first shape is always a large disc, so scene contrast never
    // depends on the later random draws alone.
    let n_shapes = rng.random_range(2..=4usize);
    for shape in 0..n_shapes {
        let kind = if shape == 0 { 0 } else { rng.random_range(0..3u8) };
        match kind {
            0 => paint_disc(&mut img, &mut rng, hi, shape == 0),
            1 => paint_box(&mut img, &mut rng, hi),
            _ => paint_blob(&mut img, &mut rng, hi),
        }
    }
    if rng.random_bool(0.25) {
        paint_hole(&mut img, &mut rng, lo);
    }
    add_texture(&mut img, &mut rng);
    img
}

/// A final faint diagonal modulation over the whole scene, shapes included,
/// so painted interiors are shaded rather than exactly flat.
fn add_texture(img: &mut ImageGrid, rng: &mut impl Rng) {
    let amp = rng.random_range(0.015..0.035);
    let freq = rng.random_range(1.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let diag = ((img.height() * img.height() + img.width() * img.width()) as f64).sqrt();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let u = (y as f64 - x as f64) / diag;
            let v = img.get(y, x) + amp * (std::f64::consts::TAU * freq * u + phase).sin();
            img.set(y, x, v.clamp(0.02, 0.98));
        }
    }
}

/// Dark-mode canvas: a directional ramp plus one low-frequency sinusoid.
fn shaded_background(rng: &mut impl Rng, height: usize, width: usize, lo: f64) -> ImageGrid {
    let ramp_amp = rng.random_range(0.05..0.12);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (angle.sin(), angle.cos());
    let amp = rng.random_range(0.03..0.06);
    let freq = rng.random_range(1.0..2.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let diag = ((height * height + width * width) as f64).sqrt();
    ImageGrid::from_fn(height, width, |y, x| {
        let u = (gy * y as f64 + gx * x as f64) / diag;
        let ramp = lo + ramp_amp * (u + 0.5).clamp(0.0, 1.0);
        let texture = amp * (std::f64::consts::TAU * freq * u + phase).sin();
        (ramp + texture).clamp(0.02, 0.98)
    })
}

/// Cubic smoothstep of the clamped coverage parameter.
fn smooth(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Blend `level` (plus a gentle ramp across the shape) over the image with
/// per-pixel coverage `alpha(y, x)` in [0, 1].
fn blend_shape(
    img: &mut ImageGrid,
    rng: &mut impl Rng,
    level: f64,
    alpha: impl Fn(f64, f64) -> f64,
) {
    let shade_amp = rng.random_range(0.03..0.09);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (sy, sx) = (angle.sin(), angle.cos());
    let diag = ((img.height() * img.height() + img.width() * img.width()) as f64).sqrt();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let fy = y as f64 + 0.5;
            let fx = x as f64 + 0.5;
            let a = alpha(fy, fx);
            if a <= 0.0 {
                continue;
            }
            let shade = shade_amp * (sy * fy + sx * fx) / diag;
            let v = img.get(y, x) * (1.0 - a) + (level + shade) * a;
            img.set(y, x, v.clamp(0.02, 0.98));
        }
    }
}

fn paint_disc(img: &mut ImageGrid, rng: &mut impl Rng, level: f64, large: bool) {
    let min_dim = img.height().min(img.width()) as f64;
    let radius = if large {
        rng.random_range(min_dim / 4.0..min_dim / 3.0)
    } else {
        rng.random_range(min_dim / 7.0..min_dim / 3.5)
    };
    let margin = if large { 0.25 } else { 0.0 };
    let cy = rng.random_range(margin * img.height() as f64..(1.0 - margin) * img.height() as f64);
    let cx = rng.random_range(margin * img.width() as f64..(1.0 - margin) * img.width() as f64);
    let feather = rng.random_range(1.2..2.2);
    blend_shape(img, rng, level, |fy, fx| {
        let d = ((fy - cy).powi(2) + (fx - cx).powi(2)).sqrt();
        smooth((radius - d) / feather)
    });
}

fn paint_box(img: &mut ImageGrid, rng: &mut impl Rng, level: f64) {
    let min_dim = img.height().min(img.width()) as f64;
    let hy = rng.random_range(min_dim / 8.0..min_dim / 3.2);
    let hx = rng.random_range(min_dim / 8.0..min_dim / 3.2);
    let cy = rng.random_range(0.0..img.height() as f64);
    let cx = rng.random_range(0.0..img.width() as f64);
    let feather = rng.random_range(1.2..2.2);
    blend_shape(img, rng, level, |fy, fx| {
        let d = ((fy - cy).abs() - hy).max((fx - cx).abs() - hx);
        smooth(-d / feather)
    });
}

fn paint_blob(img: &mut ImageGrid, rng: &mut impl Rng, level: f64) {
    let min_dim = img.height().min(img.width()) as f64;
    let sigma = rng.random_range(min_dim / 9.0..min_dim / 4.5);
    let cy = rng.random_range(0.0..img.height() as f64);
    let cx = rng.random_range(0.0..img.width() as f64);
    blend_shape(img, rng, level, |fy, fx| {
        let d2 = (fy - cy).powi(2) + (fx - cx).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    });
}

/// A small dark disc punched into whatever is already painted.
fn paint_hole(img: &mut ImageGrid, rng: &mut impl Rng, level: f64) {
    let min_dim = img.height().min(img.width()) as f64;
    let radius = rng.random_range(min_dim / 10.0..min_dim / 5.0);
    let cy = rng.random_range(0.2 * img.height() as f64..0.8 * img.height() as f64);
    let cx = rng.random_range(0.2 * img.width() as f64..0.8 * img.width() as f64);
    let feather = rng.random_range(1.2..2.0);
    blend_shape(img, rng, level, |fy, fx| {
        let d = ((fy - cy).powi(2) + (fx - cx).powi(2)).sqrt();
        smooth((radius - d) / feather)
    });
}
