//! Dataset pipeline: ingest a directory of images, push each one through the
//! measurement + reconstruction chain, and persist the resulting
//! (noisy, clean) training pairs.
//!
//! One pattern sequence is shared by every object in a dataset, like a fixed
//! physical modulator sequence; this also makes the cache a pure function of
//! the manifest fields.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gftn;
use crate::grid::ImageGrid;
use crate::optics::{measure_sequence, NoiseModel, ObjectImage, PatternSource};
use crate::recon::{differential_cgi, normalize_unit};
use crate::seed;

/// Normalization mode recorded in the manifest. Only per-image min-max is
/// implemented; the field exists so caches are self-describing.
pub const NORMALIZATION_MODE: &str = "per-image-min-max";

const INGEST_SALT: u64 = 0x696e_6765;
const SPLIT_SALT: u64 = 0x7370_6c69;

/// Everything needed to regenerate a dataset bit-exactly, plus the content
/// hash of the serialized pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub ingest_seed: u64,
    pub image_count: usize,
    pub resolution: usize,
    pub pattern_seed: u64,
    pub pattern_count: usize,
    pub noise: NoiseModel,
    pub split_seed: u64,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub normalization: String,
    pub pair_ids: Vec<String>,
    pub pairs_sha256: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.train_count + self.validation_count + self.test_count != self.image_count {
            return Err(Error::contract(format!(
                "split counts {}+{}+{} do not sum to {} images",
                self.train_count, self.validation_count, self.test_count, self.image_count
            )));
        }
        if self.pair_ids.len() != self.image_count {
            return Err(Error::contract(format!(
                "manifest lists {} pair ids for {} images",
                self.pair_ids.len(),
                self.image_count
            )));
        }
        if self.normalization != NORMALIZATION_MODE {
            return Err(Error::config(format!(
                "unknown normalization mode '{}'",
                self.normalization
            )));
        }
        Ok(())
    }
}

/// One training example: the reconstruction the network sees and the ground
/// truth it should produce. `degenerate` marks a contrast-free
/// reconstruction (flat 0.5 input).
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub noisy: ImageGrid,
    pub clean: ImageGrid,
    pub degenerate: bool,
}

/// A named source image scaled to the working resolution, values in [0, 1].
pub type NamedImage = (String, ImageGrid);

/// Fractional-coverage box resampling: each output pixel is the average of
/// the source region it covers. Identity when extents already match.
pub fn resample_area(src: &ImageGrid, out_h: usize, out_w: usize) -> ImageGrid {
    let h = src.height();
    let w = src.width();
    ImageGrid::from_fn(out_h, out_w, |i, j| {
        let y0 = i as f64 * h as f64 / out_h as f64;
        let y1 = (i + 1) as f64 * h as f64 / out_h as f64;
        let x0 = j as f64 * w as f64 / out_w as f64;
        let x1 = (j + 1) as f64 * w as f64 / out_w as f64;
        let mut acc = 0.0;
        let ys = y0.floor() as usize;
        let ye = (y1.ceil() as usize).min(h);
        let xs = x0.floor() as usize;
        let xe = (x1.ceil() as usize).min(w);
        for sy in ys..ye {
            let wy = (y1.min((sy + 1) as f64) - y0.max(sy as f64)).max(0.0);
            for sx in xs..xe {
                let wx = (x1.min((sx + 1) as f64) - x0.max(sx as f64)).max(0.0);
                acc += wy * wx * src.get(sy, sx);
            }
        }
        acc / ((y1 - y0) * (x1 - x0))
    })
}

/// Decode one image file to grayscale [0, 1]. Gray inputs map as v/255
/// directly; color inputs use Rec. 601 luminance.
pub fn decode_gray(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let grid = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            ImageGrid::from_vec(h, w, g.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?
        }
        image::DynamicImage::ImageLumaA8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            ImageGrid::from_vec(h, w, g.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            ImageGrid::from_vec(
                h,
                w,
                rgb.pixels()
                    .map(|p| {
                        let [r, g, b] = p.0;
                        ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0)
                            .clamp(0.0, 1.0)
                    })
                    .collect(),
            )?
        }
    };
    if grid.height() == 0 || grid.width() == 0 {
        return Err(Error::data(format!("{}: empty image", path.display())));
    }
    Ok(grid)
}

/// Read up to `limit` images from `dir` in a seeded random order and scale
/// them to resolution x resolution grayscale. Unreadable files are skipped
/// with a warning; an empty yield is an error.
pub fn ingest(dir: &Path, resolution: usize, ingest_seed: u64, limit: usize) -> Result<Vec<NamedImage>> {
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let mut names: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    // directory order is filesystem-dependent; sort before shuffling so the
    // seed alone fixes the selection
    names.sort_unstable();
    shuffle(&mut names, seed::mix(ingest_seed, INGEST_SALT));

    let mut out = Vec::new();
    for name in names {
        if out.len() >= limit {
            break;
        }
        let path = dir.join(&name);
        match decode_gray(&path) {
            Ok(grid) => out.push((name, resample_area(&grid, resolution, resolution))),
            Err(e) => log::warn!("skipping {name}: {e}"),
        }
    }
    if out.is_empty() {
        return Err(Error::data(format!(
            "no usable images found in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Fisher-Yates with a seeded stream, so selection order is reproducible.
fn shuffle<T>(items: &mut [T], key: u64) {
    use rand::Rng;
    let mut rng = seed::stream_rng(key, 0);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Run the measurement + reconstruction chain on every object with one
/// shared pattern sequence. Objects fan out across threads; each pair is
/// produced whole by one task and order follows the input.
pub fn generate_pairs(
    objects: &[NamedImage],
    pattern_seed: u64,
    pattern_count: usize,
    noise: &NoiseModel,
) -> Result<Vec<PairRecord>> {
    let Some((_, first)) = objects.first() else {
        return Ok(Vec::new());
    };
    let resolution = first.height();
    for (id, img) in objects {
        if img.height() != resolution || img.width() != resolution {
            return Err(Error::shape(format!(
                "object {id} is {}x{}, expected {resolution}x{resolution}",
                img.height(),
                img.width()
            )));
        }
    }
    let source = PatternSource::uniform(pattern_seed, resolution, resolution)?;
    let patterns = source.take(pattern_count);

    objects
        .par_iter()
        .map(|(id, img)| {
            let object = ObjectImage::clamped(img.clone());
            let records = measure_sequence(&object, &patterns, noise)
                .map_err(|e| annotate(e, id))?;
            let recon = differential_cgi(&patterns, &records, pattern_count)
                .map_err(|e| annotate(e, id))?;
            let normalized = normalize_unit(&recon.pixels);
            Ok(PairRecord {
                id: id.clone(),
                noisy: normalized.pixels,
                clean: img.clone(),
                degenerate: normalized.degenerate,
            })
        })
        .collect()
}

fn annotate(e: Error, id: &str) -> Error {
    match e {
        Error::DegenerateMeasurement(msg) => {
            Error::DegenerateMeasurement(format!("object {id}: {msg}"))
        }
        other => other,
    }
}

/// Partition sizes for `total` items under the given ratios, by largest
/// remainder so the assigned total is round(total * sum(ratios)).
pub fn split_counts(total: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("split ratios must be non-negative"));
    }
    let sum: f64 = r.iter().sum();
    if sum > 1.0 + 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum} > 1")));
    }
    let assign_total = (total as f64 * sum).round() as usize;
    let quotas: Vec<f64> = r.iter().map(|x| total as f64 * x).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = assign_total.saturating_sub(counts.iter().sum());
    // hand remaining slots to the largest fractional parts; ties go to the
    // earlier bucket so the result is deterministic
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    Ok([counts[0], counts[1], counts[2]])
}

/// Seeded shuffle followed by a disjoint (train, validation, test) cut of
/// the given sizes.
pub fn split_with_counts(
    pairs: Vec<PairRecord>,
    counts: [usize; 3],
    split_seed: u64,
) -> Result<(Vec<PairRecord>, Vec<PairRecord>, Vec<PairRecord>)> {
    let total: usize = counts.iter().sum();
    if total > pairs.len() {
        return Err(Error::contract(format!(
            "split needs {total} pairs but only {} exist",
            pairs.len()
        )));
    }
    for (count, name) in counts.iter().zip(["train", "validation", "test"]) {
        if *count == 0 {
            log::debug!("{name} partition is empty");
        }
    }
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    shuffle(&mut indices, seed::mix(split_seed, SPLIT_SALT));
    let mut slots: Vec<Option<PairRecord>> = pairs.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<PairRecord> {
        ids.iter()
            .map(|&i| slots[i].take().expect("each index appears once"))
            .collect()
    };
    let train = take(&indices[..counts[0]]);
    let val = take(&indices[counts[0]..counts[0] + counts[1]]);
    let test = take(&indices[counts[0] + counts[1]..total]);
    Ok((train, val, test))
}

/// Ratio-based split; see [`split_counts`] for the apportionment rule.
pub fn split(
    pairs: Vec<PairRecord>,
    ratios: (f64, f64, f64),
    split_seed: u64,
) -> Result<(Vec<PairRecord>, Vec<PairRecord>, Vec<PairRecord>)> {
    let counts = split_counts(pairs.len(), ratios)?;
    split_with_counts(pairs, counts, split_seed)
}

fn grid_record(img: &ImageGrid) -> (Vec<usize>, &[f64]) {
    (vec![img.height(), img.width()], img.data())
}

/// Serialize pairs as alternating noisy/clean rank-2 tensors.
fn encode_pairs(pairs: &[PairRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for p in pairs {
        let (shape, data) = grid_record(&p.noisy);
        gftn::write_tensor(&mut buf, &shape, data)?;
        let (shape, data) = grid_record(&p.clean);
        gftn::write_tensor(&mut buf, &shape, data)?;
    }
    Ok(buf)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// Write `dir/manifest.json` and `dir/pairs.gftn` atomically. The returned
/// manifest carries the content hash of the pair file.
pub fn persist(
    dir: &Path,
    manifest: &DatasetManifest,
    pairs: &[PairRecord],
) -> Result<DatasetManifest> {
    if manifest.image_count != pairs.len() {
        return Err(Error::contract(format!(
            "manifest says {} images but {} pairs were given",
            manifest.image_count,
            pairs.len()
        )));
    }
    for (p, id) in pairs.iter().zip(&manifest.pair_ids) {
        if p.id != *id {
            return Err(Error::contract(format!(
                "pair id {} does not match manifest id {id}",
                p.id
            )));
        }
    }
    let bytes = encode_pairs(pairs)?;
    let mut stamped = manifest.clone();
    stamped.pairs_sha256 = sha256_hex(&bytes);
    stamped.validate()?;

    fs::create_dir_all(dir)?;
    let manifest_json =
        serde_json::to_string_pretty(&stamped).map_err(|e| Error::data(e.to_string()))?;
    write_atomic(&dir.join("pairs.gftn"), &bytes)?;
    write_atomic(&dir.join("manifest.json"), manifest_json.as_bytes())?;
    Ok(stamped)
}

/// Temp file + rename in the destination directory, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::invalid("path has no parent"))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a persisted dataset, verifying the manifest hash and every shape.
pub fn load(dir: &Path) -> Result<(DatasetManifest, Vec<PairRecord>)> {
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::load(format!("manifest: {e}")))?;
    manifest.validate()?;

    let bytes = fs::read(dir.join("pairs.gftn"))?;
    let actual = sha256_hex(&bytes);
    if actual != manifest.pairs_sha256 {
        return Err(Error::StaleCache(format!(
            "pairs.gftn hash {actual} does not match manifest {}",
            manifest.pairs_sha256
        )));
    }

    let mut cursor = Cursor::new(&bytes[..]);
    let mut pairs = Vec::with_capacity(manifest.image_count);
    for id in &manifest.pair_ids {
        let read_grid = |cursor: &mut Cursor<&[u8]>| -> Result<ImageGrid> {
            let (shape, data) = gftn::read_tensor(cursor)?;
            match shape[..] {
                [h, w] if h == manifest.resolution && w == manifest.resolution => {
                    ImageGrid::from_vec(h, w, data)
                }
                _ => Err(Error::load(format!(
                    "pair {id}: tensor shape {shape:?} does not match resolution {}",
                    manifest.resolution
                ))),
            }
        };
        let noisy = read_grid(&mut cursor)?;
        let clean = read_grid(&mut cursor)?;
        let degenerate = {
            let (lo, hi) = noisy.min_max();
            lo == hi
        };
        pairs.push(PairRecord {
            id: id.clone(),
            noisy,
            clean,
            degenerate,
        });
    }
    if (cursor.position() as usize) < bytes.len() {
        return Err(Error::load("pairs.gftn has trailing data"));
    }
    Ok((manifest, pairs))
}
