//! The eight release gates of this repository, one test per gate. Each test
//! prints a single PASS/FAIL line with the measured numbers behind the
//! verdict; run with `-- --nocapture` to see them all together.

use std::fs;
use std::path::Path;
use std::process::Command;

use ghostforge_core::filters::{bilateral_filter, BilateralConfig};
use ghostforge_core::grid::ImageGrid;
use ghostforge_core::metrics::{ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use ghostforge_core::optics::{measure_sequence, NoiseModel, ObjectImage, PatternSource};
use ghostforge_core::recon::{differential_cgi, normalize_unit};
use ghostforge_core::seed;
use ghostforge_core::synth;
use ghostforge_core::tensor::gradcheck::central_fd;
use ghostforge_core::tensor::{Tape, Tensor, Var};
use ghostforge_core::unet::{self, UNetConfig};
use rand::Rng;
use tempfile::TempDir;

/// Prints the verdict line for one gate, then enforces it.
fn gate(name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{name}: {verdict} ({detail})");
    assert!(pass, "{name} failed: {detail}");
}

fn rng_for(salt: u64) -> impl Rng {
    seed::stream_rng(seed::mix(0x6163_6370, salt), 0)
}

fn random_object(rng: &mut impl Rng, h: usize, w: usize) -> ObjectImage {
    ObjectImage::new(ImageGrid::from_fn(h, w, |_, _| rng.random())).unwrap()
}

#[test]
fn criterion_1_differential_matches_brute_force() {
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let mut rng = rng_for(100 + case);
        let object = random_object(&mut rng, 4, 4);
        let patterns = PatternSource::uniform(1000 + case, 4, 4).unwrap().take(8);
        let records = measure_sequence(&object, &patterns, &NoiseModel::None).unwrap();
        let recon = differential_cgi(&patterns, &records, 8).unwrap();

        // literal superposition: O = (1/N) sum_i (S_i/R_i - <S/R>) I_i
        let ratios: Vec<f64> = records.iter().map(|r| r.s / r.r).collect();
        let mean_ratio = ratios.iter().sum::<f64>() / 8.0;
        for y in 0..4 {
            for x in 0..4 {
                let mut acc = 0.0;
                for (pat, ratio) in patterns.iter().zip(&ratios) {
                    acc += (ratio - mean_ratio) * pat.pixels.get(y, x);
                }
                let diff = (recon.pixels.get(y, x) - acc / 8.0).abs();
                worst = worst.max(diff);
            }
        }
    }
    gate(
        "criterion 1, differential oracle",
        worst <= 1e-12,
        &format!("20 objects, N=8, worst |diff| {worst:.3e} <= 1e-12"),
    );
}

#[test]
fn criterion_2_null_and_degeneracy() {
    let mut worst: f64 = 0.0;
    for s in 0..10 {
        // constant object: every weight S/R - <S/R> collapses to rounding noise
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 0.3)).unwrap();
        let patterns = PatternSource::uniform(2000 + s, 4, 4).unwrap().take(16);
        let records = measure_sequence(&object, &patterns, &NoiseModel::None).unwrap();
        let flat = differential_cgi(&patterns, &records, 16).unwrap();
        for &v in flat.pixels.data() {
            worst = worst.max(v.abs());
        }

        // N=1: the single ratio equals its own mean exactly
        let mut rng = rng_for(200 + s);
        let object = random_object(&mut rng, 4, 4);
        let records = measure_sequence(&object, &patterns, &NoiseModel::None).unwrap();
        let single = differential_cgi(&patterns, &records, 1).unwrap();
        for &v in single.pixels.data() {
            worst = worst.max(v.abs());
        }
    }
    gate(
        "criterion 2, null and degeneracy",
        worst <= 1e-10,
        &format!("10 seeds, constant object and N=1, worst |pixel| {worst:.3e} <= 1e-10"),
    );
}

#[test]
fn criterion_3_quality_improves_with_pattern_count() {
    let counts = [250usize, 500, 1000, 2000];
    let objects = synth::generate_objects(99, 10, 32, 32).unwrap();
    let source = PatternSource::uniform(7, 32, 32).unwrap();
    let patterns = source.take(2000);

    // per-object SSIM at each count
    let mut scores = vec![[0.0f64; 4]; objects.len()];
    for (row, (_, img)) in scores.iter_mut().zip(&objects) {
        let object = ObjectImage::clamped(img.clone());
        let records = measure_sequence(&object, &patterns, &NoiseModel::None).unwrap();
        for (slot, &n) in row.iter_mut().zip(&counts) {
            let recon = differential_cgi(&patterns, &records, n).unwrap();
            let normalized = normalize_unit(&recon.pixels);
            *slot = ssim(&normalized.pixels, object.transmittance()).unwrap();
        }
    }

    let means: Vec<f64> = (0..4)
        .map(|k| scores.iter().map(|row| row[k]).sum::<f64>() / scores.len() as f64)
        .collect();
    // each step must be non-decreasing within one standard error of the
    // paired per-object differences
    let mut pass = true;
    let mut details = format!(
        "means {:.4} -> {:.4} -> {:.4} -> {:.4}",
        means[0], means[1], means[2], means[3]
    );
    for k in 0..3 {
        let diffs: Vec<f64> = scores.iter().map(|row| row[k + 1] - row[k]).collect();
        let n = diffs.len() as f64;
        let mean_d = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        details.push_str(&format!("; step {}: {mean_d:+.4} (se {se:.4})", k + 1));
        if mean_d < -se {
            pass = false;
        }
    }
    gate("criterion 3, quality trend over N", pass, &details);
}

const FD_STEP: f64 = 1e-5;

/// Worst finite-difference relative error for one graph. `graph` registers
/// the split tensors as leaves in order and returns the scalar loss with
/// those leaf vars; the closure rebuilds the tape per probe so only forward
/// code is exercised numerically.
fn fd_worst(
    shapes: &[Vec<usize>],
    theta: &[f64],
    graph: impl Fn(&mut Tape, Vec<Tensor>) -> (Var, Vec<Var>),
) -> f64 {
    let split = |t: &[f64]| -> Vec<Tensor> {
        let mut parts = Vec::new();
        let mut offset = 0;
        for shape in shapes {
            let n: usize = shape.iter().product();
            parts.push(Tensor::new(shape.clone(), t[offset..offset + n].to_vec()).unwrap());
            offset += n;
        }
        parts
    };
    let mut tape = Tape::new();
    let (loss, leaves) = graph(&mut tape, split(theta));
    tape.backward(loss).unwrap();
    let mut analytic = Vec::with_capacity(theta.len());
    for &leaf in &leaves {
        analytic.extend_from_slice(tape.grad(leaf).expect("leaf missing gradient"));
    }
    let mut loss_fn = |t: &[f64]| {
        let mut tape = Tape::new();
        let (loss, _) = graph(&mut tape, split(t));
        tape.value(loss).data()[0]
    };
    central_fd(&mut loss_fn, theta, &analytic, FD_STEP).max_rel_err
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

#[test]
fn criterion_4_gradients_match_finite_differences() {
    let mut rng = rng_for(400);
    let mut worst_op: f64 = 0.0;
    let mut worst_name = "";

    let target44 = Tensor::new(vec![1, 2, 4, 4], uniform(&mut rng, 32, 0.0, 1.0)).unwrap();
    let target23 = Tensor::new(vec![1, 2, 3, 3], uniform(&mut rng, 18, 0.0, 1.0)).unwrap();
    let target66 = Tensor::new(vec![1, 2, 6, 6], uniform(&mut rng, 72, 0.0, 1.0)).unwrap();

    // every differentiable op, inputs kept away from relu/maxpool kinks
    let mut check = |name: &'static str, err: f64| {
        if err > worst_op {
            worst_op = err;
            worst_name = name;
        }
    };

    let theta = uniform(&mut rng, 2 * 3 * 5 * 5 + 4 * 3 * 3 * 3 + 4, -1.0, 1.0);
    let t = Tensor::new(vec![2, 4, 5, 5], uniform(&mut rng, 200, 0.0, 1.0)).unwrap();
    check(
        "conv2d",
        fd_worst(
            &[vec![2, 3, 5, 5], vec![4, 3, 3, 3], vec![4]],
            &theta,
            |tape, parts| {
                let mut it = parts.into_iter();
                let x = tape.leaf(it.next().unwrap(), true);
                let k = tape.leaf(it.next().unwrap(), true);
                let b = tape.leaf(it.next().unwrap(), true);
                let tv = tape.leaf(t.clone(), false);
                let y = tape.conv2d(x, k, b, (1, 1)).unwrap();
                (tape.mse_loss(y, tv).unwrap(), vec![x, k, b])
            },
        ),
    );

    let theta: Vec<f64> = (0..32)
        .map(|_| {
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            sign * (0.2 + 0.8 * rng.random::<f64>())
        })
        .collect();
    check(
        "relu",
        fd_worst(&[vec![1, 2, 4, 4]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            let tv = tape.leaf(target44.clone(), false);
            let y = tape.relu(x);
            (tape.mse_loss(y, tv).unwrap(), vec![x])
        }),
    );

    let theta = uniform(&mut rng, 32, -2.0, 2.0);
    check(
        "sigmoid",
        fd_worst(&[vec![1, 2, 4, 4]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            let tv = tape.leaf(target44.clone(), false);
            let y = tape.sigmoid(x);
            (tape.mse_loss(y, tv).unwrap(), vec![x])
        }),
    );

    // shuffled progression: pairwise gaps dwarf the probe step
    let mut theta: Vec<f64> = (0..72).map(|i| i as f64 * 0.05).collect();
    for i in (1..theta.len()).rev() {
        let j = rng.random_range(0..=i);
        theta.swap(i, j);
    }
    check(
        "maxpool2d",
        fd_worst(&[vec![1, 2, 6, 6]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            let tv = tape.leaf(target23.clone(), false);
            let y = tape.maxpool2d(x).unwrap();
            (tape.mse_loss(y, tv).unwrap(), vec![x])
        }),
    );

    let theta = uniform(&mut rng, 18, -1.0, 1.0);
    check(
        "upsample2d",
        fd_worst(&[vec![1, 2, 3, 3]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            let tv = tape.leaf(target66.clone(), false);
            let y = tape.upsample2d_nearest(x).unwrap();
            (tape.mse_loss(y, tv).unwrap(), vec![x])
        }),
    );

    let theta = uniform(&mut rng, 18 + 9, -1.0, 1.0);
    let t = Tensor::new(vec![1, 3, 3, 3], uniform(&mut rng, 27, 0.0, 1.0)).unwrap();
    check(
        "concat_channels",
        fd_worst(&[vec![1, 2, 3, 3], vec![1, 1, 3, 3]], &theta, |tape, parts| {
            let mut it = parts.into_iter();
            let a = tape.leaf(it.next().unwrap(), true);
            let b = tape.leaf(it.next().unwrap(), true);
            let tv = tape.leaf(t.clone(), false);
            let y = tape.concat_channels(a, b).unwrap();
            (tape.mse_loss(y, tv).unwrap(), vec![a, b])
        }),
    );

    let theta = uniform(&mut rng, 32, -1.0, 1.0);
    check(
        "dropout",
        fd_worst(&[vec![1, 2, 4, 4]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            let tv = tape.leaf(target44.clone(), false);
            let y = tape.dropout(x, 0.4, true, 0x6d61_736b).unwrap();
            (tape.mse_loss(y, tv).unwrap(), vec![x])
        }),
    );

    let theta = uniform(&mut rng, 32, -1.0, 1.0);
    check(
        "mse_loss",
        fd_worst(&[vec![1, 1, 4, 4], vec![1, 1, 4, 4]], &theta, |tape, parts| {
            let mut it = parts.into_iter();
            let pred = tape.leaf(it.next().unwrap(), true);
            let tgt = tape.leaf(it.next().unwrap(), true);
            (tape.mse_loss(pred, tgt).unwrap(), vec![pred, tgt])
        }),
    );

    let theta = uniform(&mut rng, 18, -1.0, 1.0);
    check(
        "sum",
        fd_worst(&[vec![2, 1, 3, 3]], &theta, |tape, parts| {
            let x = tape.leaf(parts.into_iter().next().unwrap(), true);
            (tape.sum(x), vec![x])
        }),
    );

    // full 16-pixel depth-1 network, all parameters at once
    let cfg = UNetConfig {
        input_size: 16,
        depth: 1,
        base_channels: 2,
        first_kernel: 9,
        inner_kernel: 3,
        dropout_rate: 0.0,
        seed: 123,
    };
    let base = unet::build(&cfg).unwrap();
    let mut theta = Vec::new();
    for layer in &base.layers {
        theta.extend_from_slice(layer.kernel.data());
        theta.extend_from_slice(layer.bias.data());
    }
    let x = Tensor::new(vec![1, 1, 16, 16], uniform(&mut rng, 256, 0.0, 1.0)).unwrap();
    let target = Tensor::new(vec![1, 1, 16, 16], uniform(&mut rng, 256, 0.0, 1.0)).unwrap();
    let rebuild = |t: &[f64]| {
        let mut params = base.clone();
        let mut offset = 0;
        for layer in &mut params.layers {
            let kn = layer.kernel.numel();
            layer.kernel.data_mut().copy_from_slice(&t[offset..offset + kn]);
            offset += kn;
            let bn = layer.bias.numel();
            layer.bias.data_mut().copy_from_slice(&t[offset..offset + bn]);
            offset += bn;
        }
        params
    };
    let mut pass = unet::forward_on_tape(&base, x.clone(), false, 0).unwrap();
    let tv = pass.tape.leaf(target.clone(), false);
    let loss = pass.tape.mse_loss(pass.output, tv).unwrap();
    pass.tape.backward(loss).unwrap();
    let mut analytic = Vec::with_capacity(theta.len());
    for lv in &pass.layer_vars {
        analytic.extend_from_slice(pass.tape.grad(lv.kernel).expect("kernel grad"));
        analytic.extend_from_slice(pass.tape.grad(lv.bias).expect("bias grad"));
    }
    let mut loss_fn = |t_flat: &[f64]| {
        let params = rebuild(t_flat);
        let mut pass = unet::forward_on_tape(&params, x.clone(), false, 0).unwrap();
        let tv = pass.tape.leaf(target.clone(), false);
        let loss = pass.tape.mse_loss(pass.output, tv).unwrap();
        pass.tape.value(loss).data()[0]
    };
    let net_err = central_fd(&mut loss_fn, &theta, &analytic, FD_STEP).max_rel_err;

    gate(
        "criterion 4, gradient correctness",
        worst_op < 1e-4 && net_err < 1e-3,
        &format!(
            "worst per-op rel err {worst_op:.3e} ({worst_name}) < 1e-4, full net {net_err:.3e} < 1e-3"
        ),
    );
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ghostforge"));
    cmd.env_remove("GHOSTFORGE_THREADS");
    cmd
}

fn run(cmd: &mut Command) {
    let out = cmd.output().expect("failed to spawn ghostforge");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

/// Mean SSIM per method from the `average` rows of a metrics CSV.
fn average_ssims(csv_path: &Path) -> Vec<(String, f64)> {
    let text = fs::read_to_string(csv_path).unwrap();
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            (fields[0] == "average")
                .then(|| (fields[1].to_string(), fields[4].parse().unwrap()))
        })
        .collect()
}

#[test]
fn criterion_5_method_ordering_at_desk_scale() {
    let dir = TempDir::new().unwrap();
    // the default configuration is the full desk recipe: 200 synthetic
    // pairs at 32x32, N=500, three epochs, 40 held-out test images
    run(bin().current_dir(dir.path()).args(["gen-dataset", "--out", "data"]));
    run(bin()
        .current_dir(dir.path())
        .args(["train", "--dataset", "data", "--out", "t"]));
    run(bin().current_dir(dir.path()).args([
        "evaluate",
        "--dataset",
        "data",
        "--checkpoint",
        "t/checkpoint.ckpt",
        "--split",
        "test",
        "--out",
        "eval",
    ]));

    let averages = average_ssims(&dir.path().join("eval/metrics.csv"));
    let of = |m: &str| {
        averages
            .iter()
            .find(|(name, _)| name == m)
            .unwrap_or_else(|| panic!("missing average row for {m}"))
            .1
    };
    let (cgi, bilateral, dnn, dnn_filters) =
        (of("cgi"), of("bilateral"), of("dnn"), of("dnn+filters"));
    let pass = dnn > bilateral && bilateral > cgi && dnn_filters >= dnn - 0.01;
    gate(
        "criterion 5, method ordering",
        pass,
        &format!(
            "mean ssim: cgi {cgi:.4} < bilateral {bilateral:.4} < dnn {dnn:.4}, dnn+filters {dnn_filters:.4} >= dnn - 0.01"
        ),
    );
}

#[test]
fn criterion_6_ssim_contract() {
    let mut rng = rng_for(600);
    let mut detail = String::new();

    // symmetry
    let mut worst_sym: f64 = 0.0;
    for _ in 0..5 {
        let a = ImageGrid::from_fn(16, 16, |_, _| rng.random());
        let b = ImageGrid::from_fn(16, 16, |_, _| rng.random());
        worst_sym = worst_sym.max((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs());
    }
    let sym_ok = worst_sym <= 1e-12;
    detail.push_str(&format!("symmetry {worst_sym:.1e}"));

    // identity
    let a = ImageGrid::from_fn(16, 16, |_, _| rng.random());
    let identity_ok = ssim(&a, &a).unwrap() == 1.0;

    // constant images leave only the luminance term
    let c1 = ImageGrid::filled(16, 16, 0.5);
    let c2 = ImageGrid::filled(16, 16, 0.25);
    let closed = (2.0 * 0.5 * 0.25 + SSIM_C1) / (0.5 * 0.5 + 0.25 * 0.25 + SSIM_C1);
    let got = ssim(&c1, &c2).unwrap();
    let const_ok = (got - closed).abs() <= 1e-6;
    detail.push_str(&format!(", constant {got:.6} vs {closed:.6}"));

    // independent per-window oracle with an explicit 2-D window
    let a = ImageGrid::from_fn(14, 17, |_, _| rng.random());
    let b = ImageGrid::from_fn(14, 17, |_, _| rng.random());
    let oracle = windowed_ssim_oracle(&a, &b);
    let got = ssim(&a, &b).unwrap();
    let oracle_ok = (got - oracle).abs() <= 1e-10;
    detail.push_str(&format!(", oracle |diff| {:.1e}", (got - oracle).abs()));

    gate(
        "criterion 6, ssim contract",
        sym_ok && identity_ok && const_ok && oracle_ok,
        &detail,
    );
}

/// Straight-line SSIM: explicit 2-D Gaussian window, centered moments per
/// window, mean over all fully interior windows.
fn windowed_ssim_oracle(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let k = SSIM_WINDOW;
    let half = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    let mut total = 0.0;
    for y in 0..k {
        for x in 0..k {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            win[y * k + x] = v;
            total += v;
        }
    }
    for v in &mut win {
        *v /= total;
    }

    let (h, w) = (a.height(), a.width());
    let mut acc = 0.0;
    let mut count = 0;
    for wy in 0..=(h - k) {
        for wx in 0..=(w - k) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let wgt = win[y * k + x];
                    ma += wgt * a.get(wy + y, wx + x);
                    mb += wgt * b.get(wy + y, wx + x);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let wgt = win[y * k + x];
                    let da = a.get(wy + y, wx + x) - ma;
                    let db = b.get(wy + y, wx + x) - mb;
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            }
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn criterion_7_pipeline_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let obj = a.path().join("obj.pgm");
    ImageGrid::from_fn(16, 16, |y, x| ((y * 16 + x) % 200) as f64 / 255.0)
        .save_pgm(&obj)
        .unwrap();
    fs::copy(&obj, b.path().join("obj.pgm")).unwrap();

    // first run: explicit flags, four worker threads
    let threads_a = "4";
    run(bin()
        .current_dir(a.path())
        .env("GHOSTFORGE_THREADS", threads_a)
        .args([
            "simulate",
            "--object",
            "obj.pgm",
            "--seed",
            "5",
            "--n-patterns",
            "64",
            "--size",
            "16",
            "--out",
            "sim",
        ]));
    run(bin()
        .current_dir(a.path())
        .env("GHOSTFORGE_THREADS", threads_a)
        .args([
            "gen-dataset",
            "--count",
            "10",
            "--size",
            "16",
            "--n-patterns",
            "64",
            "--out",
            "data",
        ]));
    run(bin()
        .current_dir(a.path())
        .env("GHOSTFORGE_THREADS", threads_a)
        .args(["train", "--dataset", "data", "--epochs", "1", "--out", "t"]));
    run(bin()
        .current_dir(a.path())
        .env("GHOSTFORGE_THREADS", threads_a)
        .args([
            "evaluate",
            "--dataset",
            "data",
            "--checkpoint",
            "t/checkpoint.ckpt",
            "--split",
            "test",
            "--out",
            "eval",
        ]));

    // second run: replayed purely from the first run's manifests, from a
    // different working directory and with a different thread cap
    for out in ["sim", "data", "t", "eval"] {
        let manifest = a.path().join(out).join("run-manifest.json");
        let manifest_json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
        let command = manifest_json["command"].as_str().unwrap().to_string();
        run(bin()
            .current_dir(b.path())
            .env("GHOSTFORGE_THREADS", "1")
            .args([&command, "--config", &manifest.to_string_lossy()]));
    }

    // every file of every stage must match bit for bit
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for out in ["sim", "data", "t", "eval"] {
        let dir_a = a.path().join(out);
        let dir_b = b.path().join(out);
        let mut names: Vec<String> = fs::read_dir(&dir_a)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let bytes_a = fs::read(dir_a.join(&name)).unwrap();
            let bytes_b = fs::read(dir_b.join(&name))
                .unwrap_or_else(|e| panic!("replay did not produce {out}/{name}: {e}"));
            compared += 1;
            if bytes_a != bytes_b {
                mismatched.push(format!("{out}/{name}"));
            }
        }
    }
    gate(
        "criterion 7, bit-exact replay",
        mismatched.is_empty(),
        &format!(
            "{compared} files compared across 4 stages, threads {threads_a} vs 1, mismatches: {:?}",
            mismatched
        ),
    );
}

#[test]
fn criterion_8_bilateral_contract() {
    let cfg = BilateralConfig::default();

    // constant fixed point, exact
    let flat = ImageGrid::filled(12, 12, 0.37);
    let filtered = bilateral_filter(&flat, &cfg).unwrap();
    let fixed_ok = filtered.data() == flat.data();

    // output bounded by the input range on 100 random images
    let mut rng = rng_for(800);
    let mut range_ok = true;
    for _ in 0..100 {
        let img = ImageGrid::from_fn(10, 10, |_, _| rng.random());
        let (lo, hi) = img.min_max();
        let out = bilateral_filter(&img, &cfg).unwrap();
        if out.data().iter().any(|&v| v < lo || v > hi) {
            range_ok = false;
            break;
        }
    }

    // with a huge range sigma the filter degenerates to a plain spatial
    // Gaussian; compare against an independent evaluation
    let wide = BilateralConfig {
        radius: 3,
        sigma_spatial: 1.4,
        sigma_range: 1e6,
    };
    let img = ImageGrid::from_fn(12, 12, |_, _| rng.random());
    let got = bilateral_filter(&img, &wide).unwrap();
    let mut worst: f64 = 0.0;
    let (h, w) = (img.height(), img.width());
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -3..=3isize {
                for dx in -3..=3isize {
                    let ny = (y + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let wgt = (-((dy * dy + dx * dx) as f64)
                        / (2.0 * wide.sigma_spatial * wide.sigma_spatial))
                        .exp();
                    num += wgt * img.get(ny, nx);
                    den += wgt;
                }
            }
            worst = worst.max((got.get(y as usize, x as usize) - num / den).abs());
        }
    }
    let gaussian_ok = worst < 1e-6;

    gate(
        "criterion 8, bilateral contract",
        fixed_ok && range_ok && gaussian_ok,
        &format!(
            "fixed point exact: {fixed_ok}, range bounded on 100 images: {range_ok}, Gaussian limit |diff| {worst:.1e} < 1e-6"
        ),
    );
}
