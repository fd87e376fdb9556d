//! The denoising network: a small encoder/decoder with skip connections.
//!
//! Per level the contracting path applies two convolutions with ReLU and a
//! 2x2 max pool; the bottleneck adds dropout; the expansive path upsamples,
//! concatenates the matching skip tensor, and applies two more convolutions;
//! a 1x1 convolution with a sigmoid produces the output image. The first
//! three convolutions in forward order use `first_kernel` (9 by default),
//! the rest `inner_kernel`. All convolutions zero-pad to keep the spatial
//! size, so the output shape always equals the input shape.

pub mod train;

use std::fs;
use std::io::Cursor;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::filters::{bilateral_filter, BilateralConfig};
use crate::gftn;
use crate::grid::ImageGrid;
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

const INIT_SALT: u64 = 0x696e_6974;
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture hyperparameters. `seed` fixes the weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub first_kernel: usize,
    pub inner_kernel: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 32,
            depth: 2,
            base_channels: 8,
            first_kernel: 9,
            inner_kernel: 3,
            dropout_rate: 0.8,
            seed: 7,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.input_size.is_power_of_two() {
            return Err(Error::config(format!(
                "input_size must be a power of two, got {}",
                self.input_size
            )));
        }
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.input_size >> self.depth == 0 {
            return Err(Error::config(format!(
                "input_size {} cannot be pooled {} times",
                self.input_size, self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if self.first_kernel.is_multiple_of(2) || self.inner_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernels must be odd, got {} and {}",
                self.first_kernel, self.inner_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Shape contract for one convolution in the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

/// The full layer sequence in forward (and parameter) order.
pub fn layer_plan(cfg: &UNetConfig) -> Result<Vec<ConvSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let mut conv_count = 0;
    let mut next_kernel = |cfg: &UNetConfig| {
        let k = if conv_count < 3 {
            cfg.first_kernel
        } else {
            cfg.inner_kernel
        };
        conv_count += 1;
        k
    };
    let push = |specs: &mut Vec<ConvSpec>, name: String, ic: usize, oc: usize, k: usize| {
        specs.push(ConvSpec {
            name,
            in_channels: ic,
            out_channels: oc,
            kernel: k,
        });
    };

    let mut in_c = 1;
    for level in 0..cfg.depth {
        let out_c = cfg.base_channels << level;
        let k = next_kernel(cfg);
        push(&mut specs, format!("enc{level}.conv0"), in_c, out_c, k);
        let k = next_kernel(cfg);
        push(&mut specs, format!("enc{level}.conv1"), out_c, out_c, k);
        in_c = out_c;
    }
    let bottom_c = cfg.base_channels << cfg.depth;
    let k = next_kernel(cfg);
    push(&mut specs, "bottleneck.conv0".into(), in_c, bottom_c, k);
    let k = next_kernel(cfg);
    push(&mut specs, "bottleneck.conv1".into(), bottom_c, bottom_c, k);
    for level in (0..cfg.depth).rev() {
        let skip_c = cfg.base_channels << level;
        let below_c = cfg.base_channels << (level + 1);
        let k = next_kernel(cfg);
        push(
            &mut specs,
            format!("dec{level}.conv0"),
            below_c + skip_c,
            skip_c,
            k,
        );
        let k = next_kernel(cfg);
        push(&mut specs, format!("dec{level}.conv1"), skip_c, skip_c, k);
    }
    push(&mut specs, "head".into(), cfg.base_channels, 1, 1);
    Ok(specs)
}

/// One convolution's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// All trainable state plus the config that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub config: UNetConfig,
    pub layers: Vec<ConvLayer>,
}

impl UNetParams {
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.numel() + l.bias.numel())
            .sum()
    }
}

/// Initialize parameters for `cfg`, deterministically from `cfg.seed`.
/// ReLU convolutions draw He-uniform weights, the sigmoid head Glorot.
pub fn build(cfg: &UNetConfig) -> Result<UNetParams> {
    let plan = layer_plan(cfg)?;
    let mut rng = seed::stream_rng(seed::mix(cfg.seed, INIT_SALT), 0);
    let head_index = plan.len() - 1;
    let mut layers = Vec::with_capacity(plan.len());
    for (i, spec) in plan.into_iter().enumerate() {
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let fan_out = (spec.out_channels * spec.kernel * spec.kernel) as f64;
        let limit = if i == head_index {
            (6.0 / (fan_in + fan_out)).sqrt()
        } else {
            (6.0 / fan_in).sqrt()
        };
        let numel = spec.out_channels * spec.in_channels * spec.kernel * spec.kernel;
        let data: Vec<f64> = (0..numel)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        let kernel = Tensor::new(
            vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
            data,
        )?;
        let bias = Tensor::zeros(vec![spec.out_channels]);
        layers.push(ConvLayer { spec, kernel, bias });
    }
    Ok(UNetParams {
        config: *cfg,
        layers,
    })
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub kernel: Var,
    pub bias: Var,
}

/// A recorded forward pass, ready for a backward sweep.
pub struct ForwardPass {
    pub tape: Tape,
    pub input: Var,
    pub output: Var,
    pub layer_vars: Vec<LayerVars>,
}

/// Record a forward pass on a fresh tape with parameters as gradient leaves.
pub fn forward_on_tape(
    params: &UNetParams,
    x: Tensor,
    training: bool,
    mask_seed: u64,
) -> Result<ForwardPass> {
    forward_impl(params, x, training, mask_seed, false)
}

fn forward_impl(
    params: &UNetParams,
    x: Tensor,
    training: bool,
    mask_seed: u64,
    zero_skips: bool,
) -> Result<ForwardPass> {
    let cfg = &params.config;
    cfg.validate()?;
    match x.shape() {
        [_, 1, h, w] if *h == cfg.input_size && *w == cfg.input_size => {}
        other => {
            return Err(Error::shape(format!(
                "network input must be Nx1x{0}x{0}, got {other:?}",
                cfg.input_size
            )))
        }
    }

    let mut tape = Tape::new();
    let input = tape.leaf(x, false);
    let layer_vars: Vec<LayerVars> = params
        .layers
        .iter()
        .map(|l| LayerVars {
            kernel: tape.leaf(l.kernel.clone(), true),
            bias: tape.leaf(l.bias.clone(), true),
        })
        .collect();

    let mut next = 0usize;
    let mut conv_relu = |tape: &mut Tape, cur: Var| -> Result<Var> {
        let lv = layer_vars[next];
        let k = params.layers[next].spec.kernel;
        next += 1;
        let pad = ((k - 1) / 2, (k - 1) / 2);
        let y = tape.conv2d(cur, lv.kernel, lv.bias, pad)?;
        Ok(tape.relu(y))
    };

    let mut cur = input;
    let mut skips = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        cur = conv_relu(&mut tape, cur)?;
        cur = conv_relu(&mut tape, cur)?;
        skips.push(cur);
        cur = tape.maxpool2d(cur)?;
    }
    cur = conv_relu(&mut tape, cur)?;
    cur = conv_relu(&mut tape, cur)?;
    cur = tape.dropout(cur, cfg.dropout_rate, training, mask_seed)?;
    for level in (0..cfg.depth).rev() {
        cur = tape.upsample2d_nearest(cur)?;
        let skip = if zero_skips {
            let shape = tape.shape(skips[level]).to_vec();
            tape.leaf(Tensor::zeros(shape), false)
        } else {
            skips[level]
        };
        cur = tape.concat_channels(cur, skip)?;
        cur = conv_relu(&mut tape, cur)?;
        cur = conv_relu(&mut tape, cur)?;
    }
    // head: 1x1 convolution, sigmoid
    let lv = layer_vars[next];
    let y = tape.conv2d(cur, lv.kernel, lv.bias, (0, 0))?;
    let output = tape.sigmoid(y);

    Ok(ForwardPass {
        tape,
        input,
        output,
        layer_vars,
    })
}

/// Forward pass returning only the output tensor.
pub fn forward(params: &UNetParams, x: Tensor, training: bool, mask_seed: u64) -> Result<Tensor> {
    let pass = forward_on_tape(params, x, training, mask_seed)?;
    Ok(pass.tape.value(pass.output).clone())
}

fn grid_to_tensor(img: &ImageGrid) -> Tensor {
    Tensor::new(
        vec![1, 1, img.height(), img.width()],
        img.data().to_vec(),
    )
    .expect("grid dimensions are consistent")
}

fn tensor_to_grid(t: &Tensor) -> ImageGrid {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    ImageGrid::from_vec(h, w, t.data().to_vec()).expect("tensor numel matches")
}

/// Inference on a single image; output values lie in (0, 1).
pub fn denoise(params: &UNetParams, img: &ImageGrid) -> Result<ImageGrid> {
    let out = forward(params, grid_to_tensor(img), false, 0)?;
    Ok(tensor_to_grid(&out))
}

/// Bilateral pre-filter, network, bilateral post-filter, in that order.
/// `None` skips a stage, so `(None, None)` equals [`denoise`] exactly.
pub fn denoise_with_filters(
    params: &UNetParams,
    img: &ImageGrid,
    pre: Option<&BilateralConfig>,
    post: Option<&BilateralConfig>,
) -> Result<ImageGrid> {
    let staged = match pre {
        Some(cfg) => bilateral_filter(img, cfg)?,
        None => img.clone(),
    };
    let denoised = denoise(params, &staged)?;
    match post {
        Some(cfg) => bilateral_filter(&denoised, cfg),
        None => Ok(denoised),
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: UNetConfig,
}

/// Serialize parameters: one JSON header line, then kernel and bias tensors
/// per layer in plan order.
pub fn save_params(params: &UNetParams, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: params.config,
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| Error::data(e.to_string()))?
        .into_bytes();
    bytes.push(b'\n');
    for layer in &params.layers {
        gftn::write_tensor(&mut bytes, layer.kernel.shape(), layer.kernel.data())?;
        gftn::write_tensor(&mut bytes, layer.bias.shape(), layer.bias.data())?;
    }
    write_atomic(path, &bytes)
}

/// Load a checkpoint, verifying the version and every tensor shape against
/// the layer plan derived from the stored config.
pub fn load_params(path: &Path) -> Result<UNetParams> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::load("checkpoint has no header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::load(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::load(format!(
            "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let plan = layer_plan(&header.config)?;
    let mut cursor = Cursor::new(&bytes[newline + 1..]);
    let mut layers = Vec::with_capacity(plan.len());
    for spec in plan {
        let (kshape, kdata) = gftn::read_tensor(&mut cursor)?;
        let expect_k = [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
        if kshape != expect_k {
            return Err(Error::load(format!(
                "layer {}: kernel shape {kshape:?} does not match config ({expect_k:?})",
                spec.name
            )));
        }
        let (bshape, bdata) = gftn::read_tensor(&mut cursor)?;
        if bshape != [spec.out_channels] {
            return Err(Error::load(format!(
                "layer {}: bias shape {bshape:?} does not match config ([{}])",
                spec.name, spec.out_channels
            )));
        }
        layers.push(ConvLayer {
            kernel: Tensor::new(kshape, kdata)?,
            bias: Tensor::new(bshape, bdata)?,
            spec,
        });
    }
    if (cursor.position() as usize) < cursor.get_ref().len() {
        return Err(Error::load("checkpoint has trailing data"));
    }
    Ok(UNetParams {
        config: header.config,
        layers,
    })
}
