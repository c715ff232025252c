//! The kernel-prediction interpolation network.
//!
//! A U-Net style encoder/decoder reads both input frames and emits, per pixel,
//! a vertical and a horizontal 1-D kernel for each input frame plus a blend
//! mask. Kernels are softmax-normalized and the mask is a sigmoid, so the
//! synthesized frame is a convex combination of the inputs' local
//! neighbourhoods:
//!
//! `out = m * (K1 ⋆ a) + (1 - m) * (K2 ⋆ b)`

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Gradients, Tape, Var};
use crate::frame::Frame;
use crate::tensor::{Tensor, TensorError};

pub const CHARBONNIER_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("architecture mismatch: {0} vs {1}")]
    ArchMismatch(Arch, Arch),
    #[error("input frames: {0}")]
    Input(String),
}

/// Architecture descriptor. Depth is `widths.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    /// Channels per frame (1 or 3).
    pub channels: usize,
    /// Encoder widths per level; level `i` runs at `1/2^i` resolution.
    pub widths: Vec<usize>,
    /// Taps of each adaptive 1-D kernel (odd).
    pub kernel_size: usize,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(
            f,
            "c{}-w{}-n{}",
            self.channels,
            widths.join("/"),
            self.kernel_size
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
}

impl ConvSpec {
    fn new(name: String, in_ch: usize, out_ch: usize, ksize: usize) -> Self {
        Self {
            name,
            in_ch,
            out_ch,
            ksize,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.ksize * self.ksize + self.out_ch
    }
}

pub const HEADS: [&str; 5] = ["kv1", "kh1", "kv2", "kh2", "mask"];

impl Arch {
    /// 3 levels of 16/32/64 channels, 5-tap kernels, RGB.
    pub fn desk() -> Self {
        Self {
            channels: 3,
            widths: vec![16, 32, 64],
            kernel_size: 5,
        }
    }

    /// Two levels of 4/8 channels, 3-tap kernels, grayscale.
    pub fn micro() -> Self {
        Self {
            channels: 1,
            widths: vec![4, 8],
            kernel_size: 3,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(ModelError::Tensor(TensorError::EvenKernel(
                self.kernel_size,
            )));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(ModelError::Arch(format!(
                "widths must be non-empty and >= 1, got {:?}",
                self.widths
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::Arch("channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth() - 1)
    }

    /// Every convolution in forward order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        let w = &self.widths;
        let mut out = Vec::new();
        for (level, &width) in w.iter().enumerate() {
            let cin = if level == 0 {
                2 * self.channels
            } else {
                w[level - 1]
            };
            out.push(ConvSpec::new(format!("enc{level}.conv0"), cin, width, 3));
            out.push(ConvSpec::new(format!("enc{level}.conv1"), width, width, 3));
        }
        for level in (0..w.len().saturating_sub(1)).rev() {
            out.push(ConvSpec::new(
                format!("dec{level}.conv0"),
                w[level + 1] + w[level],
                w[level],
                3,
            ));
            out.push(ConvSpec::new(
                format!("dec{level}.conv1"),
                w[level],
                w[level],
                3,
            ));
        }
        for head in HEADS {
            let co = if head == "mask" { 1 } else { self.kernel_size };
            out.push(ConvSpec::new(format!("head.{head}"), w[0], co, 1));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(ConvSpec::param_count).sum()
    }
}

/// The full named parameter set θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init(arch: &Arch, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in arch.convs() {
            let fan_in = spec.in_ch * spec.ksize * spec.ksize;
            let bound = (6.0 / fan_in as f64).sqrt();
            let shape = [spec.out_ch, spec.in_ch, spec.ksize, spec.ksize];
            let w = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
            names.push(format!("{}.weight", spec.name));
            tensors.push(w);
            names.push(format!("{}.bias", spec.name));
            tensors.push(Tensor::zeros([spec.out_ch]));
        }
        Ok(Self {
            arch: arch.clone(),
            names,
            tensors,
        })
    }

    pub(crate) fn from_parts(
        arch: Arch,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        let expected = Self::init(&arch, 0)?;
        if names != expected.names {
            return Err(ModelError::Arch(
                "parameter names do not match the architecture".into(),
            ));
        }
        for ((n, t), e) in names.iter().zip(&tensors).zip(&expected.tensors) {
            if t.shape() != e.shape() {
                return Err(ModelError::Arch(format!(
                    "{n}: shape {:?} does not match {:?}",
                    t.shape(),
                    e.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            names,
            tensors,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn ensure_same_arch(&self, other: &ModelParams) -> Result<(), ModelError> {
        if self.arch != other.arch {
            return Err(ModelError::ArchMismatch(
                self.arch.clone(),
                other.arch.clone(),
            ));
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash of every scalar's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Zero-valued tensors with this parameter layout.
    pub fn zeros_like(&self) -> ParamVec {
        ParamVec(
            self.tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        )
    }

    /// Registers every parameter on `tape` in a fixed order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| tape.param(n.clone(), t.clone()))
            .collect()
    }
}

/// Per-parameter tensors aligned with a [`ModelParams`] layout (gradients,
/// optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVec(pub Vec<Tensor>);

impl ParamVec {
    pub fn from_gradients(g: Gradients) -> Self {
        Self(g.into_tensors())
    }

    pub fn add_assign(&mut self, other: &ParamVec) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scaled(&self, s: f64) -> ParamVec {
        ParamVec(self.0.iter().map(|t| t.map(|v| v * s)).collect())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Index of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0
            .iter()
            .position(|t| t.data().iter().any(|v| !v.is_finite()))
    }
}

/// Tape handles for each layer's weight and bias.
struct Layers<'a> {
    vars: &'a [Var],
}

impl Layers<'_> {
    fn conv(&self, idx: usize) -> (Var, Var) {
        (self.vars[2 * idx], self.vars[2 * idx + 1])
    }
}

/// Raw head outputs for one forward pass, kept on the tape.
pub struct HeadOutputs {
    pub kv1: Var,
    pub kh1: Var,
    pub kv2: Var,
    pub kh2: Var,
    pub mask: Var,
    pub output: Var,
}

fn check_inputs(arch: &Arch, a: &Tensor, b: &Tensor) -> Result<(), ModelError> {
    if a.shape() != b.shape() {
        return Err(ModelError::Input(format!(
            "frame shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let [_, c, h, w] = a.dims4("forward")?;
    if c != arch.channels {
        return Err(ModelError::Input(format!(
            "frames have {c} channels, model expects {}",
            arch.channels
        )));
    }
    let m = arch.size_multiple();
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(ModelError::Input(format!(
            "frame size {h}x{w} must be a positive multiple of {m}"
        )));
    }
    Ok(())
}

/// Records `f_θ(a, b)` on `tape`. `a`, `b` are `[batch, c, h, w]` tensors and
/// `vars` come from [`ModelParams::register`].
pub fn forward_on_tape(
    arch: &Arch,
    tape: &mut Tape,
    vars: &[Var],
    a: Var,
    b: Var,
) -> Result<HeadOutputs, ModelError> {
    check_inputs(arch, tape.value(a), tape.value(b))?;
    let layers = Layers { vars };
    let depth = arch.depth();
    let mut idx = 0;
    let conv_relu = |tape: &mut Tape, x: Var, idx: &mut usize| -> Result<Var, ModelError> {
        let (w, bias) = layers.conv(*idx);
        *idx += 1;
        let y = tape.conv2d(x, w, bias, 1, 1)?;
        Ok(tape.relu(y))
    };

    let mut h = tape.concat_channels(&[a, b])?;
    let mut skips = Vec::with_capacity(depth);
    for level in 0..depth {
        if level > 0 {
            h = tape.avgpool2(h)?;
        }
        h = conv_relu(tape, h, &mut idx)?;
        h = conv_relu(tape, h, &mut idx)?;
        skips.push(h);
    }
    for level in (0..depth - 1).rev() {
        let up = tape.upsample2(h)?;
        h = tape.concat_channels(&[up, skips[level]])?;
        h = conv_relu(tape, h, &mut idx)?;
        h = conv_relu(tape, h, &mut idx)?;
    }

    let mut head = |tape: &mut Tape| -> Result<Var, ModelError> {
        let (w, bias) = layers.conv(idx);
        idx += 1;
        Ok(tape.conv2d(h, w, bias, 1, 0)?)
    };
    let raw_kv1 = head(tape)?;
    let raw_kh1 = head(tape)?;
    let raw_kv2 = head(tape)?;
    let raw_kh2 = head(tape)?;
    let raw_mask = head(tape)?;

    let kv1 = tape.softmax_channels(raw_kv1)?;
    let kh1 = tape.softmax_channels(raw_kh1)?;
    let kv2 = tape.softmax_channels(raw_kv2)?;
    let kh2 = tape.softmax_channels(raw_kh2)?;
    let mask = tape.sigmoid(raw_mask);

    let s1 = tape.local_sep_conv(a, kv1, kh1)?;
    let s2 = tape.local_sep_conv(b, kv2, kh2)?;
    let diff = tape.sub(s1, s2)?;
    let blended = tape.mul_channels(diff, mask)?;
    let output = tape.add(s2, blended)?;
    Ok(HeadOutputs {
        kv1,
        kh1,
        kv2,
        kh2,
        mask,
        output,
    })
}

/// Charbonnier penalty `mean(sqrt((pred - target)^2 + eps^2))` per batch item,
/// summed over the batch. For a single frame this is the plain mean.
pub fn loss_on_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, TensorError> {
    let batch = tape.value(pred).shape().first().copied().unwrap_or(1);
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let shifted = tape.add_scalar(sq, CHARBONNIER_EPS * CHARBONNIER_EPS);
    let r = tape.sqrt(shifted)?;
    let m = tape.mean(r);
    Ok(if batch == 1 {
        m
    } else {
        tape.scale(m, batch as f64)
    })
}

fn batch_tensor(frames: &[&Frame]) -> Result<Tensor, TensorError> {
    let ts: Vec<&Tensor> = frames.iter().map(|f| f.tensor()).collect();
    Tensor::stack(&ts)
}

/// Stack of `(input_a, target, input_b)` frames evaluated as one batch.
pub struct TripletBatch<'a> {
    pub a: Vec<&'a Frame>,
    pub target: Vec<&'a Frame>,
    pub b: Vec<&'a Frame>,
}

/// Loss and parameter gradients of `Σ L(f_θ(a_i, b_i), target_i)`.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &TripletBatch<'_>,
) -> Result<(f64, ParamVec), ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let a = tape.input(batch_tensor(&batch.a)?);
    let b = tape.input(batch_tensor(&batch.b)?);
    let t = tape.input(batch_tensor(&batch.target)?);
    let heads = forward_on_tape(&params.arch, &mut tape, &vars, a, b)?;
    let loss = loss_on_tape(&mut tape, heads.output, t)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, ParamVec::from_gradients(grads)))
}

/// Loss value only.
pub fn batch_loss(params: &ModelParams, batch: &TripletBatch<'_>) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let a = tape.input(batch_tensor(&batch.a)?);
    let b = tape.input(batch_tensor(&batch.b)?);
    let t = tape.input(batch_tensor(&batch.target)?);
    let heads = forward_on_tape(&params.arch, &mut tape, &vars, a, b)?;
    let loss = loss_on_tape(&mut tape, heads.output, t)?;
    Ok(tape.value(loss).item())
}

/// `Î = f_θ(a, b)`, unclamped.
pub fn forward(params: &ModelParams, a: &Frame, b: &Frame) -> Result<Frame, ModelError> {
    Ok(forward_batch(params, &[a], &[b])?.remove(0))
}

pub fn forward_batch(
    params: &ModelParams,
    a: &[&Frame],
    b: &[&Frame],
) -> Result<Vec<Frame>, ModelError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.input(t.clone())).collect();
    let ta = tape.input(batch_tensor(a)?);
    let tb = tape.input(batch_tensor(b)?);
    let heads = forward_on_tape(&params.arch, &mut tape, &vars, ta, tb)?;
    tape.value(heads.output)
        .unstack()?
        .into_iter()
        .map(|t| Frame::from_tensor(t).map_err(ModelError::from))
        .collect()
}

/// Scalar Charbonnier loss between two frames.
pub fn loss(pred: &Frame, target: &Frame) -> Result<f64, TensorError> {
    pred.tensor().expect_same_shape("loss", target.tensor())?;
    let mut tape = Tape::new();
    let p = tape.input(pred.tensor().clone());
    let t = tape.input(target.tensor().clone());
    let l = loss_on_tape(&mut tape, p, t)?;
    Ok(tape.value(l).item())
}

/// Uniform random pixels in `[0, 1]`; used by tests and benches.
pub fn random_frame(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Frame {
    let data = (0..channels * height * width)
        .map(|_| rng.gen::<f64>())
        .collect();
    Frame::new(channels, height, width, data).expect("values in [0, 1)")
}
