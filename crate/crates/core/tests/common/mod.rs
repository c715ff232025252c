#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scene_adapt::model::{Arch, ModelParams};
use scene_adapt::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Zero-initialized biases put ReLU inputs exactly on the kink wherever a
/// patch is all zero; random biases move the check to a differentiable point.
pub fn smooth_point(arch: &Arch, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(arch, seed).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    let names = params.names().to_vec();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with("bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
    }
    params
}

/// Random 8×8 grayscale frames.
pub fn random_sequence(len: usize, seed: u64) -> scene_adapt::tasks::Sequence {
    let mut r = rng(seed);
    (0..len)
        .map(|_| std::sync::Arc::new(scene_adapt::model::random_frame(1, 8, 8, &mut r)))
        .collect()
}

/// Small translating-texture family at `size × size`.
pub fn synth_family(
    count: usize,
    size: usize,
    velocity_range: f64,
    seed: u64,
) -> Vec<scene_adapt::tasks::Sequence> {
    scene_adapt::synth::SynthFamily {
        count,
        velocity_range,
        height: size,
        width: size,
        channels: 1,
        length: 7,
        seed,
    }
    .generate()
    .unwrap()
}
