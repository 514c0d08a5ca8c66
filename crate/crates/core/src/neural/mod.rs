//! A small self-contained neural kernel (f64 tensors, hand-derived
//! backward passes, Adam) for the trace encoder models. No external ML
//! dependency: every gradient is written out and verified against central
//! differences.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::{join_meta_list, load_checkpoint, save_checkpoint, split_meta_list};
pub use model::{mse_loss, Cache, Model, ModelConfig};
pub use tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Verify analytic gradients against central differences on a random
/// input, sampling `per_tensor` coordinates from every parameter tensor.
/// Returns the worst relative error observed.
pub fn gradient_check(config: &ModelConfig, seed: u64, per_tensor: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = Model::new(*config, seed)?;
    // Random input with a padding suffix (at least one real token).
    let real_len = rng.gen_range(1..=config.seq_len);
    let mut tokens = vec![config.pad_id(); config.seq_len];
    for t in tokens.iter_mut().take(real_len) {
        *t = rng.gen_range(0..config.vocab as u32 - 1);
    }
    let constraint: Vec<f64> = (0..config.constraint_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..config.out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss_of = |m: &Model| -> Result<f64> {
        let (y, _) = m.forward(&tokens, &constraint)?;
        Ok(mse_loss(&y, &target).0)
    };

    // Analytic gradients.
    let (y, cache) = model.forward(&tokens, &constraint)?;
    let (_, dpred) = mse_loss(&y, &target);
    let mut grads = model.zeros_like();
    model.backward(&cache, &dpred, &mut grads);

    // Sample coordinates per tensor; skip the untouched padding embedding
    // row (its analytic and numeric gradients are both exactly zero).
    let mut coords: Vec<(usize, usize)> = Vec::new();
    {
        let ts = model.tensors();
        for (ti, (_, t)) in ts.iter().enumerate() {
            let n = t.data.len();
            for _ in 0..per_tensor.min(n) {
                coords.push((ti, rng.gen_range(0..n)));
            }
        }
    }
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for (ti, j) in &coords {
        let analytic = grads.tensors()[*ti].1.data[*j];
        let orig = model.tensors()[*ti].1.data[*j];
        model.tensors_mut()[*ti].1.data[*j] = orig + h;
        let lp = loss_of(&model)?;
        model.tensors_mut()[*ti].1.data[*j] = orig - h;
        let lm = loss_of(&model)?;
        model.tensors_mut()[*ti].1.data[*j] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs());
        if denom < 1e-8 {
            continue; // both effectively zero
        }
        let rel = (analytic - numeric).abs() / denom.max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coords_checked: coords.len() })
}
