//! Multi-agent fine-tuning: one M-mode agent per subsystem, trained
//! centrally against a shared performance signal while each keeps its own
//! supervised loss. The combined objective per example is
//! `sum_i L_i - lambda * Perf(joint config)`: supervised terms keep agents
//! anchored to ground-truth ranks, the reward term pulls the joint rounded
//! configuration toward better-performing designs.
//!
//! Rounding is not differentiable, so the reward gradient uses a
//! score-function estimator: ranks are sampled around the raw outputs with
//! Gaussian noise (sigma in rank units) and the gradient on each raw
//! output is `-lambda * advantage * xi / sigma^2`, with an EMA baseline
//! (initialized to the first batch's mean) reducing variance. With
//! lambda = 0 the reward machinery is skipped entirely -- not zeroed --
//! so fine-tuning degenerates bit-for-bit into independent supervised
//! training of the four agents.

use std::collections::HashMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design_space::{Configuration, DesignSpace, SUBSYSTEMS};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::neural::{mse_loss, Adam, Model, ModelConfig};
use crate::trace::TokenDict;
use crate::trace_models::{round_ranks, Mode, PredictorModel, TrainSet};

pub struct AgentEnsemble {
    /// Full design space; agents partition its parameters.
    pub space: DesignSpace,
    /// One M-mode agent per subsystem, in [`SUBSYSTEMS`] order.
    pub agents: Vec<PredictorModel>,
    /// Parameter index range of each agent within the full space.
    pub ranges: Vec<Range<usize>>,
    pub lambda: f64,
    /// Sampling noise for the score-function estimator, in rank units.
    pub sample_std: f64,
    pub baseline_decay: f64,
    pub baseline: Option<f64>,
}

impl AgentEnsemble {
    /// Build fresh agents from a shared network shape. `shape.out_dim` and
    /// `shape.constraint_dim` are overridden per agent.
    pub fn new_fresh(
        space: &DesignSpace,
        dict: &TokenDict,
        metric: MetricKind,
        shape: &ModelConfig,
        lambda: f64,
        seed: u64,
    ) -> Result<AgentEnsemble> {
        let mut agents = Vec::new();
        for (i, sub) in SUBSYSTEMS.iter().enumerate() {
            let subset = space.subsystem_subset(*sub);
            if subset.params().is_empty() {
                return Err(Error::validation(format!("subsystem {sub} has no parameters")));
            }
            let cfg = ModelConfig {
                vocab: dict.vocab_size(),
                constraint_dim: 1,
                out_dim: subset.params().len(),
                ..*shape
            };
            let net = Model::new(cfg, seed.wrapping_add(i as u64))?;
            agents.push(PredictorModel {
                mode: Mode::M,
                net,
                dict: dict.clone(),
                metric,
                param_names: subset.param_names(),
                param_counts: subset.params().iter().map(|p| p.values.len()).collect(),
            });
        }
        Self::from_agents(space.clone(), agents, lambda)
    }

    /// Assemble from already-trained agents; validates that they partition
    /// the space contiguously in catalog order.
    pub fn from_agents(
        space: DesignSpace,
        agents: Vec<PredictorModel>,
        lambda: f64,
    ) -> Result<AgentEnsemble> {
        if agents.len() != SUBSYSTEMS.len() {
            return Err(Error::validation(format!(
                "expected {} agents, got {}",
                SUBSYSTEMS.len(),
                agents.len()
            )));
        }
        let full_names = space.param_names();
        let mut ranges = Vec::new();
        let mut offset = 0usize;
        for (agent, sub) in agents.iter().zip(SUBSYSTEMS.iter()) {
            if agent.mode != Mode::M {
                return Err(Error::Mode(format!("agent for {sub} must be M-mode")));
            }
            let n = agent.param_names.len();
            if full_names.len() < offset + n
                || full_names[offset..offset + n] != agent.param_names[..]
            {
                return Err(Error::validation(format!(
                    "agent for {sub} does not cover the next contiguous parameter block"
                )));
            }
            for (name, &count) in agent.param_names.iter().zip(agent.param_counts.iter()) {
                let spec = space.param(name).expect("name checked above");
                if spec.values.len() != count {
                    return Err(Error::validation(format!(
                        "agent parameter '{name}' expects {count} values, space has {}",
                        spec.values.len()
                    )));
                }
            }
            ranges.push(offset..offset + n);
            offset += n;
        }
        if offset != full_names.len() {
            return Err(Error::validation(format!(
                "agents cover {offset} of {} parameters",
                full_names.len()
            )));
        }
        Ok(AgentEnsemble {
            space,
            agents,
            ranges,
            lambda,
            sample_std: 0.25,
            baseline_decay: 0.9,
            baseline: None,
        })
    }

    /// Concatenated raw predictions (rank units) in catalog order, plus
    /// the rounded joint configuration.
    pub fn joint_predict(&self, tokens: &[u32], metric_value: f64) -> Result<(Vec<f64>, Configuration)> {
        let mut raw = Vec::with_capacity(self.space.params().len());
        for agent in &self.agents {
            raw.extend(agent.forward_m(tokens, metric_value)?);
        }
        let cfg = round_ranks(&raw, &self.space.rank_counts())?;
        Ok((raw, cfg))
    }
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        FinetuneSpec { epochs: 5, batch_size: 8, lr: 3e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Per epoch: mean supervised loss summed over agents.
    pub supervised_loss: Vec<f64>,
    /// Per epoch: mean sampled performance (0.0 when lambda = 0).
    pub reward_mean: Vec<f64>,
    pub skipped_batches: usize,
    pub baseline_final: Option<f64>,
}

/// The training set is a full-space M-mode set (metric constraint in,
/// normalized ranks out); agents slice their own target range.
fn check_set(ens: &AgentEnsemble, set: &TrainSet) -> Result<()> {
    if set.constraint_dim != 1 {
        return Err(Error::Shape("ensemble training needs constraint_dim 1 (the metric)".to_string()));
    }
    if set.out_dim != ens.space.params().len() {
        return Err(Error::Shape(format!(
            "ensemble training targets must cover all {} parameters, set has {}",
            ens.space.params().len(),
            set.out_dim
        )));
    }
    if set.examples.is_empty() {
        return Err(Error::Dataset("fine-tuning set is empty".to_string()));
    }
    Ok(())
}

/// Deterministic per-epoch example order shared by every training path.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    order.shuffle(&mut rng);
    order
}

/// Accumulate supervised gradients for one agent over a batch; returns the
/// summed example loss. Shared verbatim by joint and independent training
/// so that lambda = 0 fine-tuning is bit-identical to the independent
/// path.
fn supervised_batch_grads(
    net: &Model,
    set: &TrainSet,
    range: &Range<usize>,
    batch: &[usize],
    grads: &mut Model,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &i in batch {
        let e = &set.examples[i];
        let (y, cache) = net.forward(&set.token_table[e.tokens_idx], &e.constraint)?;
        let target = &e.target[range.clone()];
        let (loss, mut dpred) = mse_loss(&y, target);
        total += loss;
        for d in dpred.iter_mut() {
            *d *= scale;
        }
        net.backward(&cache, &dpred, grads);
    }
    Ok(total)
}

/// Jointly fine-tune the ensemble. `perf` scores a (configuration,
/// chunk id) pair -- typically simulator-derived -- and is only consulted
/// when lambda > 0. A perf failure skips that batch (counted in the
/// report) without shortening the per-epoch histories.
pub fn smart_finetune<F>(
    ens: &mut AgentEnsemble,
    set: &TrainSet,
    spec: &FinetuneSpec,
    mut perf: F,
) -> Result<FinetuneReport>
where
    F: FnMut(&Configuration, u64) -> Result<f64>,
{
    check_set(ens, set)?;
    if spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::invalid_argument("epochs and batch size must be positive"));
    }
    if ens.lambda < 0.0 || ens.sample_std <= 0.0 {
        return Err(Error::invalid_argument("lambda must be >= 0 and sample_std > 0"));
    }
    let n_agents = ens.agents.len();
    let counts = ens.space.rank_counts();
    let mut opts: Vec<Adam> =
        ens.agents.iter().map(|a| Adam::new(&a.net, spec.lr)).collect();
    let mut grads: Vec<Model> = ens.agents.iter().map(|a| a.net.zeros_like()).collect();
    let mut report = FinetuneReport {
        supervised_loss: Vec::with_capacity(spec.epochs),
        reward_mean: Vec::with_capacity(spec.epochs),
        skipped_batches: 0,
        baseline_final: ens.baseline,
    };
    let use_reward = ens.lambda > 0.0;
    let noise = Normal::new(0.0, ens.sample_std)
        .map_err(|_| Error::invalid_argument("invalid sample_std"))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5a5a_5a5a);
    let n = set.examples.len();
    for epoch in 0..spec.epochs {
        let order = epoch_order(spec.seed, epoch, n);
        let mut epoch_sup = 0.0;
        // Per-agent partial sums, combined in agent order at epoch end so
        // the reported losses match independent training exactly.
        let mut sup_by_agent = vec![0.0f64; n_agents];
        let mut epoch_sup_examples = 0usize;
        let mut epoch_perf_sum = 0.0;
        let mut epoch_perf_n = 0usize;
        for batch in order.chunks(spec.batch_size) {
            if !use_reward {
                // Pure supervised path, shared with independent training.
                for ai in 0..n_agents {
                    grads[ai].zero_();
                    sup_by_agent[ai] += supervised_batch_grads(
                        &ens.agents[ai].net,
                        set,
                        &ens.ranges[ai],
                        batch,
                        &mut grads[ai],
                    )?;
                    opts[ai].step(&mut ens.agents[ai].net, &grads[ai]);
                }
                epoch_sup_examples += batch.len();
                continue;
            }
            // Phase A: sample a joint configuration per example and score
            // it. Noise is drawn here so a failed batch still advances the
            // stream deterministically.
            let mut samples: Vec<(Vec<f64>, f64)> = Vec::with_capacity(batch.len());
            let mut failed = false;
            for &i in batch {
                let e = &set.examples[i];
                let tokens = &set.token_table[e.tokens_idx];
                let mut raw = Vec::with_capacity(counts.len());
                for agent in &ens.agents {
                    raw.extend(agent.forward_m(tokens, e.constraint[0])?);
                }
                let xi: Vec<f64> = (0..counts.len()).map(|_| noise.sample(&mut noise_rng)).collect();
                let sampled: Vec<f64> = raw.iter().zip(xi.iter()).map(|(r, x)| r + x).collect();
                let cfg = round_ranks(&sampled, &counts)?;
                match perf(&cfg, e.chunk_id) {
                    Ok(p) if p.is_finite() => samples.push((xi, p)),
                    _ => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                report.skipped_batches += 1;
                continue;
            }
            let batch_mean_perf =
                samples.iter().map(|(_, p)| p).sum::<f64>() / samples.len() as f64;
            let baseline = *ens.baseline.get_or_insert(batch_mean_perf);
            // Phase B: combined supervised + reward gradients, one
            // backward per agent per example.
            for g in grads.iter_mut() {
                g.zero_();
            }
            let scale = 1.0 / batch.len() as f64;
            let sigma2 = ens.sample_std * ens.sample_std;
            for (bi, &i) in batch.iter().enumerate() {
                let e = &set.examples[i];
                let tokens = &set.token_table[e.tokens_idx];
                let (xi, perf_val) = &samples[bi];
                let advantage = perf_val - baseline;
                for ai in 0..n_agents {
                    let range = &ens.ranges[ai];
                    let net = &ens.agents[ai].net;
                    let (y, cache) = net.forward(tokens, &e.constraint)?;
                    let target = &e.target[range.clone()];
                    let (loss, mut dout) = mse_loss(&y, target);
                    epoch_sup += loss;
                    for (j, d) in dout.iter_mut().enumerate() {
                        let full_j = range.start + j;
                        // d(-lambda * Perf)/d(unit output): score function
                        // through the sampled rank, chained by the rank
                        // scaling (count - 1).
                        let reward_grad = -ens.lambda * advantage * xi[full_j] / sigma2
                            * (counts[full_j] - 1) as f64;
                        *d = (*d + reward_grad) * scale;
                    }
                    net.backward(&cache, &dout, &mut grads[ai]);
                }
                epoch_perf_sum += perf_val;
                epoch_perf_n += 1;
            }
            for ai in 0..n_agents {
                opts[ai].step(&mut ens.agents[ai].net, &grads[ai]);
            }
            epoch_sup_examples += batch.len();
            // EMA baseline update after the batch.
            let b = ens.baseline.expect("initialized above");
            ens.baseline =
                Some(ens.baseline_decay * b + (1.0 - ens.baseline_decay) * batch_mean_perf);
        }
        let sup_total = epoch_sup + sup_by_agent.iter().sum::<f64>();
        report
            .supervised_loss
            .push(if epoch_sup_examples == 0 { f64::NAN } else { sup_total / epoch_sup_examples as f64 });
        report
            .reward_mean
            .push(if epoch_perf_n == 0 { 0.0 } else { epoch_perf_sum / epoch_perf_n as f64 });
    }
    report.baseline_final = ens.baseline;
    Ok(report)
}

/// Train each agent separately on its own slice: plain supervised
/// fine-tuning with no joint term. Uses the same shuffle stream, batch
/// partitioning, gradient helper, and optimizer stepping as
/// [`smart_finetune`] so that a lambda = 0 joint run matches this
/// bit-for-bit.
pub fn independent_finetune(
    ens: &mut AgentEnsemble,
    set: &TrainSet,
    spec: &FinetuneSpec,
) -> Result<FinetuneReport> {
    check_set(ens, set)?;
    if spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::invalid_argument("epochs and batch size must be positive"));
    }
    let n = set.examples.len();
    // [agent][epoch] partial sums, folded in agent order afterwards so the
    // reported history equals a lambda = 0 joint run bit-for-bit.
    let mut per_agent = vec![vec![0.0f64; spec.epochs]; ens.agents.len()];
    for ai in 0..ens.agents.len() {
        let mut opt = Adam::new(&ens.agents[ai].net, spec.lr);
        let mut grads = ens.agents[ai].net.zeros_like();
        for epoch in 0..spec.epochs {
            let order = epoch_order(spec.seed, epoch, n);
            for batch in order.chunks(spec.batch_size) {
                grads.zero_();
                per_agent[ai][epoch] += supervised_batch_grads(
                    &ens.agents[ai].net,
                    set,
                    &ens.ranges[ai],
                    batch,
                    &mut grads,
                )?;
                opt.step(&mut ens.agents[ai].net, &grads);
            }
        }
    }
    let supervised_loss = (0..spec.epochs)
        .map(|e| per_agent.iter().map(|a| a[e]).sum::<f64>() / n as f64)
        .collect();
    Ok(FinetuneReport {
        supervised_loss,
        reward_mean: vec![0.0; spec.epochs],
        skipped_batches: 0,
        baseline_final: ens.baseline,
    })
}

/// Mean squared error of joint predictions in normalized rank space
/// (unit outputs vs unit targets) over a whole set.
pub fn ensemble_rank_mse(ens: &AgentEnsemble, set: &TrainSet) -> Result<f64> {
    check_set(ens, set)?;
    let counts = ens.space.rank_counts();
    let mut total = 0.0;
    for e in &set.examples {
        let tokens = &set.token_table[e.tokens_idx];
        let (raw, _) = ens.joint_predict(tokens, e.constraint[0])?;
        let mut err = 0.0;
        for ((r, &t), &c) in raw.iter().zip(e.target.iter()).zip(counts.iter()) {
            let unit = if c > 1 { r / (c - 1) as f64 } else { *r };
            err += (unit - t) * (unit - t);
        }
        total += err / counts.len() as f64;
    }
    Ok(total / set.examples.len() as f64)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    version: u32,
    lambda: f64,
    sample_std: f64,
    baseline_decay: f64,
    baseline: Option<f64>,
    space_fingerprint: String,
    /// subsystem tag -> checkpoint filename (relative to the manifest).
    agents: HashMap<String, String>,
}

/// Write four agent checkpoints plus `<stem>.manifest.json` into `dir`.
pub fn save_ensemble(ens: &AgentEnsemble, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut agents = HashMap::new();
    for (agent, sub) in ens.agents.iter().zip(SUBSYSTEMS.iter()) {
        let file = format!("{stem}.{}.ckpt", sub.tag());
        agent.save(&dir.join(&file))?;
        agents.insert(sub.tag().to_string(), file);
    }
    let manifest = EnsembleManifest {
        version: 1,
        lambda: ens.lambda,
        sample_std: ens.sample_std,
        baseline_decay: ens.baseline_decay,
        baseline: ens.baseline,
        space_fingerprint: format!("{:016x}", ens.space.fingerprint()),
        agents,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join(format!("{stem}.manifest.json")), json + "\n")?;
    Ok(())
}

/// Load an ensemble saved by [`save_ensemble`]; `space` must match the
/// recorded fingerprint.
pub fn load_ensemble(manifest_path: &Path, space: &DesignSpace) -> Result<AgentEnsemble> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: EnsembleManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("invalid ensemble manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported ensemble manifest version {}",
            manifest.version
        )));
    }
    let want = format!("{:016x}", space.fingerprint());
    if manifest.space_fingerprint != want {
        return Err(Error::Checkpoint(format!(
            "ensemble was saved for space {} but the provided space is {want}",
            manifest.space_fingerprint
        )));
    }
    let dir: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut agents = Vec::new();
    for sub in SUBSYSTEMS {
        let file = manifest.agents.get(sub.tag()).ok_or_else(|| {
            Error::Checkpoint(format!("manifest lists no agent for subsystem {sub}"))
        })?;
        agents.push(PredictorModel::load(&dir.join(file))?);
    }
    let mut ens = AgentEnsemble::from_agents(space.clone(), agents, manifest.lambda)?;
    ens.sample_std = manifest.sample_std;
    ens.baseline_decay = manifest.baseline_decay;
    ens.baseline = manifest.baseline;
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::{ParamSpec, ParamValue, Subsystem};
    use crate::trace_models::TrainExample;
    use rand::Rng;

    fn num(vals: &[u64]) -> Vec<ParamValue> {
        vals.iter().map(|&v| ParamValue::Num(v)).collect()
    }

    fn small_space() -> DesignSpace {
        let p = |name: &str, sub, vals: &[u64]| ParamSpec {
            name: name.to_string(),
            subsystem: sub,
            values: num(vals),
        };
        DesignSpace::from_params(vec![
            p("i one", Subsystem::Imem, &[1, 2, 4, 8]),
            p("i two", Subsystem::Imem, &[16, 32, 64]),
            p("d one", Subsystem::Dmem, &[1, 2, 4, 8]),
            p("c one", Subsystem::Core, &[1, 2, 3, 4, 5]),
            p("c two", Subsystem::Core, &[0, 1]),
            p("b one", Subsystem::Branch, &[128, 256, 512]),
        ])
        .unwrap()
    }

    fn small_dict() -> TokenDict {
        TokenDict::from_names(
            ["add", "mul", "ld", "st", "beq"].iter().map(|s| s.to_string()).collect(),
            false,
        )
        .unwrap()
    }

    fn small_shape() -> ModelConfig {
        ModelConfig {
            seq_len: 6,
            dim: 8,
            heads: 2,
            encoder_layers: 1,
            head_layers: 1,
            window: 2,
            vocab: 2,          // overridden per agent
            constraint_dim: 1, // overridden per agent
            out_dim: 1,        // overridden per agent
        }
    }

    fn small_ensemble(lambda: f64, seed: u64) -> AgentEnsemble {
        AgentEnsemble::new_fresh(
            &small_space(),
            &small_dict(),
            MetricKind::Objective,
            &small_shape(),
            lambda,
            seed,
        )
        .unwrap()
    }

    fn small_set(seed: u64, n: usize) -> TrainSet {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_table: Vec<Vec<u32>> = (0..3)
            .map(|_| (0..6).map(|_| rng.gen_range(0..5u32)).collect())
            .collect();
        let examples = (0..n)
            .map(|i| TrainExample {
                tokens_idx: i % token_table.len(),
                chunk_id: (i % token_table.len()) as u64,
                constraint: vec![rng.gen_range(0.0..1.0)],
                target: (0..space.params().len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
            })
            .collect();
        TrainSet { token_table, examples, constraint_dim: 1, out_dim: space.params().len() }
    }

    fn weights_bits(m: &Model) -> Vec<u64> {
        let mut out = Vec::new();
        for (_, t) in m.tensors() {
            out.extend(t.data.iter().map(|v| v.to_bits()));
        }
        out
    }

    #[test]
    fn agents_partition_the_space_in_order() {
        let ens = small_ensemble(0.1, 7);
        assert_eq!(ens.agents.len(), 4);
        assert_eq!(ens.ranges, vec![0..2, 2..3, 3..5, 5..6]);
        assert_eq!(ens.agents[0].param_names, vec!["i one".to_string(), "i two".to_string()]);
        assert_eq!(ens.agents[3].param_counts, vec![3]);

        // Swapping two agents breaks the contiguous partition.
        let mut agents: Vec<PredictorModel> = ens.agents.clone();
        agents.swap(0, 2);
        assert!(AgentEnsemble::from_agents(small_space(), agents, 0.1).is_err());

        // Dropping an agent is rejected outright.
        let three: Vec<PredictorModel> = ens.agents[..3].to_vec();
        assert!(AgentEnsemble::from_agents(small_space(), three, 0.1).is_err());
    }

    #[test]
    fn joint_predict_concatenates_agent_outputs() {
        let ens = small_ensemble(0.1, 11);
        let tokens = [0u32, 1, 2, 3, 4, 0];
        let (raw, cfg) = ens.joint_predict(&tokens, 0.4).unwrap();
        assert_eq!(raw.len(), 6);
        let mut manual = Vec::new();
        for agent in &ens.agents {
            manual.extend(agent.forward_m(&tokens, 0.4).unwrap());
        }
        assert_eq!(raw, manual);
        ens.space.validate_config(&cfg).unwrap();
    }

    #[test]
    fn lambda_zero_matches_independent_training_bit_for_bit() {
        let set = small_set(3, 9);
        let spec = FinetuneSpec { epochs: 3, batch_size: 4, lr: 1e-3, seed: 17 };
        let mut joint = small_ensemble(0.0, 21);
        let mut indep = small_ensemble(0.0, 21);
        for (a, b) in joint.agents.iter().zip(indep.agents.iter()) {
            assert_eq!(weights_bits(&a.net), weights_bits(&b.net), "fresh agents must start equal");
        }
        let r1 = smart_finetune(&mut joint, &set, &spec, |_, _| {
            panic!("perf must not be consulted when lambda = 0")
        })
        .unwrap();
        let r2 = independent_finetune(&mut indep, &set, &spec).unwrap();
        for (a, b) in joint.agents.iter().zip(indep.agents.iter()) {
            assert_eq!(weights_bits(&a.net), weights_bits(&b.net));
        }
        assert_eq!(r1.supervised_loss, r2.supervised_loss);
        assert_eq!(r1.skipped_batches, 0);
    }

    #[test]
    fn finetune_with_reward_is_deterministic() {
        let set = small_set(5, 8);
        let spec = FinetuneSpec { epochs: 2, batch_size: 4, lr: 1e-3, seed: 9 };
        let perf = |cfg: &Configuration, chunk: u64| -> Result<f64> {
            Ok(cfg.ranks.iter().map(|&r| r as f64).sum::<f64>() * 0.1 + chunk as f64 * 0.01)
        };
        let run = |_: ()| {
            let mut ens = small_ensemble(0.1, 33);
            let rep = smart_finetune(&mut ens, &set, &spec, perf).unwrap();
            (rep, ens.agents.iter().map(|a| weights_bits(&a.net)).collect::<Vec<_>>(), ens.baseline)
        };
        let (r1, w1, b1) = run(());
        let (r2, w2, b2) = run(());
        assert_eq!(r1, r2);
        assert_eq!(w1, w2);
        assert_eq!(b1, b2);
        assert!(r1.reward_mean.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn reward_training_differs_from_supervised_only() {
        let set = small_set(2, 8);
        let spec = FinetuneSpec { epochs: 2, batch_size: 4, lr: 1e-3, seed: 5 };
        let mut with = small_ensemble(0.5, 40);
        let mut without = small_ensemble(0.0, 40);
        smart_finetune(&mut with, &set, &spec, |cfg, _| {
            Ok(cfg.ranks.iter().map(|&r| r as f64).sum())
        })
        .unwrap();
        smart_finetune(&mut without, &set, &spec, |_, _| unreachable!()).unwrap();
        let differs = with
            .agents
            .iter()
            .zip(without.agents.iter())
            .any(|(a, b)| weights_bits(&a.net) != weights_bits(&b.net));
        assert!(differs, "the reward term must influence the weights when lambda > 0");
    }

    #[test]
    fn failing_perf_skips_batches_but_keeps_history() {
        let set = small_set(8, 10);
        let spec = FinetuneSpec { epochs: 3, batch_size: 4, lr: 1e-3, seed: 2 };
        let mut ens = small_ensemble(0.1, 50);
        let rep = smart_finetune(&mut ens, &set, &spec, |_, chunk| {
            if chunk == 1 {
                Err(Error::validation("synthetic failure"))
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert!(rep.skipped_batches > 0);
        assert_eq!(rep.supervised_loss.len(), spec.epochs);
        assert_eq!(rep.reward_mean.len(), spec.epochs);
    }

    #[test]
    fn baseline_tracks_constant_reward() {
        let set = small_set(1, 6);
        let spec = FinetuneSpec { epochs: 2, batch_size: 3, lr: 1e-3, seed: 1 };
        let mut ens = small_ensemble(0.1, 60);
        let rep = smart_finetune(&mut ens, &set, &spec, |_, _| Ok(7.0)).unwrap();
        let b = rep.baseline_final.unwrap();
        assert!((b - 7.0).abs() < 1e-9, "EMA of a constant reward stays at it, got {b}");
    }

    #[test]
    fn independent_training_reduces_supervised_loss() {
        let set = small_set(4, 12);
        let spec = FinetuneSpec { epochs: 8, batch_size: 4, lr: 3e-3, seed: 3 };
        let mut ens = small_ensemble(0.0, 70);
        let before = ensemble_rank_mse(&ens, &set).unwrap();
        let rep = independent_finetune(&mut ens, &set, &spec).unwrap();
        let after = ensemble_rank_mse(&ens, &set).unwrap();
        assert!(rep.supervised_loss.last().unwrap() < rep.supervised_loss.first().unwrap());
        assert!(after < before, "rank MSE should drop: {before} -> {after}");
        assert!(after.is_finite() && after >= 0.0);
    }

    #[test]
    fn ensemble_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let space = small_space();
        let mut ens = small_ensemble(0.25, 80);
        ens.baseline = Some(1.5);
        save_ensemble(&ens, dir.path(), "ens").unwrap();
        let back = load_ensemble(&dir.path().join("ens.manifest.json"), &space).unwrap();
        assert_eq!(back.lambda, 0.25);
        assert_eq!(back.sample_std, ens.sample_std);
        assert_eq!(back.baseline, Some(1.5));
        for (a, b) in ens.agents.iter().zip(back.agents.iter()) {
            assert_eq!(weights_bits(&a.net), weights_bits(&b.net));
        }

        // A different space is refused by fingerprint.
        let other = space.subsystem_subset(Subsystem::Imem);
        assert!(load_ensemble(&dir.path().join("ens.manifest.json"), &other).is_err());
    }

    #[test]
    fn mismatched_training_set_is_rejected() {
        let spec = FinetuneSpec::default();
        let mut ens = small_ensemble(0.0, 90);
        let mut set = small_set(1, 4);
        set.out_dim = 3;
        for e in set.examples.iter_mut() {
            e.target.truncate(3);
        }
        assert!(smart_finetune(&mut ens, &set, &spec, |_, _| Ok(0.0)).is_err());
        assert!(independent_finetune(&mut ens, &set, &spec).is_err());
    }
}
