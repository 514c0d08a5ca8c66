//! TrACE predictors: encoder models over tokenized trace chunks.
//!
//! P mode maps (trace, configuration) to a metric value: the configuration
//! enters as normalized ranks in the constraint vector and the network
//! outputs the metric. M mode inverts the question: (trace, target metric)
//! in, one output per parameter in rank units. Predicted ranks are
//! continuous; [`round_ranks`] clamps then rounds them to valid indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::design_space::{Configuration, DesignSpace};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::neural::{
    join_meta_list, load_checkpoint, mse_loss, save_checkpoint, split_meta_list, Adam, Model,
    ModelConfig,
};
use crate::trace::{tokenize_chunk, Chunk, TokenDict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// trace + parameters -> metric.
    P,
    /// trace + metric -> parameter ranks.
    M,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "p" | "P" => Ok(Mode::P),
            "m" | "M" => Ok(Mode::M),
            other => Err(Error::invalid_argument(format!("unknown mode '{other}' (expected p or m)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::P => "p",
            Mode::M => "m",
        })
    }
}

/// A trained predictor and everything needed to apply it consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub mode: Mode,
    pub net: Model,
    pub dict: TokenDict,
    pub metric: MetricKind,
    /// P mode: parameters (in order) whose normalized ranks form the
    /// constraint vector. M mode: parameters predicted, one output each.
    pub param_names: Vec<String>,
    /// Value-list length for each named parameter.
    pub param_counts: Vec<usize>,
}

/// Clamp each raw rank-unit output into its valid range, then round half
/// away from zero.
pub fn round_ranks(raw: &[f64], counts: &[usize]) -> Result<Configuration> {
    if raw.len() != counts.len() {
        return Err(Error::Shape(format!(
            "{} rank outputs for {} parameters",
            raw.len(),
            counts.len()
        )));
    }
    let ranks = raw
        .iter()
        .zip(counts.iter())
        .map(|(&r, &n)| {
            let hi = (n - 1) as f64;
            r.clamp(0.0, hi).round() as u16
        })
        .collect();
    Ok(Configuration { ranks })
}

impl PredictorModel {
    fn check_space(&self, space: &DesignSpace) -> Result<()> {
        if space.param_names() != self.param_names {
            return Err(Error::validation(
                "design space parameters do not match the ones this model was trained with",
            ));
        }
        for (spec, &count) in space.params().iter().zip(self.param_counts.iter()) {
            if spec.values.len() != count {
                return Err(Error::validation(format!(
                    "parameter '{}' has {} values, model expects {count}",
                    spec.name,
                    spec.values.len()
                )));
            }
        }
        Ok(())
    }

    /// P mode: predicted metric for (tokens, configuration).
    pub fn forward_p(
        &self,
        tokens: &[u32],
        space: &DesignSpace,
        cfg: &Configuration,
    ) -> Result<f64> {
        if self.mode != Mode::P {
            return Err(Error::Mode("forward_p called on an M-mode model".to_string()));
        }
        self.check_space(space)?;
        let constraint = space.normalize(cfg)?;
        let (y, _) = self.net.forward(tokens, &constraint)?;
        Ok(y[0])
    }

    /// M mode: raw per-parameter outputs in rank units (continuous;
    /// round with [`round_ranks`]). The network's unit outputs are scaled
    /// by (value count - 1) per parameter.
    pub fn forward_m(&self, tokens: &[u32], metric_value: f64) -> Result<Vec<f64>> {
        if self.mode != Mode::M {
            return Err(Error::Mode("forward_m called on a P-mode model".to_string()));
        }
        let (y, _) = self.net.forward(tokens, &[metric_value])?;
        Ok(y
            .iter()
            .zip(self.param_counts.iter())
            .map(|(&v, &n)| v * (n - 1) as f64)
            .collect())
    }

    /// M mode: rounded configuration for (tokens, target metric).
    pub fn predict_config(&self, tokens: &[u32], metric_value: f64) -> Result<Configuration> {
        let raw = self.forward_m(tokens, metric_value)?;
        round_ranks(&raw, &self.param_counts)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = vec![
            ("kind".to_string(), "trace-predictor".to_string()),
            ("mode".to_string(), self.mode.to_string()),
            ("metric".to_string(), self.metric.to_string()),
            ("dict.names".to_string(), join_meta_list(self.dict.names())),
            ("dict.has_unk".to_string(), self.dict.unk_id().is_some().to_string()),
            ("params".to_string(), join_meta_list(&self.param_names)),
            (
                "param_counts".to_string(),
                join_meta_list(
                    &self.param_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                ),
            ),
        ];
        save_checkpoint(&self.net, &meta, path)
    }

    pub fn load(path: &std::path::Path) -> Result<PredictorModel> {
        let (net, meta) = load_checkpoint(path)?;
        let get = |key: &str| -> Result<&str> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint is missing '{key}' metadata")))
        };
        if get("kind")? != "trace-predictor" {
            return Err(Error::Checkpoint("checkpoint is not a trace predictor".to_string()));
        }
        let mode = Mode::parse(get("mode")?)?;
        let metric = MetricKind::parse(get("metric")?)
            .map_err(|e| Error::Checkpoint(format!("bad metric metadata: {e}")))?;
        let names = split_meta_list(get("dict.names")?);
        let has_unk: bool = get("dict.has_unk")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad dict.has_unk metadata".to_string()))?;
        let dict = TokenDict::from_names(names, has_unk)?;
        let param_names = split_meta_list(get("params")?);
        let param_counts: Vec<usize> = split_meta_list(get("param_counts")?)
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad parameter count '{s}'")))
            })
            .collect::<Result<_>>()?;
        if param_names.len() != param_counts.len() {
            return Err(Error::Checkpoint("params/param_counts length mismatch".to_string()));
        }
        let model = PredictorModel { mode, net, dict, metric, param_names, param_counts };
        // Shape coherence with the stored net.
        let expect_constraint = match model.mode {
            Mode::P => model.param_names.len(),
            Mode::M => 1,
        };
        let expect_out = match model.mode {
            Mode::P => 1,
            Mode::M => model.param_names.len(),
        };
        if model.net.config.constraint_dim != expect_constraint
            || model.net.config.out_dim != expect_out
        {
            return Err(Error::Checkpoint("net shape contradicts mode metadata".to_string()));
        }
        if model.net.config.vocab != model.dict.vocab_size() {
            return Err(Error::Checkpoint("net vocab contradicts dictionary".to_string()));
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    /// Index into the token table (one entry per distinct chunk).
    pub tokens_idx: usize,
    pub chunk_id: u64,
    pub constraint: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub token_table: Vec<Vec<u32>>,
    pub examples: Vec<TrainExample>,
    pub constraint_dim: usize,
    pub out_dim: usize,
}

fn tokens_u32(chunk: &Chunk, dict: &TokenDict, seq_len: usize) -> Result<Vec<u32>> {
    Ok(tokenize_chunk(chunk, dict, seq_len)?.into_iter().map(|t| t as u32).collect())
}

fn index_chunks<'a>(
    ds: &Dataset,
    chunks: &'a [Chunk],
    dict: &TokenDict,
    seq_len: usize,
) -> Result<(Vec<Vec<u32>>, std::collections::HashMap<u64, usize>)> {
    let mut table = Vec::new();
    let mut by_id = std::collections::HashMap::new();
    for chunk in chunks {
        if by_id.insert(chunk.id, table.len()).is_some() {
            return Err(Error::Dataset(format!("duplicate chunk id {}", chunk.id)));
        }
        table.push(tokens_u32(chunk, dict, seq_len)?);
    }
    for row in &ds.rows {
        if !by_id.contains_key(&row.chunk_id) {
            return Err(Error::Dataset(format!(
                "dataset references chunk {} which was not provided",
                row.chunk_id
            )));
        }
    }
    Ok((table, by_id))
}

/// P-mode examples: constraint = normalized ranks, target = metric value.
pub fn prepare_p(
    ds: &Dataset,
    chunks: &[Chunk],
    space: &DesignSpace,
    dict: &TokenDict,
    metric: MetricKind,
    seq_len: usize,
) -> Result<TrainSet> {
    if space.param_names() != ds.manifest.params {
        return Err(Error::Dataset("dataset parameters do not match the design space".to_string()));
    }
    let (token_table, by_id) = index_chunks(ds, chunks, dict, seq_len)?;
    let examples = ds
        .rows
        .iter()
        .map(|row| {
            let cfg = Configuration { ranks: row.ranks.clone() };
            let constraint = space.normalize(&cfg)?;
            Ok(TrainExample {
                tokens_idx: by_id[&row.chunk_id],
                chunk_id: row.chunk_id,
                constraint,
                target: vec![metric.select(&row.metrics)],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainSet {
        token_table,
        examples,
        constraint_dim: space.params().len(),
        out_dim: 1,
    })
}

/// M-mode examples: constraint = metric value, target = ranks scaled to
/// [0, 1] per parameter (the net's unit outputs; multiply back by
/// count - 1 for rank units).
pub fn prepare_m(
    ds: &Dataset,
    chunks: &[Chunk],
    space: &DesignSpace,
    dict: &TokenDict,
    metric: MetricKind,
    seq_len: usize,
) -> Result<TrainSet> {
    if space.param_names() != ds.manifest.params {
        return Err(Error::Dataset("dataset parameters do not match the design space".to_string()));
    }
    let (token_table, by_id) = index_chunks(ds, chunks, dict, seq_len)?;
    let examples = ds
        .rows
        .iter()
        .map(|row| {
            let cfg = Configuration { ranks: row.ranks.clone() };
            let target = space.normalize(&cfg)?;
            Ok(TrainExample {
                tokens_idx: by_id[&row.chunk_id],
                chunk_id: row.chunk_id,
                constraint: vec![metric.select(&row.metrics)],
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainSet {
        token_table,
        examples,
        constraint_dim: 1,
        out_dim: space.params().len(),
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of chunks held out for validation inside `train`.
    pub val_frac: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { epochs: 30, batch_size: 16, lr: 1e-3, seed: 0, val_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Split example indices by chunk so validation chunks are never trained
/// on; returns (train, val) index lists.
fn stratified_indices(set: &TrainSet, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut chunk_ids: Vec<u64> = set
        .examples
        .iter()
        .map(|e| e.chunk_id)
        .collect::<std::collections::HashSet<_>>()
        .into_iter()
        .collect();
    chunk_ids.sort_unstable();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    chunk_ids.shuffle(&mut rng);
    let n_val = ((chunk_ids.len() as f64) * val_frac).round() as usize;
    // Keep at least one chunk on each side when possible.
    let n_val = n_val.clamp(usize::from(chunk_ids.len() > 1), chunk_ids.len().saturating_sub(1));
    let val_set: std::collections::HashSet<u64> = chunk_ids[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in set.examples.iter().enumerate() {
        if val_set.contains(&e.chunk_id) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

fn eval_indices(net: &Model, set: &TrainSet, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &i in indices {
        let e = &set.examples[i];
        let (y, _) = net.forward(&set.token_table[e.tokens_idx], &e.constraint)?;
        total += mse_loss(&y, &e.target).0;
    }
    Ok(total / indices.len() as f64)
}

/// Mean-squared-error training with Adam, chunk-stratified validation, and
/// best-validation weight restore. Deterministic for a given spec:
/// shuffles use a seeded generator and gradient accumulation is
/// fixed-order.
pub fn train_model(net: &mut Model, set: &TrainSet, spec: &TrainSpec) -> Result<TrainReport> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if set.examples.is_empty() {
        return Err(Error::Dataset("training set is empty".to_string()));
    }
    if net.config.constraint_dim != set.constraint_dim || net.config.out_dim != set.out_dim {
        return Err(Error::Shape(format!(
            "net expects constraint {} / out {}, set provides {} / {}",
            net.config.constraint_dim, net.config.out_dim, set.constraint_dim, set.out_dim
        )));
    }
    if spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::invalid_argument("epochs and batch size must be positive"));
    }
    let (train_idx, val_idx) = stratified_indices(set, spec.val_frac, spec.seed);
    if train_idx.is_empty() {
        return Err(Error::Dataset("no training examples after validation split".to_string()));
    }
    let mut opt = Adam::new(net, spec.lr);
    let mut grads = net.zeros_like();
    let mut order = train_idx.clone();
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(spec.epochs),
        val_loss: Vec::with_capacity(spec.epochs),
        best_epoch: 0,
        best_val: f64::INFINITY,
    };
    let mut best_weights: Option<Model> = None;
    for epoch in 0..spec.epochs {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            spec.seed ^ (epoch as u64).wrapping_mul(0xa076_1d64_78bd_642f),
        );
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grads.zero_();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let e = &set.examples[i];
                let (y, cache) = net.forward(&set.token_table[e.tokens_idx], &e.constraint)?;
                let (loss, mut dpred) = mse_loss(&y, &e.target);
                epoch_loss += loss;
                for d in dpred.iter_mut() {
                    *d *= scale;
                }
                net.backward(&cache, &dpred, &mut grads);
            }
            opt.step(net, &grads);
        }
        report.train_loss.push(epoch_loss / train_idx.len() as f64);
        let val = if val_idx.is_empty() {
            *report.train_loss.last().expect("pushed above")
        } else {
            eval_indices(net, set, &val_idx)?
        };
        report.val_loss.push(val);
        if val < report.best_val {
            report.best_val = val;
            report.best_epoch = epoch;
            best_weights = Some(net.clone());
        }
    }
    if let Some(best) = best_weights {
        *net = best;
    }
    Ok(report)
}

/// Forward many (tokens, constraint) pairs in parallel, preserving input
/// order. Equivalent to calling `forward` one at a time.
pub fn batched_inference(
    net: &Model,
    token_table: &[Vec<u32>],
    inputs: &[(usize, Vec<f64>)],
) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|(ti, constraint)| {
            let tokens = token_table
                .get(*ti)
                .ok_or_else(|| Error::Shape(format!("token table index {ti} out of range")))?;
            Ok(net.forward(tokens, constraint)?.0)
        })
        .collect()
}

/// Mean loss of a trained net over a whole prepared set.
pub fn evaluate_model(net: &Model, set: &TrainSet) -> Result<f64> {
    let all: Vec<usize> = (0..set.examples.len()).collect();
    eval_indices(net, set, &all)
}

// ---------------------------------------------------------------------------
// Parameters-only baseline
// ---------------------------------------------------------------------------

/// Config for a baseline that sees the constraint vector but no trace: a
/// single constant token feeds the same-capacity MLP head. Used to show
/// how much the trace itself contributes.
pub fn params_only_config(trace_cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        seq_len: 1,
        dim: trace_cfg.dim,
        heads: 1,
        encoder_layers: 0,
        head_layers: trace_cfg.head_layers,
        window: 0,
        vocab: 2,
        constraint_dim: trace_cfg.constraint_dim,
        out_dim: trace_cfg.out_dim,
    }
}

/// The same examples with every trace replaced by the constant token, so
/// only the constraint carries information.
pub fn params_only_trainset(set: &TrainSet) -> TrainSet {
    TrainSet {
        token_table: vec![vec![0]],
        examples: set
            .examples
            .iter()
            .map(|e| TrainExample { tokens_idx: 0, ..e.clone() })
            .collect(),
        constraint_dim: set.constraint_dim,
        out_dim: set.out_dim,
    }
}

/// Instruction-weighted mean of per-chunk predictions, for aggregating a
/// sliced workload back into one number.
pub fn aggregate_weighted(preds: &[f64], instruction_counts: &[u64]) -> Result<f64> {
    if preds.len() != instruction_counts.len() || preds.is_empty() {
        return Err(Error::Shape("predictions and weights must be equal-length and non-empty".to_string()));
    }
    let total: u64 = instruction_counts.iter().sum();
    if total == 0 {
        return Err(Error::validation("all chunks are empty"));
    }
    Ok(preds
        .iter()
        .zip(instruction_counts.iter())
        .map(|(&p, &w)| p * w as f64 / total as f64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;
    use crate::design_space::{default_catalog, Subsystem};
    use crate::metrics::MetricWeights;
    use crate::trace::{chunk_trace, generate_synthetic_trace, WorkloadProfile};
    use tempfile::tempdir;

    const SEQ: usize = 64;

    fn fixture() -> (Dataset, Vec<Chunk>, DesignSpace, TokenDict) {
        let full = default_catalog();
        let space = full.subsystem_subset(Subsystem::Imem);
        // Simulation still needs the full catalog; build rows against the
        // full space then project ranks down to the subset.
        let records = generate_synthetic_trace(&WorkloadProfile::default(), 384).unwrap();
        let dict = TokenDict::build(&records);
        let chunks = chunk_trace(records, SEQ).unwrap();
        let mut configs = Vec::new();
        for i in 0..3u16 {
            let mut c = full.min_config();
            let idx = full.param_index("icache size (kb)").unwrap();
            c.ranks[idx] = i;
            configs.push(c);
        }
        let weights = MetricWeights::for_space(&full);
        let ds_full = build_dataset(&chunks, &configs, &full, &weights, &dict, 5).unwrap();
        // Project to the Imem subset.
        let mut ds = ds_full.clone();
        ds.manifest.params = space.param_names();
        for row in ds.rows.iter_mut() {
            let full_cfg = Configuration { ranks: row.ranks.clone() };
            row.ranks = full.extract(&full_cfg, &space).unwrap().ranks;
        }
        (ds, chunks, space, dict)
    }

    fn net_for(set: &TrainSet, dict: &TokenDict, seed: u64) -> Model {
        Model::new(
            ModelConfig {
                seq_len: SEQ,
                dim: 8,
                heads: 2,
                encoder_layers: 1,
                head_layers: 2,
                window: 8,
                vocab: dict.vocab_size(),
                constraint_dim: set.constraint_dim,
                out_dim: set.out_dim,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_ranks_clamps_then_rounds_half_away() {
        let cfg = round_ranks(&[1.4, -0.7, 2.5, 9.9], &[4, 4, 4, 4]).unwrap();
        assert_eq!(cfg.ranks, vec![1, 0, 3, 3]);
        // 1.5 rounds away from zero -> 2; clamping happens first.
        let cfg = round_ranks(&[1.5, 0.49999], &[3, 2]).unwrap();
        assert_eq!(cfg.ranks, vec![2, 0]);
        assert!(round_ranks(&[1.0], &[2, 2]).is_err());
    }

    #[test]
    fn prepare_p_builds_normalized_constraints() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_p(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        assert_eq!(set.examples.len(), ds.rows.len());
        assert_eq!(set.constraint_dim, space.params().len());
        assert_eq!(set.out_dim, 1);
        for e in &set.examples {
            assert!(e.constraint.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(e.target.len(), 1);
            assert!(e.target[0] > 0.0, "IPC targets are positive");
        }
        assert_eq!(set.token_table.len(), chunks.len());
    }

    #[test]
    fn prepare_m_scales_targets_to_unit_range() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_m(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        assert_eq!(set.constraint_dim, 1);
        assert_eq!(set.out_dim, space.params().len());
        for e in &set.examples {
            assert!(e.target.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn training_reduces_loss_and_restores_best() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_p(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let mut net = net_for(&set, &dict, 1);
        let spec = TrainSpec { epochs: 8, batch_size: 8, lr: 3e-3, seed: 4, val_frac: 0.34 };
        let initial = evaluate_model(&net, &set).unwrap();
        let report = train_model(&mut net, &set, &spec).unwrap();
        assert_eq!(report.train_loss.len(), 8);
        assert_eq!(report.val_loss.len(), 8);
        assert!(report.best_val <= *report.val_loss.first().unwrap());
        let final_loss = evaluate_model(&net, &set).unwrap();
        assert!(
            final_loss < initial,
            "training should reduce loss: {initial} -> {final_loss}"
        );
        // Restored weights reproduce the best validation loss exactly.
        let (train_idx, val_idx) = stratified_indices(&set, spec.val_frac, spec.seed);
        assert!(!train_idx.is_empty() && !val_idx.is_empty());
        let val_now = eval_indices(&net, &set, &val_idx).unwrap();
        assert_eq!(val_now, report.best_val);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_p(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let spec = TrainSpec { epochs: 3, batch_size: 4, lr: 1e-3, seed: 9, val_frac: 0.34 };
        let mut n1 = net_for(&set, &dict, 2);
        let mut n2 = net_for(&set, &dict, 2);
        let r1 = train_model(&mut n1, &set, &spec).unwrap();
        let r2 = train_model(&mut n2, &set, &spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(n1, n2);
    }

    #[test]
    fn batched_inference_matches_sequential() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_p(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let net = net_for(&set, &dict, 3);
        let inputs: Vec<(usize, Vec<f64>)> =
            set.examples.iter().map(|e| (e.tokens_idx, e.constraint.clone())).collect();
        let batched = batched_inference(&net, &set.token_table, &inputs).unwrap();
        for (out, e) in batched.iter().zip(set.examples.iter()) {
            let (seq, _) = net.forward(&set.token_table[e.tokens_idx], &e.constraint).unwrap();
            assert_eq!(*out, seq);
        }
    }

    #[test]
    fn predictor_model_round_trips_through_checkpoint() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_m(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let net = net_for(&set, &dict, 6);
        let pm = PredictorModel {
            mode: Mode::M,
            net,
            dict: dict.clone(),
            metric: MetricKind::Ipc,
            param_names: space.param_names(),
            param_counts: space.params().iter().map(|p| p.values.len()).collect(),
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        pm.save(&path).unwrap();
        let back = PredictorModel::load(&path).unwrap();
        assert_eq!(back, pm);
        let toks = &set.token_table[0];
        assert_eq!(back.forward_m(toks, 0.8).unwrap(), pm.forward_m(toks, 0.8).unwrap());
        // Mode guards.
        assert!(matches!(back.forward_p(toks, &space, &space.min_config()), Err(Error::Mode(_))));
    }

    #[test]
    fn m_mode_outputs_are_in_rank_units() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_m(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let pm = PredictorModel {
            mode: Mode::M,
            net: net_for(&set, &dict, 6),
            dict: dict.clone(),
            metric: MetricKind::Ipc,
            param_names: space.param_names(),
            param_counts: space.params().iter().map(|p| p.values.len()).collect(),
        };
        let toks = &set.token_table[0];
        let raw = pm.forward_m(toks, 0.5).unwrap();
        let (unit, _) = pm.net.forward(toks, &[0.5]).unwrap();
        for ((r, u), &n) in raw.iter().zip(unit.iter()).zip(pm.param_counts.iter()) {
            assert!((r - u * (n - 1) as f64).abs() < 1e-12);
        }
        let cfg = pm.predict_config(toks, 0.5).unwrap();
        assert_eq!(cfg.ranks.len(), space.params().len());
        space.validate_config(&cfg).unwrap();
    }

    #[test]
    fn params_only_baseline_uses_constant_token() {
        let (ds, chunks, space, dict) = fixture();
        let set = prepare_p(&ds, &chunks, &space, &dict, MetricKind::Ipc, SEQ).unwrap();
        let trace_cfg = net_for(&set, &dict, 1).config;
        let base_cfg = params_only_config(&trace_cfg);
        base_cfg.validate().unwrap();
        let base_set = params_only_trainset(&set);
        assert_eq!(base_set.token_table, vec![vec![0u32]]);
        let mut net = Model::new(base_cfg, 5).unwrap();
        let spec = TrainSpec { epochs: 2, batch_size: 8, lr: 1e-3, seed: 1, val_frac: 0.34 };
        train_model(&mut net, &base_set, &spec).unwrap();
        // Two examples with the same constraint get the same prediction:
        // the baseline cannot tell chunks apart.
        let (y1, _) = net.forward(&[0], &base_set.examples[0].constraint).unwrap();
        let (y2, _) = net.forward(&[0], &base_set.examples[0].constraint).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn weighted_aggregation_weights_by_instructions() {
        let v = aggregate_weighted(&[1.0, 3.0], &[100, 300]).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        assert!(aggregate_weighted(&[1.0], &[0]).is_err());
        assert!(aggregate_weighted(&[1.0, 2.0], &[1]).is_err());
    }
}
