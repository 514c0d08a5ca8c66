//! Metric-sweep architecture search: drive an M-mode predictor with a
//! rising metric constraint and watch where the predicted configuration
//! stops changing.
//!
//! The sweep itself never touches the simulator -- by construction:
//! [`mast_search`] takes only a predictor and tokenized chunks. Ground
//! truth enters afterwards through [`MastResult::annotate_objectives`],
//! and [`MastResult::analyze`] then splits parameters into critical
//! (changed at the last step that still moved the objective) and flexible
//! (still varying in the converged tail without moving it).

use crate::design_space::Configuration;
use crate::error::{Error, Result};
use crate::trace_models::{round_ranks, Mode, PredictorModel};
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MastSpec {
    /// Initial metric constraint (c_i).
    pub start: f64,
    /// Constraint increment per step (c_s); must be positive.
    pub step: f64,
    /// Steps the rounded configuration must stay identical to declare
    /// convergence.
    pub patience: usize,
    pub max_iter: usize,
}

impl Default for MastSpec {
    fn default() -> Self {
        MastSpec { start: 0.1, step: 0.05, patience: 10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MastStep {
    pub step: usize,
    pub constraint: f64,
    /// Mean raw model output per parameter, in rank units, before
    /// rounding.
    pub raw: Vec<f64>,
    pub config: Configuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MastResult {
    pub param_names: Vec<String>,
    pub trajectory: Vec<MastStep>,
    pub converged: bool,
    /// Index of the last executed step (n).
    pub end_step: usize,
    /// Configuration at the end of the sweep.
    pub converged_config: Configuration,
    /// Objective value per trajectory step, once annotated.
    pub objectives: Option<Vec<f64>>,
    /// Last step whose objective still moved by more than delta (p).
    pub p_step: Option<usize>,
    pub critical: Vec<String>,
    pub flexible: Vec<String>,
    /// Distinct configurations visited from p to the end, in first-seen
    /// order.
    pub near_optimal: Vec<Configuration>,
}

/// Run the sweep. Per step, every chunk is queried at the same constraint,
/// raw outputs are averaged in fixed chunk order, and the mean is rounded
/// to a configuration. Stops early once the rounded configuration has been
/// identical for `patience` consecutive steps.
pub fn mast_search(
    model: &PredictorModel,
    chunk_tokens: &[Vec<u32>],
    spec: &MastSpec,
) -> Result<MastResult> {
    if model.mode != Mode::M {
        return Err(Error::Mode("the sweep needs an M-mode model".to_string()));
    }
    if spec.step <= 0.0 || !spec.step.is_finite() {
        return Err(Error::invalid_argument(format!(
            "constraint step must be positive and finite, got {}",
            spec.step
        )));
    }
    if spec.patience == 0 || spec.max_iter == 0 {
        return Err(Error::invalid_argument("patience and max_iter must be positive"));
    }
    if chunk_tokens.is_empty() {
        return Err(Error::validation("at least one chunk is required"));
    }
    let n_params = model.param_counts.len();
    let mut trajectory: Vec<MastStep> = Vec::new();
    let mut converged = false;
    for t in 0..spec.max_iter {
        let c = spec.start + spec.step * t as f64;
        let mut mean = vec![0.0; n_params];
        for tokens in chunk_tokens {
            let raw = model.forward_m(tokens, c)?;
            for (m, r) in mean.iter_mut().zip(raw.iter()) {
                *m += r;
            }
        }
        for m in mean.iter_mut() {
            *m /= chunk_tokens.len() as f64;
        }
        let config = round_ranks(&mean, &model.param_counts)?;
        trajectory.push(MastStep { step: t, constraint: c, raw: mean, config });
        if trajectory.len() >= spec.patience {
            let tail = &trajectory[trajectory.len() - spec.patience..];
            if tail.iter().all(|s| s.config == tail[0].config) {
                converged = true;
                break;
            }
        }
    }
    let end_step = trajectory.len() - 1;
    let converged_config = trajectory[end_step].config.clone();
    Ok(MastResult {
        param_names: model.param_names.clone(),
        trajectory,
        converged,
        end_step,
        converged_config,
        objectives: None,
        p_step: None,
        critical: Vec::new(),
        flexible: Vec::new(),
        near_optimal: Vec::new(),
    })
}

impl MastResult {
    /// Fill in an objective value for every trajectory step. This is where
    /// ground truth (or any scorer) is allowed in; the sweep itself has
    /// already finished.
    pub fn annotate_objectives<F>(&mut self, mut eval: F) -> Result<()>
    where
        F: FnMut(&Configuration) -> Result<f64>,
    {
        let mut objs = Vec::with_capacity(self.trajectory.len());
        for step in &self.trajectory {
            objs.push(eval(&step.config)?);
        }
        self.objectives = Some(objs);
        Ok(())
    }

    /// Classify parameters using the annotated objectives. `delta` is the
    /// relative objective change treated as meaningful (e.g. 0.01).
    pub fn analyze(&mut self, delta: f64) -> Result<()> {
        let objs = self
            .objectives
            .as_ref()
            .ok_or_else(|| Error::validation("call annotate_objectives before analyze"))?;
        if !(delta >= 0.0) {
            return Err(Error::invalid_argument("delta must be non-negative"));
        }
        // p: the latest step whose objective still moved by more than
        // delta relative to the previous step.
        let mut p = 0usize;
        for t in 1..objs.len() {
            let prev = objs[t - 1];
            let moved = if prev.abs() > 0.0 {
                ((objs[t] - prev) / prev).abs() > delta
            } else {
                objs[t] != prev
            };
            if moved {
                p = t;
            }
        }
        self.p_step = Some(p);
        // Critical: parameters that changed at step p (none if the
        // objective never moved).
        self.critical = if p == 0 {
            Vec::new()
        } else {
            let before = &self.trajectory[p - 1].config;
            let at = &self.trajectory[p].config;
            self.param_names
                .iter()
                .zip(before.ranks.iter().zip(at.ranks.iter()))
                .filter(|(_, (a, b))| a != b)
                .map(|(n, _)| n.clone())
                .collect()
        };
        // Flexible: parameters that still vary from p to the end without
        // moving the objective, minus the critical ones.
        let tail = &self.trajectory[p..];
        self.flexible = self
            .param_names
            .iter()
            .enumerate()
            .filter(|(i, name)| {
                !self.critical.contains(name)
                    && tail.iter().any(|s| s.config.ranks[*i] != tail[0].config.ranks[*i])
            })
            .map(|(_, n)| n.clone())
            .collect();
        // Near-optimal: distinct tail configurations in first-seen order.
        let mut near = Vec::new();
        for s in tail {
            if !near.contains(&s.config) {
                near.push(s.config.clone());
            }
        }
        self.near_optimal = near;
        Ok(())
    }

    /// CSV of the trajectory: one row per step with the constraint, the
    /// objective when annotated, and every parameter's rounded rank and
    /// raw output.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,constraint,objective");
        for name in &self.param_names {
            out.push_str(&format!(",rank:{name}"));
        }
        for name in &self.param_names {
            out.push_str(&format!(",raw:{name}"));
        }
        out.push('\n');
        for (t, step) in self.trajectory.iter().enumerate() {
            out.push_str(&step.step.to_string());
            out.push(',');
            out.push_str(&fmt_f64(step.constraint));
            out.push(',');
            if let Some(objs) = &self.objectives {
                out.push_str(&fmt_f64(objs[t]));
            }
            for r in &step.config.ranks {
                out.push(',');
                out.push_str(&r.to_string());
            }
            for r in &step.raw {
                out.push(',');
                out.push_str(&fmt_f64(*r));
            }
            out.push('\n');
        }
        out
    }
}
