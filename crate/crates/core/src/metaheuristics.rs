//! Population search over rank-encoded configurations: a genetic
//! algorithm, an artificial bee colony, and exhaustive enumeration as the
//! small-space reference. Both heuristics support two refinements that can
//! be toggled independently: mutation/neighborhood annealing (step sizes
//! shrink geometrically over iterations) and stagnation recovery (the GA
//! re-randomizes its worst half after the best has stalled).
//!
//! All searches maximize. Fitness comes from an [`Evaluator`], which
//! counts invocations so callers can audit simulator usage.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design_space::{Configuration, DesignSpace};
use crate::error::{Error, Result};

pub struct Evaluator<'a> {
    f: Box<dyn Fn(&Configuration) -> Result<f64> + Sync + 'a>,
    calls: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new<F>(f: F) -> Evaluator<'a>
    where
        F: Fn(&Configuration) -> Result<f64> + Sync + 'a,
    {
        Evaluator { f: Box::new(f), calls: AtomicU64::new(0) }
    }

    pub fn eval(&self, cfg: &Configuration) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let v = (self.f)(cfg)?;
        if !v.is_finite() {
            return Err(Error::validation(format!("non-finite fitness {v}")));
        }
        Ok(v)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpec {
    pub population: usize,
    pub iterations: usize,
    /// GA tournament size.
    pub tournament: usize,
    pub crossover_rate: f64,
    /// Initial per-gene mutation probability (GA).
    pub mutation_rate: f64,
    /// Geometric decay factor for annealing.
    pub anneal: f64,
    /// GA: iterations without improvement before re-randomizing the worst
    /// half. ABC: trials before a food source is abandoned (scouting).
    pub stagnation_limit: usize,
    pub seed: u64,
    pub anneal_enabled: bool,
    pub stagnation_enabled: bool,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            population: 24,
            iterations: 50,
            tournament: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            anneal: 0.93,
            stagnation_limit: 6,
            seed: 0,
            anneal_enabled: true,
            stagnation_enabled: true,
        }
    }
}

impl SearchSpec {
    /// Both refinements on.
    pub fn optimized(seed: u64) -> SearchSpec {
        SearchSpec { seed, ..Default::default() }
    }

    /// Plain GA/ABC without annealing or stagnation recovery.
    pub fn vanilla(seed: u64) -> SearchSpec {
        SearchSpec { seed, anneal_enabled: false, stagnation_enabled: false, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::invalid_argument("population must be at least 2"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid_argument("iterations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(Error::invalid_argument("rates must lie in [0, 1]"));
        }
        if !(0.0 < self.anneal && self.anneal <= 1.0) {
            return Err(Error::invalid_argument("anneal factor must lie in (0, 1]"));
        }
        if self.tournament == 0 || self.stagnation_limit == 0 {
            return Err(Error::invalid_argument("tournament and stagnation limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Configuration,
    pub best_fitness: f64,
    /// Best-so-far fitness per iteration; entry 0 is the initial
    /// population's best, entry k the state after iteration k.
    pub history: Vec<f64>,
    pub evaluations: u64,
}

/// First history index reaching `frac` of the final best (assumes a
/// non-negative final best, as with IPC-like objectives).
pub fn convergence_iteration(history: &[f64], frac: f64) -> Option<usize> {
    let final_best = *history.last()?;
    let threshold = final_best * frac;
    history.iter().position(|&v| v >= threshold)
}

struct Member {
    cfg: Configuration,
    fitness: f64,
}

fn eval_all(space: &DesignSpace, cfgs: Vec<Configuration>, eval: &Evaluator) -> Result<Vec<Member>> {
    cfgs.into_iter()
        .map(|cfg| {
            space.validate_config(&cfg)?;
            let fitness = eval.eval(&cfg)?;
            Ok(Member { cfg, fitness })
        })
        .collect()
}

/// Genetic algorithm: tournament selection, uniform rank crossover,
/// per-gene mutation (annealed when enabled), elitism in slot 0, and
/// optional worst-half re-randomization after stagnation.
pub fn ga_search(space: &DesignSpace, eval: &Evaluator, spec: &SearchSpec) -> Result<SearchOutcome> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pop = eval_all(
        space,
        (0..spec.population).map(|_| space.sample_config(&mut rng)).collect(),
        eval,
    )?;
    let mut best = pop
        .iter()
        .max_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .map(|m| (m.cfg.clone(), m.fitness))
        .expect("population non-empty");
    let mut history = vec![best.1];
    let mut stagnant = 0usize;
    for k in 1..=spec.iterations {
        let m_k = if spec.anneal_enabled {
            spec.mutation_rate * spec.anneal.powi(k as i32 - 1)
        } else {
            spec.mutation_rate
        };
        let mut next: Vec<Configuration> = vec![best.0.clone()]; // elitism
        while next.len() < spec.population {
            let p1 = tournament(&pop, spec.tournament, &mut rng);
            let p2 = tournament(&pop, spec.tournament, &mut rng);
            let mut child = if rng.gen_bool(spec.crossover_rate) {
                crossover(&pop[p1].cfg, &pop[p2].cfg, &mut rng)
            } else {
                pop[p1].cfg.clone()
            };
            for (g, spec_p) in child.ranks.iter_mut().zip(space.params().iter()) {
                if rng.gen_bool(m_k) {
                    *g = rng.gen_range(0..spec_p.values.len()) as u16;
                }
            }
            next.push(child);
        }
        pop = eval_all(space, next, eval)?;
        let iter_best = pop
            .iter()
            .max_by(|a, b| a.fitness.total_cmp(&b.fitness))
            .expect("population non-empty");
        if iter_best.fitness > best.1 {
            best = (iter_best.cfg.clone(), iter_best.fitness);
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if spec.stagnation_enabled && stagnant >= spec.stagnation_limit {
            // Replace the worst half with fresh random members.
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness));
            for &i in order.iter().take(pop.len() / 2) {
                let cfg = space.sample_config(&mut rng);
                let fitness = eval.eval(&cfg)?;
                pop[i] = Member { cfg, fitness };
                if pop[i].fitness > best.1 {
                    best = (pop[i].cfg.clone(), pop[i].fitness);
                }
            }
            stagnant = 0;
        }
        history.push(best.1);
    }
    Ok(SearchOutcome { best: best.0, best_fitness: best.1, history, evaluations: eval.calls() })
}

fn tournament(pop: &[Member], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..pop.len());
    for _ in 1..size.min(pop.len()) {
        let c = rng.gen_range(0..pop.len());
        if pop[c].fitness > pop[winner].fitness {
            winner = c;
        }
    }
    winner
}

fn crossover(a: &Configuration, b: &Configuration, rng: &mut ChaCha8Rng) -> Configuration {
    let ranks = a
        .ranks
        .iter()
        .zip(b.ranks.iter())
        .map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y })
        .collect();
    Configuration { ranks }
}

/// Artificial bee colony: employed bees refine their own source, onlookers
/// pick sources fitness-proportionally, and sources stuck for
/// `stagnation_limit` trials are abandoned to scouts. With annealing the
/// neighborhood step shrinks over iterations; without it a neighbor
/// resamples the chosen gene uniformly.
pub fn abc_search(space: &DesignSpace, eval: &Evaluator, spec: &SearchSpec) -> Result<SearchOutcome> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xabc);
    let members = eval_all(
        space,
        (0..spec.population).map(|_| space.sample_config(&mut rng)).collect(),
        eval,
    )?;
    let mut sources: Vec<(Member, u32)> = members.into_iter().map(|m| (m, 0)).collect();
    let mut best = sources
        .iter()
        .max_by(|a, b| a.0.fitness.total_cmp(&b.0.fitness))
        .map(|(m, _)| (m.cfg.clone(), m.fitness))
        .expect("sources non-empty");
    let mut history = vec![best.1];
    for k in 1..=spec.iterations {
        // Employed phase.
        for i in 0..sources.len() {
            try_neighbor(space, eval, spec, k, i, &mut sources, &mut best, &mut rng)?;
        }
        // Onlooker phase: fitness-proportional source choice.
        let weights: Vec<f64> = {
            let min = sources
                .iter()
                .map(|(m, _)| m.fitness)
                .fold(f64::INFINITY, f64::min);
            sources.iter().map(|(m, _)| m.fitness - min + 1e-9).collect()
        };
        let total: f64 = weights.iter().sum();
        for _ in 0..sources.len() {
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, w) in weights.iter().enumerate() {
                if pick < *w {
                    idx = i;
                    break;
                }
                pick -= w;
                idx = i;
            }
            try_neighbor(space, eval, spec, k, idx, &mut sources, &mut best, &mut rng)?;
        }
        // Scout phase: abandon exhausted sources.
        for (m, trials) in sources.iter_mut() {
            if *trials as usize >= spec.stagnation_limit {
                let cfg = space.sample_config(&mut rng);
                let fitness = eval.eval(&cfg)?;
                *m = Member { cfg, fitness };
                *trials = 0;
                if m.fitness > best.1 {
                    best = (m.cfg.clone(), m.fitness);
                }
            }
        }
        history.push(best.1);
    }
    Ok(SearchOutcome { best: best.0, best_fitness: best.1, history, evaluations: eval.calls() })
}

#[allow(clippy::too_many_arguments)]
fn try_neighbor(
    space: &DesignSpace,
    eval: &Evaluator,
    spec: &SearchSpec,
    k: usize,
    i: usize,
    sources: &mut [(Member, u32)],
    best: &mut (Configuration, f64),
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut cfg = sources[i].0.cfg.clone();
    let g = rng.gen_range(0..cfg.ranks.len());
    let count = space.params()[g].values.len();
    if count > 1 {
        if spec.anneal_enabled {
            // Step within +/- w_k ranks, shrinking geometrically.
            let w = (((count - 1) as f64) * spec.anneal.powi(k as i32 - 1)).ceil().max(1.0) as i64;
            let delta = {
                let d = rng.gen_range(1..=w);
                if rng.gen_bool(0.5) {
                    d
                } else {
                    -d
                }
            };
            let moved = (i64::from(cfg.ranks[g]) + delta).clamp(0, (count - 1) as i64);
            cfg.ranks[g] = moved as u16;
        } else {
            cfg.ranks[g] = rng.gen_range(0..count) as u16;
        }
    }
    let fitness = eval.eval(&cfg)?;
    let (m, trials) = &mut sources[i];
    if fitness > m.fitness {
        m.cfg = cfg;
        m.fitness = fitness;
        *trials = 0;
        if fitness > best.1 {
            *best = (m.cfg.clone(), fitness);
        }
    } else {
        *trials += 1;
    }
    Ok(())
}

pub const EXHAUSTIVE_DEFAULT_CAP: u128 = 10_000;

/// Enumerate every configuration in lexicographic rank order. Errors with
/// [`Error::CapExceeded`] if the space holds more than `cap` configs.
/// Ties keep the first-seen configuration.
pub fn exhaustive_search(
    space: &DesignSpace,
    eval: &Evaluator,
    cap: Option<u128>,
) -> Result<SearchOutcome> {
    let cap = cap.unwrap_or(EXHAUSTIVE_DEFAULT_CAP);
    let total = space.total_configs();
    match total {
        Some(t) if t <= cap => {}
        _ => {
            return Err(Error::CapExceeded(format!(
                "space holds {} configurations, cap is {cap}",
                total.map_or("more than u128".to_string(), |t| t.to_string())
            )))
        }
    }
    let counts: Vec<usize> = space.params().iter().map(|p| p.values.len()).collect();
    let mut ranks: Vec<u16> = vec![0; counts.len()];
    let mut best: Option<(Configuration, f64)> = None;
    loop {
        let cfg = Configuration { ranks: ranks.clone() };
        let fitness = eval.eval(&cfg)?;
        let better = match &best {
            None => true,
            Some((_, bf)) => fitness > *bf,
        };
        if better {
            best = Some((cfg, fitness));
        }
        // Odometer increment, last parameter fastest.
        let mut pos = counts.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            ranks[pos] += 1;
            if usize::from(ranks[pos]) < counts[pos] {
                break;
            }
            ranks[pos] = 0;
            if pos == 0 {
                let (best_cfg, best_fitness) = best.expect("at least one evaluation");
                return Ok(SearchOutcome {
                    best: best_cfg,
                    best_fitness,
                    history: vec![best_fitness],
                    evaluations: eval.calls(),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::parse_design_space;

    fn toy_space() -> DesignSpace {
        parse_design_space(
            "a | core | 1,2,3,4\n\
             b | core | 1,2,3,4\n\
             c | imem | 1,2,3,4\n\
             d | imem | 1,2,3,4\n",
        )
        .unwrap()
    }

    /// Smooth unimodal objective with optimum at ranks (3, 2, 1, 0).
    fn toy_eval<'a>() -> Evaluator<'a> {
        Evaluator::new(|cfg: &Configuration| {
            let target = [3.0, 2.0, 1.0, 0.0];
            let d: f64 = cfg
                .ranks
                .iter()
                .zip(target.iter())
                .map(|(&r, &t)| (f64::from(r) - t).powi(2))
                .sum();
            Ok(100.0 - d)
        })
    }

    #[test]
    fn exhaustive_finds_the_known_optimum() {
        let space = toy_space();
        let eval = toy_eval();
        let out = exhaustive_search(&space, &eval, None).unwrap();
        assert_eq!(out.best.ranks, vec![3, 2, 1, 0]);
        assert_eq!(out.best_fitness, 100.0);
        assert_eq!(out.evaluations, 256);
    }

    #[test]
    fn exhaustive_respects_the_cap() {
        let space = toy_space();
        let eval = toy_eval();
        assert!(matches!(
            exhaustive_search(&space, &eval, Some(100)),
            Err(Error::CapExceeded(_))
        ));
        // No evaluations happen when the cap trips.
        assert_eq!(eval.calls(), 0);
    }

    #[test]
    fn exhaustive_keeps_first_best_on_ties() {
        let space = parse_design_space("a | core | 1,2\nb | core | 1,2\n").unwrap();
        let eval = Evaluator::new(|_: &Configuration| Ok(1.0));
        let out = exhaustive_search(&space, &eval, None).unwrap();
        // All fitnesses tie; lexicographically first config wins.
        assert_eq!(out.best.ranks, vec![0, 0]);
    }

    #[test]
    fn ga_reaches_near_optimum_and_history_is_monotone() {
        let space = toy_space();
        for seed in 0..5 {
            let eval = toy_eval();
            let out = ga_search(&space, &eval, &SearchSpec::optimized(seed)).unwrap();
            assert!(out.best_fitness >= 99.0, "seed {seed}: {}", out.best_fitness);
            assert_eq!(out.history.len(), 51);
            for w in out.history.windows(2) {
                assert!(w[1] >= w[0], "best-so-far must never decrease");
            }
            assert_eq!(out.evaluations, eval.calls());
        }
    }

    #[test]
    fn abc_reaches_near_optimum_and_history_is_monotone() {
        let space = toy_space();
        for seed in 0..5 {
            let eval = toy_eval();
            let out = abc_search(&space, &eval, &SearchSpec::optimized(seed)).unwrap();
            assert!(out.best_fitness >= 99.0, "seed {seed}: {}", out.best_fitness);
            for w in out.history.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn searches_are_deterministic_per_seed() {
        let space = toy_space();
        let (e1, e2) = (toy_eval(), toy_eval());
        let a = ga_search(&space, &e1, &SearchSpec::optimized(7)).unwrap();
        let b = ga_search(&space, &e2, &SearchSpec::optimized(7)).unwrap();
        assert_eq!(a, b);
        let (e1, e2) = (toy_eval(), toy_eval());
        let a = abc_search(&space, &e1, &SearchSpec::optimized(7)).unwrap();
        let b = abc_search(&space, &e2, &SearchSpec::optimized(7)).unwrap();
        assert_eq!(a, b);
        // Different seeds explore differently (evaluation counts or
        // history diverge).
        let e3 = toy_eval();
        let c = ga_search(&space, &e3, &SearchSpec::optimized(8)).unwrap();
        assert!(c.history != a.history || c.evaluations != a.evaluations || c.best != a.best);
    }

    #[test]
    fn convergence_iteration_finds_first_threshold_crossing() {
        assert_eq!(convergence_iteration(&[1.0, 5.0, 9.0, 10.0], 0.9), Some(2));
        assert_eq!(convergence_iteration(&[10.0, 10.0], 0.9), Some(0));
        assert_eq!(convergence_iteration(&[], 0.9), None);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let space = toy_space();
        let eval = toy_eval();
        let mut spec = SearchSpec::optimized(1);
        spec.population = 1;
        assert!(matches!(ga_search(&space, &eval, &spec), Err(Error::InvalidArgument(_))));
        let mut spec = SearchSpec::optimized(1);
        spec.mutation_rate = 1.5;
        assert!(ga_search(&space, &eval, &spec).is_err());
        let mut spec = SearchSpec::optimized(1);
        spec.anneal = 0.0;
        assert!(abc_search(&space, &eval, &spec).is_err());
    }

    #[test]
    fn evaluator_counts_calls_and_rejects_non_finite() {
        let eval = Evaluator::new(|_: &Configuration| Ok(f64::NAN));
        let cfg = Configuration { ranks: vec![0] };
        assert!(eval.eval(&cfg).is_err());
        assert_eq!(eval.calls(), 1);
    }
}
