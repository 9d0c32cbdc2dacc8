//! Synchronous Bayesian-optimization controller for the preliminary
//! protocol: greedy initial design first, then batches whose slots are each
//! filled by a fresh acquisition restart or, with fixed probability, a
//! uniform random configuration. Every suggestion is distinct from
//! everything observed, pending, or earlier in the same batch.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acq::{self, AcqCache, AcqParams};
use crate::bench::{BestSoFarPoint, ObservationRow, Problem, RunReport};
use crate::error::{Error, Result};
use crate::gp::{self, FitMode, GpModel};
use crate::init::{random_explore_first, InitDesignParams};
use crate::par::map_slice;
use crate::space::{Configuration, Space};

/// Where an observation's configuration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationSource {
    Initial,
    Model,
    Random,
    Imputed,
}

impl ObservationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationSource::Initial => "initial",
            ObservationSource::Model => "model",
            ObservationSource::Random => "random",
            ObservationSource::Imputed => "imputed",
        }
    }
}

/// One evaluated configuration on the internal minimization scale
/// (`loss = -reward`).
#[derive(Debug, Clone)]
pub struct Observation {
    pub config: Configuration,
    pub loss: f64,
    pub source: ObservationSource,
}

/// The measurement set: evaluated observations plus configurations suggested
/// but not yet observed. No configuration ever appears twice across the two.
#[derive(Debug, Clone, Default)]
pub struct History {
    observations: Vec<Observation>,
    pending: Vec<Configuration>,
    seen: HashSet<Configuration>,
}

impl History {
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn pending(&self) -> &[Configuration] {
        &self.pending
    }

    /// True when `c` is observed or pending.
    pub fn contains(&self, c: &Configuration) -> bool {
        self.seen.contains(c)
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    /// Best (smallest) loss over genuinely observed configurations; imputed
    /// values never define the incumbent.
    pub fn best_loss(&self) -> Option<f64> {
        self.observations
            .iter()
            .filter(|o| o.source != ObservationSource::Imputed)
            .map(|o| o.loss)
            .min_by(f64::total_cmp)
    }

    /// Up to `n` genuinely observed configurations with the smallest losses,
    /// ties broken by observation order.
    pub fn best_configs(&self, n: usize) -> Vec<Configuration> {
        let mut idx: Vec<usize> = (0..self.observations.len())
            .filter(|&i| self.observations[i].source != ObservationSource::Imputed)
            .collect();
        idx.sort_by(|&a, &b| {
            self.observations[a]
                .loss
                .total_cmp(&self.observations[b].loss)
                .then(a.cmp(&b))
        });
        idx.truncate(n);
        idx.iter()
            .map(|&i| self.observations[i].config.clone())
            .collect()
    }

    pub(crate) fn insert_pending(&mut self, c: Configuration) -> bool {
        if !self.seen.insert(c.clone()) {
            return false;
        }
        self.pending.push(c);
        true
    }

    /// Moves a pending configuration into the observations. The caller has
    /// already checked membership.
    pub(crate) fn record(&mut self, obs: Observation) {
        if let Some(pos) = self.pending.iter().position(|p| p == &obs.config) {
            self.pending.remove(pos);
        }
        self.observations.push(obs);
    }

    pub(crate) fn force_record(&mut self, obs: Observation) -> bool {
        if !self.seen.insert(obs.config.clone()) {
            return false;
        }
        self.observations.push(obs);
        true
    }
}

/// Controller knobs for the preliminary protocol.
#[derive(Debug, Clone)]
pub struct LoopParams {
    pub batch_size: usize,
    /// Probability that a post-initialization slot is filled at random.
    pub random_prob: f64,
    /// Collision retries before falling back to random unseen sampling.
    pub max_dedupe_attempts: usize,
    pub init: InitDesignParams,
    pub acq: AcqParams,
    /// Surrogate hyperparameter handling; multi-start MLE unless pinned.
    pub fit_mode: FitMode,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            batch_size: 5,
            random_prob: 0.10,
            max_dedupe_attempts: 100,
            init: InitDesignParams::default(),
            acq: AcqParams::default(),
            fit_mode: FitMode::default(),
        }
    }
}

impl LoopParams {
    /// Pure random search under the same dedupe protocol: a single random
    /// initial point, then every slot random.
    pub fn pure_random() -> Self {
        Self {
            random_prob: 1.0,
            init: InitDesignParams {
                n_init: 1,
                pool_size: 1,
            },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.random_prob) {
            return Err(Error::InvalidInput(format!(
                "random_prob {} outside [0, 1]",
                self.random_prob
            )));
        }
        Ok(())
    }
}

/// Single-owner controller state for suggest/observe cycles.
#[derive(Clone)]
pub struct BoController {
    space: Space,
    params: LoopParams,
    history: History,
    rng: ChaCha8Rng,
    init_queue: VecDeque<Configuration>,
    pending_sources: HashMap<Configuration, ObservationSource>,
    model: Option<GpModel>,
    model_stale: bool,
    acq_cache: AcqCache,
}

impl BoController {
    pub fn new(space: Space, params: LoopParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = random_explore_first(&space, &params.init, &mut rng)?;
        Ok(Self {
            space,
            params,
            history: History::default(),
            rng,
            init_queue: design.points.into(),
            pending_sources: HashMap::new(),
            model: None,
            model_stale: true,
            acq_cache: AcqCache::new(),
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Best observed loss so far (minimization scale), ignoring imputations.
    pub fn best_so_far(&self) -> Option<f64> {
        self.history.best_loss()
    }

    /// The source a pending suggestion was produced by.
    pub fn suggested_source(&self, c: &Configuration) -> Option<ObservationSource> {
        self.pending_sources.get(c).copied()
    }

    fn exhausted(&self) -> bool {
        self.history.seen_count() as u128 >= self.space.grid_size()
    }

    fn model_usable(&self) -> bool {
        self.history.best_loss().is_some()
    }

    fn ensure_model(&mut self) -> Result<&GpModel> {
        if self.model_stale || self.model.is_none() {
            let configs: Vec<Configuration> = self
                .history
                .observations()
                .iter()
                .map(|o| o.config.clone())
                .collect();
            let losses: Vec<f64> = self.history.observations().iter().map(|o| o.loss).collect();
            let fit_seed = self.rng.random::<u64>();
            self.model = Some(gp::fit_with(
                &self.space,
                &configs,
                &losses,
                fit_seed,
                &self.params.fit_mode,
            )?);
            // memoized acquisition values are only valid against one fit
            self.acq_cache.clear();
            self.model_stale = false;
        }
        Ok(self.model.as_ref().expect("model fitted above"))
    }

    fn accept(
        &mut self,
        c: Configuration,
        source: ObservationSource,
        batch: &mut Vec<Configuration>,
    ) {
        self.history.insert_pending(c.clone());
        self.pending_sources.insert(c.clone(), source);
        batch.push(c);
    }

    /// Uniform sample over unseen configurations: rejection first, then an
    /// exhaustive lexicographic enumeration on grids small enough to walk.
    fn sample_unseen(&mut self) -> Option<Configuration> {
        for _ in 0..1000 {
            let c = self.space.sample_random(&mut self.rng, 1).pop().unwrap();
            if !self.history.contains(&c) {
                return Some(c);
            }
        }
        if self.space.grid_size() <= 1_000_000 {
            let unseen: Vec<Configuration> = self
                .space
                .iter_configurations()
                .filter(|c| !self.history.contains(c))
                .collect();
            if unseen.is_empty() {
                return None;
            }
            let pick = self.rng.random_range(0..unseen.len());
            return Some(unseen[pick].clone());
        }
        None
    }

    /// Fills up to `k` slots. Unconsumed initial-design points go first;
    /// afterwards each slot flips the random-interleave coin once and retries
    /// its suggestion kind on collisions, falling back to random unseen
    /// sampling after `max_dedupe_attempts`. Returns fewer than `k` only when
    /// the space is exhausted.
    pub fn suggest_batch(&mut self, k: usize) -> Result<Vec<Configuration>> {
        let mut batch = Vec::with_capacity(k);
        while batch.len() < k {
            if self.exhausted() {
                break;
            }
            if let Some(c) = self.init_queue.pop_front() {
                if self.history.contains(&c) {
                    continue;
                }
                self.accept(c, ObservationSource::Initial, &mut batch);
                continue;
            }

            let use_random =
                self.rng.random::<f64>() < self.params.random_prob || !self.model_usable();
            let source = if use_random {
                ObservationSource::Random
            } else {
                ObservationSource::Model
            };
            let mut placed = false;
            for _ in 0..self.params.max_dedupe_attempts {
                let candidate = if use_random {
                    self.space.sample_random(&mut self.rng, 1).pop().unwrap()
                } else {
                    self.ensure_model()?;
                    let model = self.model.as_ref().expect("model is fresh");
                    acq::optimize_acquisition_cached(
                        model,
                        &self.history,
                        &self.space,
                        &self.params.acq,
                        &mut self.rng,
                        &mut self.acq_cache,
                    )?
                    .config
                };
                if !self.history.contains(&candidate) {
                    self.accept(candidate, source, &mut batch);
                    placed = true;
                    break;
                }
            }
            if !placed {
                match self.sample_unseen() {
                    Some(c) => self.accept(c, ObservationSource::Random, &mut batch),
                    None => break,
                }
            }
        }
        Ok(batch)
    }

    /// Records the result of a pending suggestion under its suggested source.
    pub fn observe(&mut self, config: &Configuration, loss: f64) -> Result<()> {
        let source = self
            .suggested_source(config)
            .ok_or_else(|| Error::ProtocolViolation(format!("{config:?} is not pending")))?;
        self.observe_as(config, loss, source)
    }

    /// Records the result of a pending suggestion, overriding the source
    /// (the early-stopping layer records imputed losses this way).
    pub fn observe_as(
        &mut self,
        config: &Configuration,
        loss: f64,
        source: ObservationSource,
    ) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite loss {loss}")));
        }
        if self.suggested_source(config).is_none() {
            return Err(Error::ProtocolViolation(format!(
                "{config:?} is not pending (already observed or never suggested)"
            )));
        }
        self.pending_sources.remove(config);
        self.history.record(Observation {
            config: config.clone(),
            loss,
            source,
        });
        self.model_stale = true;
        Ok(())
    }

    /// Inserts an observation that was never suggested (harness replay).
    pub fn force_observe(
        &mut self,
        config: &Configuration,
        loss: f64,
        source: ObservationSource,
    ) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite loss {loss}")));
        }
        self.space.validate(config)?;
        if self.suggested_source(config).is_some() {
            // pending suggestions go through observe
            return Err(Error::ProtocolViolation(format!(
                "{config:?} is pending; use observe"
            )));
        }
        if !self.history.force_record(Observation {
            config: config.clone(),
            loss,
            source,
        }) {
            return Err(Error::ProtocolViolation(format!(
                "{config:?} was already observed"
            )));
        }
        self.model_stale = true;
        Ok(())
    }
}

/// Runs the preliminary protocol: batches of suggestions evaluated
/// synchronously until exactly `budget` evaluations occur (or the space is
/// exhausted), observing in suggestion order.
pub fn run_preliminary(
    problem: &Problem,
    budget: usize,
    params: &LoopParams,
    seed: u64,
) -> Result<RunReport> {
    let mut controller = BoController::new(problem.space().clone(), params.clone(), seed)?;
    let mut rows = Vec::with_capacity(budget);
    let mut curve = Vec::with_capacity(budget);
    let mut best = f64::NEG_INFINITY;
    let mut evaluations = 0usize;
    let mut batch_index = 0usize;

    while evaluations < budget {
        let want = params.batch_size.min(budget - evaluations);
        let batch = controller.suggest_batch(want)?;
        if batch.is_empty() {
            break;
        }
        // batch members are independent; evaluate together, observe in order
        let rewards: Vec<f64> = map_slice(&batch, |c| problem.evaluate_full(c))
            .into_iter()
            .collect::<Result<_>>()?;
        for (slot, (config, reward)) in batch.iter().zip(rewards).enumerate() {
            let source = controller
                .suggested_source(config)
                .expect("freshly suggested");
            controller.observe(config, -reward)?;
            best = best.max(reward);
            rows.push(ObservationRow {
                batch: batch_index,
                slot,
                indices: config.indices().to_vec(),
                loss: -reward,
                reward,
                source,
            });
            curve.push(BestSoFarPoint {
                units: (evaluations + slot + 1) as u64,
                reward: best,
            });
        }
        evaluations += batch.len();
        batch_index += 1;
    }

    Ok(RunReport::preliminary(rows, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::make_problem;

    fn small_space() -> Space {
        Space::from_cardinalities(&[8, 8]).unwrap()
    }

    fn quick_params() -> LoopParams {
        LoopParams {
            acq: AcqParams {
                n_mc: 100,
                n_starts: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn initial_design_is_served_first_in_order() {
        let space = Space::from_cardinalities(&[30, 30]).unwrap();
        let params = quick_params();
        let mut a = BoController::new(space.clone(), params.clone(), 42).unwrap();
        let design =
            random_explore_first(&space, &params.init, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let first = a.suggest_batch(5).unwrap();
        let second = a.suggest_batch(5).unwrap();
        let served: Vec<Configuration> = first.into_iter().chain(second).collect();
        assert_eq!(served, design.points);
        assert!(served
            .iter()
            .all(|c| a.suggested_source(c) == Some(ObservationSource::Initial)));
    }

    #[test]
    fn exhaustion_returns_short_batch() {
        let space = Space::from_cardinalities(&[2, 2]).unwrap();
        let params = LoopParams {
            init: InitDesignParams {
                n_init: 1,
                pool_size: 8,
            },
            ..quick_params()
        };
        let mut ctl = BoController::new(space, params, 1).unwrap();
        let one = ctl.suggest_batch(1).unwrap();
        assert_eq!(one.len(), 1);
        ctl.observe(&one[0], 0.5).unwrap();
        // 3 unseen configurations remain
        let batch = ctl.suggest_batch(5).unwrap();
        assert_eq!(batch.len(), 3);
        let again = ctl.suggest_batch(5).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn observe_moves_pending_to_observations() {
        let mut ctl = BoController::new(small_space(), quick_params(), 3).unwrap();
        let batch = ctl.suggest_batch(2).unwrap();
        assert_eq!(ctl.history().pending().len(), 2);
        ctl.observe(&batch[0], 1.5).unwrap();
        assert_eq!(ctl.history().pending().len(), 1);
        assert_eq!(ctl.history().observations().len(), 1);
        assert_eq!(ctl.best_so_far(), Some(1.5));
    }

    #[test]
    fn double_observe_is_a_protocol_violation() {
        let mut ctl = BoController::new(small_space(), quick_params(), 3).unwrap();
        let batch = ctl.suggest_batch(1).unwrap();
        ctl.observe(&batch[0], 1.0).unwrap();
        assert!(matches!(
            ctl.observe(&batch[0], 1.0),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn observing_unknown_config_needs_force() {
        let mut ctl = BoController::new(small_space(), quick_params(), 3).unwrap();
        let stranger = Configuration::new(vec![7, 7]);
        assert!(matches!(
            ctl.observe(&stranger, 1.0),
            Err(Error::ProtocolViolation(_))
        ));
        ctl.force_observe(&stranger, 1.0, ObservationSource::Random)
            .unwrap();
        assert!(matches!(
            ctl.force_observe(&stranger, 2.0, ObservationSource::Random),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn non_finite_loss_rejected() {
        let mut ctl = BoController::new(small_space(), quick_params(), 3).unwrap();
        let batch = ctl.suggest_batch(1).unwrap();
        assert!(matches!(
            ctl.observe(&batch[0], f64::NAN),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn best_so_far_ignores_imputed() {
        let mut ctl = BoController::new(small_space(), quick_params(), 3).unwrap();
        let batch = ctl.suggest_batch(2).unwrap();
        ctl.observe(&batch[0], 2.0).unwrap();
        ctl.observe_as(&batch[1], -5.0, ObservationSource::Imputed)
            .unwrap();
        assert_eq!(ctl.best_so_far(), Some(2.0));
    }

    #[test]
    fn random_interleave_fraction_is_near_ten_percent() {
        // 1000 post-initialization suggestions in one batch on a space big
        // enough that dedupe fallbacks stay negligible
        let space = Space::from_cardinalities(&[20, 20, 20, 20, 20, 20]).unwrap();
        let params = LoopParams {
            acq: AcqParams {
                n_mc: 200,
                n_starts: 2,
                ..Default::default()
            },
            init: InitDesignParams {
                n_init: 10,
                pool_size: 1000,
            },
            ..Default::default()
        };
        let mut ctl = BoController::new(space, params, 7).unwrap();
        for c in ctl.suggest_batch(10).unwrap() {
            let u = ctl.space().to_unit(&c).unwrap();
            ctl.observe(&c, u.iter().map(|x| (x - 0.3).powi(2)).sum())
                .unwrap();
        }
        let batch = ctl.suggest_batch(1000).unwrap();
        assert_eq!(batch.len(), 1000);
        let random = batch
            .iter()
            .filter(|c| ctl.suggested_source(c) == Some(ObservationSource::Random))
            .count() as f64
            / 1000.0;
        assert!(
            (0.07..=0.13).contains(&random),
            "random fraction {random} outside [0.07, 0.13]"
        );
    }

    #[test]
    fn preliminary_run_shape_and_budget() {
        let problem = make_problem("branin_grid", &[12, 12], 0).unwrap();
        let params = quick_params();
        let report = run_preliminary(&problem, 23, &params, 9).unwrap();
        assert_eq!(report.observations.len(), 23);
        // 4 full batches of 5 plus a truncated batch of 3
        assert_eq!(report.observations.last().unwrap().batch, 4);
        assert_eq!(report.observations.last().unwrap().slot, 2);
        // no duplicate configurations in one run
        let mut seen = HashSet::new();
        for row in &report.observations {
            assert!(
                seen.insert(row.indices.clone()),
                "duplicate {:?}",
                row.indices
            );
        }
        // best-so-far is monotone non-decreasing in reward
        for pair in report.best_so_far.windows(2) {
            assert!(pair[1].reward >= pair[0].reward);
        }
    }

    #[test]
    fn preliminary_run_is_deterministic() {
        let problem = make_problem("branin_grid", &[10, 10], 3).unwrap();
        let params = quick_params();
        let a = run_preliminary(&problem, 20, &params, 5).unwrap();
        let b = run_preliminary(&problem, 20, &params, 5).unwrap();
        let rows = |r: &RunReport| -> Vec<(usize, usize, Vec<usize>, f64)> {
            r.observations
                .iter()
                .map(|o| (o.batch, o.slot, o.indices.clone(), o.loss))
                .collect()
        };
        assert_eq!(rows(&a), rows(&b));
    }

    #[test]
    fn exact_budget_with_even_batches() {
        let problem = make_problem("branin_grid", &[15, 15], 1).unwrap();
        let params = quick_params();
        let report = run_preliminary(&problem, 20, &params, 2).unwrap();
        assert_eq!(report.observations.len(), 20);
        assert_eq!(report.observations.last().unwrap().batch, 3);
    }
}
