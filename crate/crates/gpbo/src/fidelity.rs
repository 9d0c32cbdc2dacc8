//! Final-protocol controller: trials stream partial rewards one iteration at
//! a time, a median rule at the decision iteration stops weak trials once
//! enough full evaluations exist, and stopped trials feed the surrogate an
//! imputed loss (the median of observed finals) instead of nothing.

use crate::bench::{BestSoFarPoint, ConsistencyStats, Problem, RunReport};
use crate::bo::{BoController, LoopParams, ObservationSource};
use crate::error::{Error, Result};
use crate::space::Configuration;

/// One streamed evaluation step with its 95% confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialReward {
    pub trial_id: u64,
    pub iteration: u32,
    pub reward: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Running,
    Stopped,
    Completed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Running => "running",
            TrialStatus::Stopped => "stopped",
            TrialStatus::Completed => "completed",
        }
    }
}

/// Decision taken after each streamed partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
    Complete,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Continue => "continue",
            Decision::Stop => "stop",
            Decision::Complete => "complete",
        }
    }
}

/// One final-protocol evaluation: the streamed partials and how it ended.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub trial_id: u64,
    pub config: Configuration,
    pub partials: Vec<PartialReward>,
    /// Parallel to `partials`: the decision taken after each one.
    pub decisions: Vec<Decision>,
    pub status: TrialStatus,
    /// Stopped by budget exhaustion rather than the median rule.
    pub budget_truncated: bool,
    /// How the configuration was suggested (initial/model/random).
    pub suggested_source: ObservationSource,
    /// Loss recorded into the optimizer history (real for completed trials,
    /// imputed for stopped ones).
    pub final_or_imputed_loss: Option<f64>,
}

impl TrialState {
    fn new(trial_id: u64, config: Configuration, suggested_source: ObservationSource) -> Self {
        Self {
            trial_id,
            config,
            partials: Vec::new(),
            decisions: Vec::new(),
            status: TrialStatus::Running,
            budget_truncated: false,
            suggested_source,
            final_or_imputed_loss: None,
        }
    }

    /// Final reward when the trial completed all iterations.
    pub fn final_reward(&self) -> Option<f64> {
        if self.status == TrialStatus::Completed {
            self.partials.last().map(|p| p.reward)
        } else {
            None
        }
    }
}

/// Early-stopping policy knobs.
#[derive(Debug, Clone)]
pub struct FidelityParams {
    /// Completed-trial count required before any stop; `usize::MAX` disables
    /// stopping entirely.
    pub full_evals_before_stopping: usize,
    /// Iteration at which the median rule fires.
    pub decision_iteration: u32,
    pub total_iterations: u32,
    /// Total streamed iterations allowed across the run.
    pub fidelity_budget: u64,
}

impl Default for FidelityParams {
    fn default() -> Self {
        Self {
            full_evals_before_stopping: 40,
            decision_iteration: 7,
            total_iterations: 14,
            fidelity_budget: 700,
        }
    }
}

impl FidelityParams {
    pub fn without_early_stopping() -> Self {
        Self {
            full_evals_before_stopping: usize::MAX,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.decision_iteration == 0 || self.decision_iteration >= self.total_iterations {
            return Err(Error::InvalidInput(format!(
                "decision iteration {} must satisfy 1 <= it < total {}",
                self.decision_iteration, self.total_iterations
            )));
        }
        Ok(())
    }
}

/// Median with even counts averaged over the two central values.
pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Tracks the stopping rule's state: how many trials completed and every
/// decision-iteration reward seen so far (stopped and completed trials alike).
#[derive(Debug, Clone)]
pub struct StopRule {
    params: FidelityParams,
    completed: usize,
    decision_rewards: Vec<f64>,
}

impl StopRule {
    pub fn new(params: FidelityParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            completed: 0,
            decision_rewards: Vec::new(),
        })
    }

    pub fn completed_count(&self) -> usize {
        self.completed
    }

    pub fn decision_rewards(&self) -> &[f64] {
        &self.decision_rewards
    }

    pub fn record_completion(&mut self) {
        self.completed += 1;
    }

    /// Consumes one streamed partial: records decision-iteration rewards into
    /// the median pool (the current trial's own included), then stops only if
    /// the warmup has passed, this is the decision iteration, and the reward
    /// sits strictly below the pool median. Ties continue.
    pub fn should_stop(&mut self, trial: &TrialState, latest: &PartialReward) -> Result<Decision> {
        if trial.status != TrialStatus::Running {
            return Err(Error::ProtocolViolation(format!(
                "trial {} is not running",
                trial.trial_id
            )));
        }
        if latest.trial_id != trial.trial_id {
            return Err(Error::ProtocolViolation(format!(
                "partial from trial {} fed to trial {}",
                latest.trial_id, trial.trial_id
            )));
        }
        if latest.iteration != self.params.decision_iteration {
            return Ok(Decision::Continue);
        }
        self.decision_rewards.push(latest.reward);
        if self.completed < self.params.full_evals_before_stopping {
            return Ok(Decision::Continue);
        }
        let pool_median = median(&self.decision_rewards).expect("pool holds the latest reward");
        if latest.reward < pool_median {
            Ok(Decision::Stop)
        } else {
            Ok(Decision::Continue)
        }
    }
}

/// Median of final rewards over completed trials, negated onto the internal
/// loss scale. Previously imputed values never feed back into this.
pub fn impute_stopped(trials: &[TrialState]) -> Result<f64> {
    let finals: Vec<f64> = trials.iter().filter_map(|t| t.final_reward()).collect();
    match median(&finals) {
        Some(m) => Ok(-m),
        None => Err(Error::NotReady("no completed trials to impute from".into())),
    }
}

/// Runs the final protocol: one trial in flight at a time, each iteration
/// consuming one unit of fidelity budget. A new trial starts only while the
/// remaining budget can reach its next policy-permitted exit (the decision
/// iteration once stopping is active, the full run otherwise); trials caught
/// by mid-flight exhaustion are imputed and flagged `budget_truncated`.
pub fn run_final(
    problem: &Problem,
    params: &FidelityParams,
    loop_params: &LoopParams,
    seed: u64,
) -> Result<RunReport> {
    params.validate()?;
    if params.total_iterations != problem.final_iteration() {
        return Err(Error::InvalidInput(format!(
            "protocol runs {} iterations but the problem finalizes at {}",
            params.total_iterations,
            problem.final_iteration()
        )));
    }
    let mut controller = BoController::new(problem.space().clone(), loop_params.clone(), seed)?;
    let mut rule = StopRule::new(params.clone())?;
    let mut trials: Vec<TrialState> = Vec::new();
    let mut budget_left = params.fidelity_budget;
    let mut units_used = 0u64;
    let mut curve: Vec<BestSoFarPoint> = Vec::new();
    let mut best_valid = f64::NEG_INFINITY;
    let mut trial_id = 0u64;

    loop {
        let min_required = if rule.completed_count() >= params.full_evals_before_stopping {
            params.decision_iteration as u64
        } else {
            params.total_iterations as u64
        };
        if budget_left < min_required {
            break;
        }
        let Some(config) = controller.suggest_batch(1)?.into_iter().next() else {
            break; // space exhausted
        };
        let source = controller
            .suggested_source(&config)
            .expect("freshly suggested");
        let mut trial = TrialState::new(trial_id, config.clone(), source);
        let mut stream = problem.trial_stream(trial_id);

        for t in 1..=params.total_iterations {
            if budget_left == 0 {
                trial.status = TrialStatus::Stopped;
                trial.budget_truncated = true;
                break;
            }
            let partial = problem.evaluate_partial(&config, t, &mut stream)?;
            budget_left -= 1;
            units_used += 1;
            let decision = if t == params.total_iterations {
                Decision::Complete
            } else {
                rule.should_stop(&trial, &partial)?
            };
            trial.partials.push(partial);
            trial.decisions.push(decision);
            match decision {
                Decision::Continue => {}
                Decision::Stop => {
                    trial.status = TrialStatus::Stopped;
                    break;
                }
                Decision::Complete => {
                    trial.status = TrialStatus::Completed;
                    break;
                }
            }
        }

        match trial.status {
            TrialStatus::Completed => {
                rule.record_completion();
                let reward = trial.partials.last().expect("completed trial").reward;
                trial.final_or_imputed_loss = Some(-reward);
                controller.observe(&config, -reward)?;
                if reward > best_valid {
                    best_valid = reward;
                }
                curve.push(BestSoFarPoint {
                    units: units_used,
                    reward: best_valid,
                });
            }
            TrialStatus::Stopped => {
                let loss = impute_stopped(&trials)?;
                trial.final_or_imputed_loss = Some(loss);
                controller.observe_as(&config, loss, ObservationSource::Imputed)?;
            }
            TrialStatus::Running => unreachable!("trial loop always resolves the status"),
        }
        trials.push(trial);
        trial_id += 1;
    }

    let stats = consistency_from_trials(&trials, params.decision_iteration);
    Ok(RunReport::final_protocol(trials, curve, stats))
}

/// Coverage/exceedance/order-consistency measured from the run's own
/// completed trials.
pub fn consistency_from_trials(
    trials: &[TrialState],
    decision_iteration: u32,
) -> Option<ConsistencyStats> {
    let completed: Vec<&TrialState> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .collect();
    if completed.is_empty() {
        return None;
    }
    let mut covered = 0usize;
    let mut exceeded = 0usize;
    let mut partials = 0usize;
    for trial in &completed {
        let final_reward = trial.final_reward().expect("completed");
        // all streamed partials except the exact final itself
        for p in &trial.partials[..trial.partials.len() - 1] {
            partials += 1;
            if (p.ci_lower..=p.ci_upper).contains(&final_reward) {
                covered += 1;
            }
            if final_reward > p.reward {
                exceeded += 1;
            }
        }
    }

    let decided: Vec<(f64, f64)> = completed
        .iter()
        .filter_map(|t| {
            let at = t
                .partials
                .iter()
                .find(|p| p.iteration == decision_iteration)?;
            Some((at.reward, t.final_reward()?))
        })
        .collect();
    let mut pairs = 0usize;
    let mut consistent = 0usize;
    for i in 0..decided.len() {
        for j in 0..i {
            pairs += 1;
            if (decided[i].0 > decided[j].0) == (decided[i].1 > decided[j].1) {
                consistent += 1;
            }
        }
    }

    Some(ConsistencyStats {
        ci_coverage: if partials > 0 {
            covered as f64 / partials as f64
        } else {
            f64::NAN
        },
        exceedance: if partials > 0 {
            exceeded as f64 / partials as f64
        } else {
            f64::NAN
        },
        order_consistency: if pairs > 0 {
            consistent as f64 / pairs as f64
        } else {
            f64::NAN
        },
        partials,
        pairs,
    })
}
