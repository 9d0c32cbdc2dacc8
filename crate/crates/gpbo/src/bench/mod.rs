//! Synthetic benchmark problems and contest-protocol plumbing: a noise model
//! matching the observed partial-evaluation statistics (95% CI coverage, 50%
//! exceedance, shrinking intervals), consistency measurement, run records,
//! and plot-ready report generation.

mod functions;
pub mod io;
pub mod report;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bo::{run_preliminary, LoopParams, ObservationSource};
use crate::error::{Error, Result};
use crate::fidelity::{PartialReward, TrialState, TrialStatus};
use crate::par::map_range;
use crate::space::{Configuration, Space};

/// The iteration whose reward is exact and scored; everything before it is a
/// noisy partial.
pub const FINAL_ITERATION: u32 = 14;

/// Default noise base as a fraction of the empirical reward range, calibrated
/// so iteration-7 all-pairs order consistency clears 95% on the default
/// problem.
pub const NOISE_BASE_FACTOR: f64 = 0.025;

/// Grids at or below this size get exact exhaustive scans for range and
/// optimum; larger ones are estimated from a 10k random sample.
const SCAN_LIMIT: u128 = 200_000;

const RANGE_SAMPLE: usize = 10_000;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-trial noise stream; separate trials never share draws.
pub struct TrialNoise {
    trial_id: u64,
    rng: ChaCha8Rng,
}

impl TrialNoise {
    pub fn new(base_seed: u64, trial_id: u64) -> Self {
        let mixed = splitmix64(base_seed ^ trial_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self {
            trial_id,
            rng: ChaCha8Rng::seed_from_u64(mixed),
        }
    }

    pub fn trial_id(&self) -> u64 {
        self.trial_id
    }
}

/// A synthetic maximization problem over an indexed grid with a per-iteration
/// noise schedule `s_t = s1 / sqrt(t)` on partial rewards and an exact final.
#[derive(Clone)]
pub struct Problem {
    name: String,
    space: Space,
    objective: Arc<dyn Fn(&Configuration) -> f64 + Send + Sync>,
    noise_base: f64,
    final_iteration: u32,
    seed: u64,
    reward_range: f64,
    reward_min: f64,
    reward_max: f64,
    best_known: Option<(Configuration, f64)>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("space", &self.space)
            .field("noise_base", &self.noise_base)
            .field("seed", &self.seed)
            .field("reward_range", &self.reward_range)
            .finish()
    }
}

/// Builds one of the named grid problems: `branin_grid` (2-D),
/// `rosenbrock_grid` (>= 2-D), or `ackley_grid`. The grid is mapped onto the
/// function's canonical domain and the reward is the negated function value.
pub fn make_problem(name: &str, grid: &[usize], seed: u64) -> Result<Problem> {
    make_problem_on(name, Space::from_cardinalities(grid)?, seed)
}

type TestFn = fn(&[f64]) -> f64;

/// Same as [`make_problem`] but on an existing space (e.g. one parsed from a
/// space definition file).
pub fn make_problem_on(name: &str, space: Space, seed: u64) -> Result<Problem> {
    let d = space.dim();
    let (domains, eval): (Vec<(f64, f64)>, TestFn) = match name {
        "branin_grid" => {
            if d != 2 {
                return Err(Error::InvalidInput(format!(
                    "branin_grid needs a 2-D grid, got {d}-D"
                )));
            }
            (vec![(-5.0, 10.0), (0.0, 15.0)], functions::branin)
        }
        "rosenbrock_grid" => {
            if d < 2 {
                return Err(Error::InvalidInput(format!(
                    "rosenbrock_grid needs >= 2 dimensions, got {d}"
                )));
            }
            (vec![(-2.048, 2.048); d], functions::rosenbrock)
        }
        "ackley_grid" => (vec![(-32.768, 32.768); d], functions::ackley),
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown problem {other:?} (expected branin_grid, rosenbrock_grid, or ackley_grid)"
            )))
        }
    };
    let closure_space = space.clone();
    Problem::from_objective(name, space, seed, move |c: &Configuration| {
        let u = closure_space.to_unit(c).expect("validated configuration");
        let x: Vec<f64> = u
            .iter()
            .zip(&domains)
            .map(|(ui, (lo, hi))| lo + ui * (hi - lo))
            .collect();
        -eval(&x)
    })
}

impl Problem {
    /// Wraps an arbitrary deterministic objective (maximization scale).
    /// Reward range — and from it the noise base — comes from an exhaustive
    /// scan on small grids, or a seeded 10k sample on large ones.
    pub fn from_objective(
        name: &str,
        space: Space,
        seed: u64,
        objective: impl Fn(&Configuration) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let objective: Arc<dyn Fn(&Configuration) -> f64 + Send + Sync> = Arc::new(objective);
        let size = space.grid_size();
        let (reward_min, reward_max, best_known) = if size <= SCAN_LIMIT {
            let n = size as usize;
            let rewards = map_range(n, |rank| {
                let c = space
                    .configuration_at(rank as u128)
                    .expect("rank within grid");
                (objective)(&c)
            });
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut argmax = 0usize;
            for (i, &r) in rewards.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "objective is non-finite at grid rank {i}"
                    )));
                }
                if r < min {
                    min = r;
                }
                if r > max {
                    max = r;
                    argmax = i;
                }
            }
            let best = space.configuration_at(argmax as u128).expect("in range");
            (min, max, Some((best, max)))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xA5A5_5A5A));
            let sample = space.sample_random(&mut rng, RANGE_SAMPLE);
            let rewards: Vec<f64> = sample.iter().map(|c| (objective)(c)).collect();
            if rewards.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidInput(
                    "objective is non-finite on a sample".into(),
                ));
            }
            let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (min, max, None)
        };
        let reward_range = reward_max - reward_min;
        Ok(Self {
            name: name.to_string(),
            space,
            objective,
            noise_base: NOISE_BASE_FACTOR * reward_range,
            final_iteration: FINAL_ITERATION,
            seed,
            reward_range,
            reward_min,
            reward_max,
            best_known,
        })
    }

    /// Overrides the calibrated noise base (s1).
    pub fn with_noise_base(mut self, s1: f64) -> Result<Self> {
        if !s1.is_finite() || s1 < 0.0 {
            return Err(Error::InvalidInput(format!("noise base {s1} must be >= 0")));
        }
        self.noise_base = s1;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_base(&self) -> f64 {
        self.noise_base
    }

    pub fn reward_range(&self) -> f64 {
        self.reward_range
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        (self.reward_min, self.reward_max)
    }

    /// Exact grid optimum (configuration, reward) when the grid was small
    /// enough to scan exhaustively.
    pub fn grid_optimum(&self) -> Option<&(Configuration, f64)> {
        self.best_known.as_ref()
    }

    pub fn final_iteration(&self) -> u32 {
        self.final_iteration
    }

    /// Noise std at iteration `t`: `s1 / sqrt(t)` before the final, 0 at it.
    pub fn noise_std(&self, t: u32) -> Result<f64> {
        if t == 0 || t > self.final_iteration {
            return Err(Error::InvalidInput(format!(
                "iteration {t} outside [1, {}]",
                self.final_iteration
            )));
        }
        Ok(if t == self.final_iteration {
            0.0
        } else {
            self.noise_base / (t as f64).sqrt()
        })
    }

    /// Exact, noise-free reward (the preliminary protocol's evaluation).
    pub fn evaluate_full(&self, c: &Configuration) -> Result<f64> {
        self.space.validate(c)?;
        Ok((self.objective)(c))
    }

    /// Fresh noise stream for one trial, derived from the problem seed.
    pub fn trial_stream(&self, trial_id: u64) -> TrialNoise {
        TrialNoise::new(self.seed, trial_id)
    }

    /// One streamed iteration: unbiased Gaussian around the true reward with
    /// std `s_t` and CI `r +- 1.96 s_t`; the final iteration is exact with a
    /// zero-width CI.
    pub fn evaluate_partial(
        &self,
        c: &Configuration,
        t: u32,
        stream: &mut TrialNoise,
    ) -> Result<PartialReward> {
        self.space.validate(c)?;
        let s = self.noise_std(t)?;
        let truth = (self.objective)(c);
        if t == self.final_iteration {
            return Ok(PartialReward {
                trial_id: stream.trial_id,
                iteration: t,
                reward: truth,
                ci_lower: truth,
                ci_upper: truth,
            });
        }
        let eps = if s > 0.0 {
            let normal = rand_distr::Normal::new(0.0, s)
                .map_err(|e| Error::InvalidInput(format!("noise std {s}: {e}")))?;
            stream.rng.sample(normal)
        } else {
            0.0
        };
        let reward = truth + eps;
        Ok(PartialReward {
            trial_id: stream.trial_id,
            iteration: t,
            reward,
            ci_lower: reward - 1.96 * s,
            ci_upper: reward + 1.96 * s,
        })
    }

    /// Configurations in the top `fraction` of the space by true reward
    /// (at least two), available only when the grid is scannable.
    pub fn top_fraction_configs(&self, fraction: f64) -> Option<Vec<Configuration>> {
        let size = self.space.grid_size();
        if size > SCAN_LIMIT {
            return None;
        }
        let n = size as usize;
        let rewards = map_range(n, |rank| {
            let c = self.space.configuration_at(rank as u128).expect("in range");
            (self.objective)(&c)
        });
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
        let count = ((n as f64 * fraction).ceil() as usize).clamp(2, n);
        Some(
            order[..count]
                .iter()
                .map(|&rank| self.space.configuration_at(rank as u128).expect("in range"))
                .collect(),
        )
    }
}

/// Order-consistency rates between one partial draw per configuration and the
/// true finals.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyMeasurement {
    pub iteration: u32,
    pub sample: usize,
    /// Fraction of all pairs whose partial order matches their final order.
    pub all_pairs: f64,
    /// Same rate restricted to top-1% configurations by final reward.
    pub top_rate: f64,
    pub top_count: usize,
}

fn pair_consistency(partials: &[f64], finals: &[f64]) -> f64 {
    let n = partials.len();
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..i {
            pairs += 1;
            if (partials[i] > partials[j]) == (finals[i] > finals[j]) {
                hits += 1;
            }
        }
    }
    if pairs == 0 {
        f64::NAN
    } else {
        hits as f64 / pairs as f64
    }
}

/// Draws `sample` random configurations, one partial each at iteration `t`,
/// and reports the fraction of pairs whose partial-reward order matches their
/// true final-reward order — over all pairs, and restricted to the top-1% of
/// the space by final reward (falling back to the top of the sample when the
/// grid is too large to scan).
pub fn measure_consistency(
    problem: &Problem,
    sample: usize,
    t: u32,
    seed: u64,
) -> Result<ConsistencyMeasurement> {
    if sample < 2 {
        return Err(Error::InvalidInput(format!(
            "consistency needs sample >= 2, got {sample}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = problem.space().sample_random(&mut rng, sample);
    let finals: Vec<f64> = configs
        .iter()
        .map(|c| problem.evaluate_full(c))
        .collect::<Result<_>>()?;
    let partials: Vec<f64> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut stream = TrialNoise::new(seed, i as u64);
            problem
                .evaluate_partial(c, t, &mut stream)
                .map(|p| p.reward)
        })
        .collect::<Result<_>>()?;
    let all_pairs = pair_consistency(&partials, &finals);

    let (top_partials, top_finals) = match problem.top_fraction_configs(0.01) {
        Some(top_configs) => {
            let finals: Vec<f64> = top_configs
                .iter()
                .map(|c| problem.evaluate_full(c))
                .collect::<Result<_>>()?;
            let partials: Vec<f64> = top_configs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    // salted ids keep these draws independent of the sample's
                    let mut stream = TrialNoise::new(seed ^ 0x70F0_F0F0, i as u64);
                    problem
                        .evaluate_partial(c, t, &mut stream)
                        .map(|p| p.reward)
                })
                .collect::<Result<_>>()?;
            (partials, finals)
        }
        None => {
            let count = ((sample as f64 / 100.0).ceil() as usize).clamp(2, sample);
            let mut order: Vec<usize> = (0..sample).collect();
            order.sort_by(|&a, &b| finals[b].total_cmp(&finals[a]).then(a.cmp(&b)));
            order.truncate(count);
            (
                order.iter().map(|&i| partials[i]).collect(),
                order.iter().map(|&i| finals[i]).collect(),
            )
        }
    };
    let top_count = top_finals.len();
    let top_rate = pair_consistency(&top_partials, &top_finals);

    Ok(ConsistencyMeasurement {
        iteration: t,
        sample,
        all_pairs,
        top_rate,
        top_count,
    })
}

/// Noise-model measurement at one fixed configuration.
#[derive(Debug, Clone, Copy)]
pub struct IterationNoise {
    pub iteration: u32,
    pub ci_width: f64,
    pub coverage: f64,
    pub exceedance: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseVerification {
    pub draws: usize,
    pub per_iteration: Vec<IterationNoise>,
    /// Pooled CI coverage of the true final over iterations 1..=13.
    pub coverage: f64,
    /// Pooled fraction of draws the true final exceeds.
    pub exceedance: f64,
    pub widths_strictly_decreasing: bool,
    pub consistency: ConsistencyMeasurement,
}

/// Monte Carlo check of the noise model: draws partials at a fixed seeded
/// configuration for every pre-final iteration and measures CI coverage,
/// exceedance probability, and CI widths, plus order consistency at the
/// default decision iteration (7) over 200 sampled configurations.
pub fn verify_noise(problem: &Problem, draws: usize, seed: u64) -> Result<NoiseVerification> {
    if draws == 0 {
        return Err(Error::InvalidInput("draws must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = problem
        .space()
        .sample_random(&mut rng, 1)
        .pop()
        .expect("one sample");
    let truth = problem.evaluate_full(&config)?;

    let mut per_iteration = Vec::new();
    let mut covered = 0usize;
    let mut exceeded = 0usize;
    for t in 1..problem.final_iteration() {
        let mut stream = TrialNoise::new(seed, t as u64);
        let mut cov = 0usize;
        let mut exc = 0usize;
        let mut width = 0.0;
        for _ in 0..draws {
            let p = problem.evaluate_partial(&config, t, &mut stream)?;
            width = p.ci_upper - p.ci_lower;
            if (p.ci_lower..=p.ci_upper).contains(&truth) {
                cov += 1;
            }
            if truth > p.reward {
                exc += 1;
            }
        }
        covered += cov;
        exceeded += exc;
        per_iteration.push(IterationNoise {
            iteration: t,
            ci_width: width,
            coverage: cov as f64 / draws as f64,
            exceedance: exc as f64 / draws as f64,
        });
    }
    let total = draws * per_iteration.len();
    let widths_strictly_decreasing = per_iteration
        .windows(2)
        .all(|w| w[1].ci_width < w[0].ci_width);
    let consistency = measure_consistency(problem, 200, 7, seed)?;

    Ok(NoiseVerification {
        draws,
        per_iteration,
        coverage: covered as f64 / total as f64,
        exceedance: exceeded as f64 / total as f64,
        widths_strictly_decreasing,
        consistency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Preliminary,
    Final,
}

/// One evaluated configuration as written to run files.
#[derive(Debug, Clone)]
pub struct ObservationRow {
    pub batch: usize,
    pub slot: usize,
    pub indices: Vec<usize>,
    pub loss: f64,
    pub reward: f64,
    pub source: ObservationSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSoFarPoint {
    /// Evaluations (preliminary) or fidelity units (final) consumed.
    pub units: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub completed: usize,
    pub stopped: usize,
    pub truncated: usize,
}

/// Rates measured from a run's own completed trials.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyStats {
    pub ci_coverage: f64,
    pub exceedance: f64,
    /// Order consistency at the decision iteration over completed pairs.
    pub order_consistency: f64,
    pub partials: usize,
    pub pairs: usize,
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub protocol: Protocol,
    pub observations: Vec<ObservationRow>,
    pub trials: Vec<TrialState>,
    pub best_so_far: Vec<BestSoFarPoint>,
    pub counts: RunCounts,
    pub consistency_stats: Option<ConsistencyStats>,
}

impl RunReport {
    pub(crate) fn preliminary(rows: Vec<ObservationRow>, curve: Vec<BestSoFarPoint>) -> Self {
        let counts = RunCounts {
            completed: rows.len(),
            stopped: 0,
            truncated: 0,
        };
        Self {
            protocol: Protocol::Preliminary,
            observations: rows,
            trials: Vec::new(),
            best_so_far: curve,
            counts,
            consistency_stats: None,
        }
    }

    pub(crate) fn final_protocol(
        trials: Vec<TrialState>,
        curve: Vec<BestSoFarPoint>,
        stats: Option<ConsistencyStats>,
    ) -> Self {
        let mut counts = RunCounts::default();
        for t in &trials {
            match (t.status, t.budget_truncated) {
                (TrialStatus::Completed, _) => counts.completed += 1,
                (TrialStatus::Stopped, true) => counts.truncated += 1,
                (TrialStatus::Stopped, false) => counts.stopped += 1,
                (TrialStatus::Running, _) => {}
            }
        }
        Self {
            protocol: Protocol::Final,
            observations: Vec::new(),
            trials,
            best_so_far: curve,
            counts,
            consistency_stats: stats,
        }
    }

    /// Best reward on the run's validity scale (final curve point).
    pub fn best_reward(&self) -> Option<f64> {
        self.best_so_far.last().map(|p| p.reward)
    }
}

/// Pure random search under the preliminary protocol (identical budgets,
/// batching, and dedupe rules).
pub fn run_random_search(problem: &Problem, budget: usize, seed: u64) -> Result<RunReport> {
    run_preliminary(problem, budget, &LoopParams::pure_random(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branin_grid_scan_matches_expectations() {
        let problem = make_problem("branin_grid", &[50, 50], 0).unwrap();
        // independent exhaustive scan over all 2500 configurations
        let mut best = f64::NEG_INFINITY;
        for c in problem.space().iter_configurations() {
            best = best.max(problem.evaluate_full(&c).unwrap());
        }
        assert!(best >= -0.5, "best grid reward {best} below -0.5");
        let (opt_config, opt_reward) = problem.grid_optimum().unwrap();
        assert_eq!(best, *opt_reward);
        assert_eq!(problem.evaluate_full(opt_config).unwrap(), *opt_reward);
        assert!(
            problem.evaluate_full(opt_config).unwrap()
                >= problem
                    .evaluate_full(&Configuration::new(vec![10, 10]))
                    .unwrap()
        );
    }

    #[test]
    fn single_point_grid_is_constant() {
        let problem = make_problem("ackley_grid", &[1, 1], 0).unwrap();
        let c = Configuration::new(vec![0, 0]);
        assert_eq!(
            problem.evaluate_full(&c).unwrap(),
            problem.evaluate_full(&c).unwrap()
        );
        assert_eq!(problem.reward_range(), 0.0);
    }

    #[test]
    fn same_problem_and_seed_is_identical_everywhere() {
        let a = make_problem("rosenbrock_grid", &[9, 9, 9], 5).unwrap();
        let b = make_problem("rosenbrock_grid", &[9, 9, 9], 5).unwrap();
        for c in a.space().iter_configurations() {
            assert_eq!(a.evaluate_full(&c).unwrap(), b.evaluate_full(&c).unwrap());
        }
        assert_eq!(a.noise_base(), b.noise_base());
    }

    #[test]
    fn unknown_problem_name_is_invalid_input() {
        assert!(matches!(
            make_problem("sphere_grid", &[5, 5], 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(make_problem("branin_grid", &[5, 5, 5], 0).is_err());
        assert!(make_problem("rosenbrock_grid", &[5], 0).is_err());
    }

    #[test]
    fn final_iteration_is_exact_with_zero_width_ci() {
        let problem = make_problem("branin_grid", &[10, 10], 3).unwrap();
        let c = Configuration::new(vec![4, 7]);
        let truth = problem.evaluate_full(&c).unwrap();
        let mut stream = problem.trial_stream(0);
        let p = problem
            .evaluate_partial(&c, FINAL_ITERATION, &mut stream)
            .unwrap();
        assert_eq!(p.reward, truth);
        assert_eq!(p.ci_lower, truth);
        assert_eq!(p.ci_upper, truth);
        assert!(problem.evaluate_partial(&c, 0, &mut stream).is_err());
        assert!(problem.evaluate_partial(&c, 15, &mut stream).is_err());
    }

    #[test]
    fn ci_coverage_and_exceedance_by_construction() {
        let problem = make_problem("branin_grid", &[20, 20], 9).unwrap();
        let c = Configuration::new(vec![3, 3]);
        let truth = problem.evaluate_full(&c).unwrap();
        let t = 4u32;
        let mut covered = 0usize;
        let mut exceeded = 0usize;
        let draws = 10_000;
        for i in 0..draws {
            let mut stream = problem.trial_stream(i as u64);
            let p = problem.evaluate_partial(&c, t, &mut stream).unwrap();
            if (p.ci_lower..=p.ci_upper).contains(&truth) {
                covered += 1;
            }
            if truth > p.reward {
                exceeded += 1;
            }
        }
        let cov = covered as f64 / draws as f64;
        let exc = exceeded as f64 / draws as f64;
        assert!((cov - 0.95).abs() <= 0.015, "coverage {cov}");
        assert!((exc - 0.50).abs() <= 0.015, "exceedance {exc}");
    }

    #[test]
    fn noise_schedule_strictly_shrinks() {
        let problem = make_problem("branin_grid", &[20, 20], 1).unwrap();
        for t in 1..13 {
            assert!(
                problem.noise_std(t + 1).unwrap() < problem.noise_std(t).unwrap(),
                "schedule not decreasing at t={t}"
            );
        }
        assert_eq!(problem.noise_std(FINAL_ITERATION).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_schedule_has_perfect_consistency() {
        let problem = make_problem("branin_grid", &[30, 30], 2)
            .unwrap()
            .with_noise_base(0.0)
            .unwrap();
        let m = measure_consistency(&problem, 100, 7, 4).unwrap();
        assert_eq!(m.all_pairs, 1.0);
        assert_eq!(m.top_rate, 1.0);
    }

    #[test]
    fn equal_objectives_are_a_coin_flip() {
        let space = Space::from_cardinalities(&[64]).unwrap();
        let problem = Problem::from_objective("flat", space, 0, |_| 1.0)
            .unwrap()
            .with_noise_base(1.0)
            .unwrap();
        let m = measure_consistency(&problem, 200, 7, 8).unwrap();
        assert!(
            (m.all_pairs - 0.5).abs() < 0.08,
            "flat-objective consistency {} far from 0.5",
            m.all_pairs
        );
    }

    #[test]
    fn default_problem_consistency_clears_the_bar() {
        let problem = make_problem("branin_grid", &[50, 50], 0).unwrap();
        let m = measure_consistency(&problem, 200, 7, 0).unwrap();
        assert!(m.all_pairs > 0.95, "all-pairs consistency {}", m.all_pairs);
        assert!(
            m.top_rate < m.all_pairs,
            "top rate {} not lower",
            m.top_rate
        );
        assert_eq!(m.top_count, 25);
    }

    #[test]
    fn verify_noise_reports_sane_rates() {
        let problem = make_problem("branin_grid", &[50, 50], 0).unwrap();
        let v = verify_noise(&problem, 2000, 7).unwrap();
        assert!((v.coverage - 0.95).abs() < 0.02, "coverage {}", v.coverage);
        assert!(
            (v.exceedance - 0.50).abs() < 0.02,
            "exceedance {}",
            v.exceedance
        );
        assert!(v.widths_strictly_decreasing);
        assert_eq!(v.per_iteration.len(), 13);
    }

    #[test]
    fn measurement_is_deterministic() {
        let problem = make_problem("branin_grid", &[50, 50], 0).unwrap();
        let a = measure_consistency(&problem, 50, 7, 3).unwrap();
        let b = measure_consistency(&problem, 50, 7, 3).unwrap();
        assert_eq!(a.all_pairs, b.all_pairs);
        assert_eq!(a.top_rate, b.top_rate);
    }
}
