//! Aggregates run files into plot-ready CSV tables: best-so-far curves,
//! per-iteration trajectories of the best 2 and 8 random configurations,
//! early-stop counts, and measured noise-model rates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::io::{format_float, read_run_file, RunLine};
use crate::error::{Error, Result};
use crate::fidelity::{consistency_from_trials, TrialState, TrialStatus};

/// How many top trials the trajectory table tracks.
const TOP_TRIALS: usize = 2;
/// How many random completed trials join them.
const RANDOM_TRIALS: usize = 8;
/// Decision iteration the rates table measures order consistency at.
const RATE_ITERATION: u32 = 7;

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub best_so_far: PathBuf,
    pub trajectories: PathBuf,
    pub early_stop_counts: PathBuf,
    pub rates: PathBuf,
    pub runs: usize,
}

enum ParsedRun {
    Preliminary(Vec<crate::bench::io::ObsLine>),
    Final(Vec<TrialState>),
}

fn classify(path: &Path) -> Result<ParsedRun> {
    let lines = read_run_file(path)?;
    let has_obs = lines.iter().any(|l| matches!(l, RunLine::Obs(_)));
    let has_trial = lines
        .iter()
        .any(|l| matches!(l, RunLine::Partial(_) | RunLine::Terminal(_)));
    if has_obs && has_trial {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "{}: file mixes preliminary and final records",
                path.display()
            ),
        });
    }
    if has_obs {
        let obs = lines
            .into_iter()
            .map(|l| match l {
                RunLine::Obs(o) => o,
                _ => unreachable!("checked above"),
            })
            .collect();
        Ok(ParsedRun::Preliminary(obs))
    } else {
        let trials = crate::bench::io::trials_from_lines(&lines)?;
        Ok(ParsedRun::Final(trials))
    }
}

fn run_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads every input run file and writes the four CSV tables into `out_dir`.
pub fn generate_report(inputs: &[PathBuf], out_dir: &Path) -> Result<ReportPaths> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no run files to report on".into()));
    }
    fs::create_dir_all(out_dir)?;

    let mut best_csv = String::from("run,unit,best_reward\n");
    let mut traj_csv = String::from("run,group,trial_id,iteration,lower,reward,upper\n");
    let mut counts_csv = String::from("run,completed,stopped,truncated\n");
    let mut rates_csv =
        String::from("run,ci_coverage,exceedance,order_consistency,partials,pairs\n");

    for path in inputs {
        let label = run_label(path);
        match classify(path)? {
            ParsedRun::Preliminary(obs) => {
                let mut best = f64::NEG_INFINITY;
                for (i, o) in obs.iter().enumerate() {
                    best = best.max(o.reward);
                    best_csv.push_str(&format!("{label},{},{}\n", i + 1, format_float(best)));
                }
                counts_csv.push_str(&format!("{label},{},0,0\n", obs.len()));
            }
            ParsedRun::Final(trials) => {
                // best-so-far over valid (completed) trials by fidelity units
                let mut best = f64::NEG_INFINITY;
                let mut units = 0u64;
                for t in &trials {
                    units += t.partials.len() as u64;
                    if t.status == TrialStatus::Completed {
                        let reward = -t.final_or_imputed_loss.expect("finished");
                        best = best.max(reward);
                        best_csv.push_str(&format!("{label},{units},{}\n", format_float(best)));
                    }
                }

                let mut completed = 0usize;
                let mut stopped = 0usize;
                let mut truncated = 0usize;
                for t in &trials {
                    match (t.status, t.budget_truncated) {
                        (TrialStatus::Completed, _) => completed += 1,
                        (TrialStatus::Stopped, true) => truncated += 1,
                        (TrialStatus::Stopped, false) => stopped += 1,
                        (TrialStatus::Running, _) => {}
                    }
                }
                counts_csv.push_str(&format!("{label},{completed},{stopped},{truncated}\n"));

                append_trajectories(&mut traj_csv, &label, &trials);

                if let Some(stats) = consistency_from_trials(&trials, RATE_ITERATION) {
                    rates_csv.push_str(&format!(
                        "{label},{},{},{},{},{}\n",
                        format_float(stats.ci_coverage),
                        format_float(stats.exceedance),
                        if stats.pairs > 0 {
                            format_float(stats.order_consistency)
                        } else {
                            String::from("")
                        },
                        stats.partials,
                        stats.pairs
                    ));
                }
            }
        }
    }

    let paths = ReportPaths {
        best_so_far: out_dir.join("best_so_far.csv"),
        trajectories: out_dir.join("trajectories.csv"),
        early_stop_counts: out_dir.join("early_stop_counts.csv"),
        rates: out_dir.join("rates.csv"),
        runs: inputs.len(),
    };
    write_file(&paths.best_so_far, &best_csv)?;
    write_file(&paths.trajectories, &traj_csv)?;
    write_file(&paths.early_stop_counts, &counts_csv)?;
    write_file(&paths.rates, &rates_csv)?;
    Ok(paths)
}

/// The best 2 completed trials by final reward plus 8 random other completed
/// trials, one row per streamed iteration with the CI bounds around the
/// reported reward.
fn append_trajectories(csv: &mut String, label: &str, trials: &[TrialState]) {
    let completed: Vec<&TrialState> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .collect();
    if completed.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..completed.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = -completed[a].final_or_imputed_loss.expect("finished");
        let rb = -completed[b].final_or_imputed_loss.expect("finished");
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let top: Vec<usize> = order.iter().copied().take(TOP_TRIALS).collect();
    let rest: Vec<usize> = order.iter().copied().skip(TOP_TRIALS).collect();

    // selection is seeded so reports are reproducible from the same inputs
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let picks = rand::seq::index::sample(&mut rng, rest.len(), RANDOM_TRIALS.min(rest.len()));
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (rank, &idx) in top.iter().enumerate() {
        groups.push((format!("top{}", rank + 1), idx));
    }
    for (rank, pick) in picks.iter().enumerate() {
        groups.push((format!("random{}", rank + 1), rest[pick]));
    }

    for (group, idx) in groups {
        let trial = completed[idx];
        for p in &trial.partials {
            csv.push_str(&format!(
                "{label},{group},{},{},{},{},{}\n",
                trial.trial_id,
                p.iteration,
                format_float(p.ci_lower),
                format_float(p.reward),
                format_float(p.ci_upper)
            ));
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}
