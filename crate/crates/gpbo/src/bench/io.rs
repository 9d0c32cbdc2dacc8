//! Run-file serialization: JSONL lines written with fixed field order and
//! floats at 9 significant digits, so identical runs produce byte-identical
//! files.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::bench::{Protocol, RunReport};
use crate::bo::ObservationSource;
use crate::error::{Error, Result};
use crate::fidelity::{Decision, PartialReward, TrialState, TrialStatus};
use crate::space::Configuration;

/// Formats with 9 significant digits, dropping trailing zeros; magnitudes
/// outside a readable window switch to scientific notation. Output is always
/// a valid JSON number.
pub fn format_float(x: f64) -> String {
    assert!(x.is_finite(), "run files only carry finite values");
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{:.8e}", x);
        let (mantissa, exponent) = s.split_once('e').expect("scientific format");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exponent}")
    }
}

fn indices_json(indices: &[usize]) -> String {
    let inner: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    format!("[{}]", inner.join(","))
}

fn obs_line(
    batch: usize,
    slot: usize,
    indices: &[usize],
    loss: f64,
    reward: f64,
    source: ObservationSource,
) -> String {
    format!(
        "{{\"batch\":{batch},\"slot\":{slot},\"indices\":{},\"loss\":{},\"reward\":{},\"source\":\"{}\"}}",
        indices_json(indices),
        format_float(loss),
        format_float(reward),
        source.as_str()
    )
}

fn partial_line(p: &PartialReward, decision: Decision) -> String {
    format!(
        "{{\"trial_id\":{},\"iteration\":{},\"reward\":{},\"ci_lower\":{},\"ci_upper\":{},\"decision\":\"{}\"}}",
        p.trial_id,
        p.iteration,
        format_float(p.reward),
        format_float(p.ci_lower),
        format_float(p.ci_upper),
        decision.as_str()
    )
}

fn terminal_line(t: &TrialState) -> String {
    format!(
        "{{\"trial_id\":{},\"status\":\"{}\",\"final_or_imputed_loss\":{},\"budget_truncated\":{},\"source\":\"{}\",\"indices\":{}}}",
        t.trial_id,
        t.status.as_str(),
        format_float(t.final_or_imputed_loss.expect("finished trial")),
        t.budget_truncated,
        t.suggested_source.as_str(),
        indices_json(t.config.indices())
    )
}

/// Writes a run as JSONL: observation lines for the preliminary protocol,
/// partial + terminal lines per trial for the final protocol.
pub fn write_run_jsonl<W: Write>(report: &RunReport, w: &mut W) -> Result<()> {
    match report.protocol {
        Protocol::Preliminary => {
            for row in &report.observations {
                writeln!(
                    w,
                    "{}",
                    obs_line(
                        row.batch,
                        row.slot,
                        &row.indices,
                        row.loss,
                        row.reward,
                        row.source
                    )
                )?;
            }
        }
        Protocol::Final => {
            for trial in &report.trials {
                for (p, d) in trial.partials.iter().zip(&trial.decisions) {
                    writeln!(w, "{}", partial_line(p, *d))?;
                }
                writeln!(w, "{}", terminal_line(trial))?;
            }
        }
    }
    Ok(())
}

pub fn run_to_jsonl_string(report: &RunReport) -> Result<String> {
    let mut buf = Vec::new();
    write_run_jsonl(report, &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits UTF-8"))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ObsLine {
    pub batch: usize,
    pub slot: usize,
    pub indices: Vec<usize>,
    pub loss: f64,
    pub reward: f64,
    pub source: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PartialLine {
    pub trial_id: u64,
    pub iteration: u32,
    pub reward: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub decision: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TerminalLine {
    pub trial_id: u64,
    pub status: String,
    pub final_or_imputed_loss: f64,
    pub budget_truncated: bool,
    #[serde(default)]
    pub source: Option<String>,
    pub indices: Vec<usize>,
}

/// One parsed run-file line; the three kinds have disjoint required fields.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RunLine {
    Terminal(TerminalLine),
    Partial(PartialLine),
    Obs(ObsLine),
}

/// Parses JSONL text, reporting the 1-based line number of the first
/// malformed line. Blank lines are ignored; an input with no records at all
/// is an error.
pub fn parse_run_lines(text: &str) -> Result<Vec<RunLine>> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let line: RunLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("unrecognized run record: {e}"),
        })?;
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "run file contains no records".into(),
        });
    }
    Ok(lines)
}

pub fn read_run_file(path: &Path) -> Result<Vec<RunLine>> {
    let text = std::fs::read_to_string(path)?;
    parse_run_lines(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Reassembles trial records from parsed final-protocol lines.
pub fn trials_from_lines(lines: &[RunLine]) -> Result<Vec<TrialState>> {
    let mut trials: Vec<TrialState> = Vec::new();
    let mut partials: Vec<(PartialReward, Decision)> = Vec::new();
    let mut current: Option<u64> = None;
    for line in lines {
        match line {
            RunLine::Partial(p) => {
                if current.is_some_and(|id| id != p.trial_id) {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!(
                            "trial {} interleaved with another trial's partials",
                            p.trial_id
                        ),
                    });
                }
                current = Some(p.trial_id);
                let decision = match p.decision.as_str() {
                    "continue" => Decision::Continue,
                    "stop" => Decision::Stop,
                    "complete" => Decision::Complete,
                    other => {
                        return Err(Error::Parse {
                            line: 0,
                            message: format!("unknown decision {other:?}"),
                        })
                    }
                };
                partials.push((
                    PartialReward {
                        trial_id: p.trial_id,
                        iteration: p.iteration,
                        reward: p.reward,
                        ci_lower: p.ci_lower,
                        ci_upper: p.ci_upper,
                    },
                    decision,
                ));
            }
            RunLine::Terminal(t) => {
                let status = match t.status.as_str() {
                    "completed" => TrialStatus::Completed,
                    "stopped" => TrialStatus::Stopped,
                    "running" => TrialStatus::Running,
                    other => {
                        return Err(Error::Parse {
                            line: 0,
                            message: format!("unknown trial status {other:?}"),
                        })
                    }
                };
                let source = match t.source.as_deref() {
                    Some("initial") => ObservationSource::Initial,
                    Some("random") => ObservationSource::Random,
                    Some("imputed") => ObservationSource::Imputed,
                    _ => ObservationSource::Model,
                };
                let (ps, ds): (Vec<PartialReward>, Vec<Decision>) = partials.drain(..).unzip();
                trials.push(TrialState {
                    trial_id: t.trial_id,
                    config: Configuration::new(t.indices.clone()),
                    partials: ps,
                    decisions: ds,
                    status,
                    budget_truncated: t.budget_truncated,
                    suggested_source: source,
                    final_or_imputed_loss: Some(t.final_or_imputed_loss),
                });
                current = None;
            }
            RunLine::Obs(_) => {
                return Err(Error::Parse {
                    line: 0,
                    message: "observation line inside a final-protocol trace".into(),
                })
            }
        }
    }
    Ok(trials)
}
