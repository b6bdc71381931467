//! CSV result files.
//!
//! Floating-point values are written with 17 significant digits so that
//! reading a file back yields the exact same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use tiltray_core::entropy::VoxelGrid;
use tiltray_core::experiment::{StepHistograms, StudyTrend, TrialRecord};
use tiltray_core::geometry::Pose;

use crate::CliError;

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trend_csv(trend: &StudyTrend) -> String {
    let h0 = trend.h_bits[0];
    let mut out = String::new();
    match &trend.settled_fraction {
        Some(_) => out.push_str("step,H_bits,occupied,settled_fraction,delta_H_bits\n"),
        None => out.push_str("step,H_bits,occupied,delta_H_bits\n"),
    }
    for (step, (&h, &occ)) in trend.h_bits.iter().zip(&trend.occupied).enumerate() {
        let _ = write!(out, "{step},{},{occ},", fmt_f(h));
        if let Some(s) = &trend.settled_fraction {
            let _ = write!(out, "{},", fmt_f(s[step]));
        }
        let _ = writeln!(out, "{}", fmt_f(h - h0));
    }
    out
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,step,x,y,theta,settled\n");
    for r in records {
        for (step, p) in r.poses.iter().enumerate() {
            let settled = step == 0 || r.settled[step - 1];
            let _ = writeln!(
                out,
                "{},{step},{},{},{},{}",
                r.index,
                fmt_f(p.x),
                fmt_f(p.y),
                fmt_f(p.theta),
                u8::from(settled)
            );
        }
    }
    out
}

/// Pose log read from CSV: per trial, the poses at steps `0..=N` and, when
/// the file has a `settled` column, the settled flag of every pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLog {
    pub trials: BTreeMap<u64, (Vec<Pose>, Option<Vec<bool>>)>,
    pub steps: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, CliError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| CliError::Validation(format!("line {line}: bad {name} value `{raw}`")))
}

pub fn read_pose_log(path: &Path) -> Result<PoseLog, CliError> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let need = |name: &str| {
        column(&headers, name)
            .ok_or_else(|| CliError::Validation(format!("{}: missing column `{name}`", path.display())))
    };
    let (ct, cs, cx, cy, cth) = (need("trial")?, need("step")?, need("x")?, need("y")?, need("theta")?);
    let csettled = column(&headers, "settled");

    let mut rows: BTreeMap<u64, BTreeMap<usize, (Pose, bool)>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let trial: u64 = parse_field(&rec, ct, "trial", line)?;
        let step: usize = parse_field(&rec, cs, "step", line)?;
        let pose = Pose {
            x: parse_field(&rec, cx, "x", line)?,
            y: parse_field(&rec, cy, "y", line)?,
            theta: parse_field(&rec, cth, "theta", line)?,
        };
        let settled = match csettled {
            Some(i) => parse_field::<u8>(&rec, i, "settled", line)? != 0,
            None => true,
        };
        if rows.entry(trial).or_default().insert(step, (pose, settled)).is_some() {
            return Err(CliError::Validation(format!("line {line}: duplicate trial {trial} step {step}")));
        }
    }
    let steps = rows
        .values()
        .next()
        .map(BTreeMap::len)
        .ok_or_else(|| CliError::Validation(format!("{}: no poses", path.display())))?;
    let mut trials = BTreeMap::new();
    for (trial, by_step) in rows {
        let contiguous = by_step.len() == steps && by_step.keys().copied().eq(0..steps);
        if !contiguous {
            return Err(CliError::Validation(format!(
                "ragged pose log: trial {trial} does not cover steps 0..{}",
                steps - 1
            )));
        }
        let poses = by_step.values().map(|(p, _)| *p).collect();
        let flags = csettled.map(|_| by_step.values().skip(1).map(|(_, s)| *s).collect());
        trials.insert(trial, (poses, flags));
    }
    Ok(PoseLog { trials, steps })
}

/// Entropy trend of a pose log; the same histogram path `run` uses.
pub fn trend_from_pose_log(log: &PoseLog, grid: &VoxelGrid) -> Result<StudyTrend, CliError> {
    let track = log.trials.values().all(|(_, s)| s.is_some());
    let mut hists = StepHistograms::new(grid, log.steps, track);
    for (poses, settled) in log.trials.values() {
        hists
            .add_trial(grid, poses, settled.as_deref())
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(hists.trend())
}

/// `H_bits` column of a trend CSV.
pub fn read_trend_bits(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let ch = column(&headers, "H_bits")
        .ok_or_else(|| CliError::Validation(format!("{}: missing column `H_bits`", path.display())))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(parse_field(&rec, ch, "H_bits", line)?);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("{}: empty trend", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::TAU - 1e-12, 5e-324, 0.19999999999999998] {
            let back: f64 = fmt_f(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn trend_csv_layout() {
        let trend = StudyTrend {
            h_bits: vec![2.0, 0.5],
            occupied: vec![4, 2],
            settled_fraction: Some(vec![1.0, 0.75]),
            trials: 4,
        };
        let text = trend_csv(&trend);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,H_bits,occupied,settled_fraction,delta_H_bits");
        assert_eq!(
            lines[2],
            "1,5.0000000000000000e-1,2,7.5000000000000000e-1,-1.5000000000000000e0"
        );
    }
}
