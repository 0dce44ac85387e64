//! Trial records, their CSV form, and best-grid-point summaries.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{Algorithm, GridPoint};
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str =
    "algorithm,p,lr,clip,epochs,alpha_K,trial,seed,sigma,final_train_loss,final_reported_loss,wall_ms,status";

pub const STATUS_OK: &str = "ok";

/// One row per (algorithm, p, grid point, trial). Field order is the CSV
/// column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub p: usize,
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    #[serde(rename = "alpha_K")]
    pub alpha_k: Option<usize>,
    pub trial: usize,
    pub seed: u64,
    pub sigma: f64,
    /// Plain squared error on the private training set.
    pub final_train_loss: f64,
    /// Plain squared error on a fresh population sample.
    pub final_reported_loss: f64,
    pub wall_ms: u64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn grid_point(&self) -> GridPoint {
        GridPoint { lr: self.lr, clip: self.clip, epochs: self.epochs, alpha_k: self.alpha_k }
    }
}

pub fn write_records<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(HarnessError::Config(format!(
            "unexpected trial CSV header `{}`",
            header.join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Best grid point of one (algorithm, p) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    pub p: usize,
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    #[serde(rename = "alpha_K")]
    pub alpha_k: Option<usize>,
    pub trials: usize,
    pub mean_loss: f64,
    /// Half-width of the 95% Student-t interval; NaN with a single trial.
    pub ci_half_width: f64,
}

/// Mean and 95% t-interval half-width of `values`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], if n < 2 { f64::NAN } else { 0.0 });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

type GridKey = (u64, u64, usize, Option<usize>);

fn grid_key(r: &TrialRecord) -> GridKey {
    (r.lr.to_bits(), r.clip.to_bits(), r.epochs, r.alpha_k)
}

/// For each (algorithm, p), picks the grid point with the smallest mean
/// reported loss among those whose trials all succeeded. Ties go to the
/// smaller learning rate, then the smaller clip norm.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<CellSummary>> {
    let mut cells: BTreeMap<(Algorithm, usize), BTreeMap<GridKey, Vec<&TrialRecord>>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.algorithm, r.p))
            .or_default()
            .entry(grid_key(r))
            .or_default()
            .push(r);
    }

    let mut out = Vec::with_capacity(cells.len());
    for ((algorithm, p), points) in cells {
        let mut best: Option<CellSummary> = None;
        for rows in points.values() {
            if !rows.iter().all(|r| r.is_ok() && r.final_reported_loss.is_finite()) {
                continue;
            }
            let losses: Vec<f64> = rows.iter().map(|r| r.final_reported_loss).collect();
            let (mean_loss, ci_half_width) = mean_ci95(&losses);
            let g = rows[0].grid_point();
            let candidate = CellSummary {
                algorithm,
                p,
                lr: g.lr,
                clip: g.clip,
                epochs: g.epochs,
                alpha_k: g.alpha_k,
                trials: rows.len(),
                mean_loss,
                ci_half_width,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    (candidate.mean_loss, candidate.lr, candidate.clip) < (b.mean_loss, b.lr, b.clip)
                }
            };
            if better {
                best = Some(candidate);
            }
        }
        out.push(best.ok_or_else(|| HarnessError::EmptyCell { algorithm: algorithm.to_string(), p })?);
    }
    Ok(out)
}

pub fn write_summaries<W: Write>(summaries: &[CellSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(algorithm: Algorithm, p: usize, lr: f64, clip: f64, trial: usize, loss: f64) -> TrialRecord {
        TrialRecord {
            algorithm,
            p,
            lr,
            clip,
            epochs: 5,
            alpha_k: None,
            trial,
            seed: 11,
            sigma: 0.1,
            final_train_loss: loss,
            final_reported_loss: loss,
            wall_ms: 0,
            status: STATUS_OK.into(),
        }
    }

    #[test]
    fn header_matches_serialized_fields() {
        let mut buf = Vec::new();
        let mut w = csv::Writer::from_writer(&mut buf);
        w.serialize(record(Algorithm::WarmSgd, 5, 0.1, 1.0, 0, 0.5)).unwrap();
        drop(w);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut a = record(Algorithm::PdaFirstOrder, 200, 0.1 + 0.2, 1.0 / 3.0, 4, 0.010_000_000_000_000_002);
        a.alpha_k = Some(7);
        a.seed = u64::MAX;
        a.sigma = 5e-324;
        let mut b = record(Algorithm::ColdSgd, 1000, 1e9, 0.3, 0, f64::NAN);
        b.status = "failed: non-finite iterate at step 3, with, commas".into();
        b.final_reported_loss = f64::INFINITY;
        let rows = vec![a, b];
        let mut buf = Vec::new();
        write_records(&rows, &mut buf).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rows[0]);
        assert_eq!(back[1].status, rows[1].status);
        assert!(back[1].final_train_loss.is_nan());
        assert_eq!(back[1].final_reported_loss, f64::INFINITY);
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "algorithm,p\ncold_sgd,5\n";
        assert!(read_records(text.as_bytes()).is_err());
    }

    #[test]
    fn identical_trials_give_zero_width() {
        let (m, h) = mean_ci95(&[0.4, 0.4, 0.4]);
        assert_eq!(m, 0.4);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn two_trials_mean_and_t_quantile() {
        let (m, h) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        // s = √2, t₀.₉₇₅(1) = 12.7062047…, half-width = t·s/√2 = t.
        assert!((h - 12.706_204_736_174_7).abs() < 1e-9);
    }

    #[test]
    fn single_trial_has_no_interval() {
        assert!(mean_ci95(&[1.0]).1.is_nan());
    }

    #[test]
    fn selects_planted_minimum() {
        let mut rows = Vec::new();
        for (lr, base) in [(0.1, 3.0), (1.0, 1.0), (10.0, 2.0)] {
            for t in 0..3 {
                rows.push(record(Algorithm::WarmSgd, 20, lr, 1.0, t, base + 0.01 * t as f64));
                rows.push(record(Algorithm::ColdSgd, 20, lr, 1.0, t, 5.0 - base));
            }
        }
        let s = summarize(&rows).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].algorithm, s[0].lr), (Algorithm::ColdSgd, 0.1));
        assert_eq!((s[1].algorithm, s[1].lr), (Algorithm::WarmSgd, 1.0));
        assert!((s[1].mean_loss - 1.01).abs() < 1e-12);
        assert_eq!(s[1].trials, 3);
    }

    #[test]
    fn ties_prefer_small_lr_then_small_clip() {
        let rows = vec![
            record(Algorithm::WarmSgd, 20, 1.0, 0.5, 0, 1.0),
            record(Algorithm::WarmSgd, 20, 0.1, 2.0, 0, 1.0),
            record(Algorithm::WarmSgd, 20, 0.1, 1.0, 0, 1.0),
        ];
        let s = summarize(&rows).unwrap();
        assert_eq!((s[0].lr, s[0].clip), (0.1, 1.0));
    }

    #[test]
    fn failed_points_are_skipped() {
        let mut bad = record(Algorithm::WarmSgd, 20, 0.1, 1.0, 1, 0.0);
        bad.status = "failed: diverged".into();
        let rows = vec![
            record(Algorithm::WarmSgd, 20, 0.1, 1.0, 0, 0.0),
            bad,
            record(Algorithm::WarmSgd, 20, 1.0, 1.0, 0, 0.5),
            record(Algorithm::WarmSgd, 20, 1.0, 1.0, 1, 0.5),
        ];
        assert_eq!(summarize(&rows).unwrap()[0].lr, 1.0);
    }

    #[test]
    fn all_failed_cell_is_an_error() {
        let mut bad = record(Algorithm::PdaExact, 20, 0.1, 1.0, 0, f64::NAN);
        bad.status = "failed: x".into();
        assert!(matches!(summarize(&[bad]), Err(HarnessError::EmptyCell { .. })));
    }
}
