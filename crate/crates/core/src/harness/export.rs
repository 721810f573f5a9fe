//! On-disk formats: metrics CSV, summary JSON, oracle table.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::hallway::{Regime, ValueOracle};

use super::{EpisodeRecord, HarnessError, Summary};

/// Writes `trial,episode,regime,mse` rows (LF line endings, shortest
/// round-trip float formatting).
pub fn write_metrics<W: Write>(out: W, trials: &[Vec<EpisodeRecord>]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for rec in trials.iter().flatten() {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics(path: &Path, trials: &[Vec<EpisodeRecord>]) -> Result<(), HarnessError> {
    write_metrics(BufWriter::new(File::create(path)?), trials)
}

/// Reads a metrics CSV back into per-trial record lists, ordered by trial.
pub fn load_metrics(path: &Path) -> Result<Vec<Vec<EpisodeRecord>>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut trials: Vec<Vec<EpisodeRecord>> = Vec::new();
    for rec in r.deserialize() {
        let rec: EpisodeRecord = rec?;
        if trials.len() <= rec.trial {
            trials.resize_with(rec.trial + 1, Vec::new);
        }
        trials[rec.trial].push(rec);
    }
    Ok(trials)
}

pub fn save_summary(path: &Path, summary: &Summary) -> Result<(), HarnessError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<Summary, HarnessError> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

#[derive(serde::Serialize)]
struct OracleRow {
    regime: Regime,
    row: usize,
    col: usize,
    value: f64,
}

/// `regime,row,col,value` for every non-terminal cell of both regimes.
pub fn write_oracle<W: Write>(out: W, oracle: &ValueOracle) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for (regime, row, col, value) in oracle.rows() {
        w.serialize(OracleRow {
            regime,
            row,
            col,
            value,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{aggregate, Algorithm};
    use proptest::prelude::*;

    fn sample_trials() -> Vec<Vec<EpisodeRecord>> {
        (0..2)
            .map(|trial| {
                (0..3)
                    .map(|episode| EpisodeRecord {
                        trial,
                        episode,
                        regime: if episode < 2 {
                            Regime::PlusTop
                        } else {
                            Regime::MinusBottom
                        },
                        mse: 0.1 * (trial + episode) as f64 + 1.0 / 3.0,
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn metrics_layout() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &sample_trials()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial,episode,regime,mse");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1], "0,0,plus_top,0.3333333333333333");
        assert!(lines[3].starts_with("0,2,minus_bottom,"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn summary_round_trip() {
        let trials = sample_trials();
        let agg = aggregate(&trials, 2).unwrap();
        let mut s = Summary::new(2);
        s.insert(Algorithm::ModelFree.as_str(), &agg);
        s.compare(("a", &agg), ("b", &agg), Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        save_summary(&p, &s).unwrap();
        assert_eq!(load_summary(&p).unwrap(), s);
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["mean_last600", "ci_low", "ci_high", "trials"] {
            assert!(raw["algorithms"]["modelfree"].get(key).is_some(), "{key}");
        }
        for key in ["algo_a", "algo_b", "t", "p", "df"] {
            assert!(raw["tests"][0].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn oracle_table_has_thirty_rows() {
        let mut buf = Vec::new();
        write_oracle(&mut buf, &ValueOracle::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("regime,row,col,value"));
        assert_eq!(text.lines().count(), 31);
        assert!(text.contains("plus_top,1,0,0.225534375\n"));
    }

    proptest! {
        #[test]
        fn metrics_round_trip_bit_exact(mses in proptest::collection::vec(0.0f64..1e3, 1..20)) {
            let trials = vec![mses
                .iter()
                .enumerate()
                .map(|(episode, &mse)| EpisodeRecord { trial: 0, episode, regime: Regime::PlusTop, mse })
                .collect::<Vec<_>>()];
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            save_metrics(&p, &trials).unwrap();
            prop_assert_eq!(load_metrics(&p).unwrap(), trials);
        }
    }
}
