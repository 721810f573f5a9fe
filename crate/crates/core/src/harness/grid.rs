use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{aggregate, run_trials, HarnessError, TrialConfig};

/// A hyperparameter that a grid axis can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperParam {
    Alpha,
    Beta,
    Zeta,
    K,
    Hidden,
    NoiseDim,
    Batch,
    MetaLr,
    MetaEvery,
}

impl HyperParam {
    pub fn name(self) -> &'static str {
        match self {
            HyperParam::Alpha => "alpha",
            HyperParam::Beta => "beta",
            HyperParam::Zeta => "zeta",
            HyperParam::K => "k",
            HyperParam::Hidden => "hidden",
            HyperParam::NoiseDim => "noise_dim",
            HyperParam::Batch => "batch",
            HyperParam::MetaLr => "meta_lr",
            HyperParam::MetaEvery => "meta_every",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        use HyperParam::*;
        [Alpha, Beta, Zeta, K, Hidden, NoiseDim, Batch, MetaLr, MetaEvery]
            .into_iter()
            .find(|p| p.name() == name)
    }

    pub fn apply(self, cfg: &mut TrialConfig, v: f64) {
        match self {
            HyperParam::Alpha => cfg.alpha = v,
            HyperParam::Beta => cfg.beta = v,
            HyperParam::Zeta => cfg.zeta = v,
            HyperParam::K => cfg.k = v as usize,
            HyperParam::Hidden => cfg.hidden = v as usize,
            HyperParam::NoiseDim => cfg.noise_dim = v as usize,
            HyperParam::Batch => cfg.batch = v as usize,
            HyperParam::MetaLr => cfg.meta_lr = v,
            HyperParam::MetaEvery => cfg.meta_every = v as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub base: TrialConfig,
    pub axes: Vec<(HyperParam, Vec<f64>)>,
    pub trials: usize,
    pub window: usize,
}

impl GridSpec {
    /// Cartesian product of the axes applied to `base`, first axis slowest.
    pub fn cells(&self) -> Result<Vec<TrialConfig>, HarnessError> {
        if let Some((p, _)) = self.axes.iter().find(|(_, vs)| vs.is_empty()) {
            return Err(HarnessError::EmptyGrid(p.name()));
        }
        let mut cells = vec![self.base.clone()];
        for (param, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut c = c.clone();
                        param.apply(&mut c, v);
                        c
                    })
                })
                .collect();
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub config: TrialConfig,
    /// Mean window score across trials, or the reason the cell failed.
    pub score: Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    /// Index of the selected cell; `None` when every cell failed.
    pub best: Option<usize>,
}

impl GridReport {
    pub fn best_config(&self) -> Option<&TrialConfig> {
        self.best.map(|i| &self.cells[i].config)
    }

    /// One row per cell with every hyperparameter and the selection score.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "algorithm", "alpha", "beta", "zeta", "k", "hidden", "noise_dim", "batch", "meta_lr",
            "meta_every", "episodes", "score", "status", "selected",
        ])?;
        for (i, cell) in self.cells.iter().enumerate() {
            let c = &cell.config;
            let (score, status) = match &cell.score {
                Ok(s) => (s.to_string(), "ok".to_string()),
                Err(e) => (String::new(), format!("failed: {e}")),
            };
            w.write_record([
                c.algorithm.to_string(),
                c.alpha.to_string(),
                c.beta.to_string(),
                c.zeta.to_string(),
                c.k.to_string(),
                c.hidden.to_string(),
                c.noise_dim.to_string(),
                c.batch.to_string(),
                c.meta_lr.to_string(),
                c.meta_every.to_string(),
                c.episodes.to_string(),
                score,
                status,
                (self.best == Some(i)).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every cell and picks the lowest mean window score.
///
/// Exact ties go to the smaller step sizes (α, β, ζ, meta learning rate, in
/// that order), then to the earlier cell. Cells whose trials fail are kept
/// in the report, marked failed, and never selected.
pub fn grid_search(spec: &GridSpec, workers: usize) -> Result<GridReport, HarnessError> {
    let cells: Vec<GridCell> = spec
        .cells()?
        .into_iter()
        .map(|config| {
            let score = run_trials(&config, spec.trials, workers)
                .and_then(|t| aggregate(&t, spec.window))
                .map(|a| a.mean_score())
                .map_err(|e| e.to_string());
            GridCell { config, score }
        })
        .collect();

    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.score.as_ref().ok().map(|&s| (i, s, &c.config)))
        .min_by(|(ia, sa, a), (ib, sb, b)| {
            sa.total_cmp(sb)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.beta.total_cmp(&b.beta))
                .then(a.zeta.total_cmp(&b.zeta))
                .then(a.meta_lr.total_cmp(&b.meta_lr))
                .then(ia.cmp(ib))
        })
        .map(|(i, _, _)| i);

    Ok(GridReport { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Algorithm;

    fn base() -> TrialConfig {
        TrialConfig {
            episodes: 60,
            ..TrialConfig::new(Algorithm::ModelFree)
        }
    }

    #[test]
    fn one_cell_grid() {
        let spec = GridSpec {
            base: base(),
            axes: vec![],
            trials: 2,
            window: 20,
        };
        let r = grid_search(&spec, 1).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best, Some(0));
    }

    #[test]
    fn dominated_cell_loses() {
        let spec = GridSpec {
            base: base(),
            axes: vec![(HyperParam::Alpha, vec![0.0, 0.1])],
            trials: 2,
            window: 20,
        };
        let r = grid_search(&spec, 1).unwrap();
        assert_eq!(r.best_config().unwrap().alpha, 0.1);
    }

    #[test]
    fn failed_cells_are_excluded() {
        let spec = GridSpec {
            base: base(),
            axes: vec![(HyperParam::Alpha, vec![-1.0, 0.1])],
            trials: 1,
            window: 20,
        };
        let r = grid_search(&spec, 1).unwrap();
        assert!(r.cells[0].score.is_err());
        assert_eq!(r.best, Some(1));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains("failed"));
    }

    #[test]
    fn ties_prefer_smaller_steps() {
        // with k = 0 the planning step size has no effect, so scores tie exactly
        let spec = GridSpec {
            base: TrialConfig {
                k: 0,
                ..TrialConfig {
                    algorithm: Algorithm::StableExperience,
                    ..base()
                }
            },
            axes: vec![(HyperParam::Beta, vec![0.2, 0.05, 0.1])],
            trials: 1,
            window: 20,
        };
        let r = grid_search(&spec, 1).unwrap();
        assert_eq!(r.best_config().unwrap().beta, 0.05);
    }

    #[test]
    fn product_order_and_empty_axis() {
        let spec = GridSpec {
            base: base(),
            axes: vec![(HyperParam::Alpha, vec![0.1, 0.2]), (HyperParam::K, vec![1.0, 3.0])],
            trials: 1,
            window: 1,
        };
        let cells = spec.cells().unwrap();
        let pairs: Vec<_> = cells.iter().map(|c| (c.alpha, c.k)).collect();
        assert_eq!(pairs, vec![(0.1, 1), (0.1, 3), (0.2, 1), (0.2, 3)]);

        let empty = GridSpec {
            axes: vec![(HyperParam::Beta, vec![])],
            ..spec
        };
        assert!(matches!(empty.cells(), Err(HarnessError::EmptyGrid("beta"))));
    }
}
