use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, AnnConfig, AnnError, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpace {
    pub hidden_candidates: Vec<usize>,
    pub lr_candidates: Vec<f64>,
}

impl Default for GridSearchSpace {
    /// Hidden nodes 5..=25 step 1, learning rate 0.05..=1.00 step 0.05.
    fn default() -> Self {
        Self {
            hidden_candidates: (5..=25).collect(),
            lr_candidates: (1..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n_hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Validation MSE; `+inf` when training diverged.
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: AnnConfig,
    pub table: Vec<GridCell>,
}

impl GridSearchResult {
    pub fn best_cell(&self) -> &GridCell {
        self.table
            .iter()
            .find(|c| c.n_hidden == self.best.n_hidden && c.learning_rate == self.best.learning_rate)
            .expect("best config comes from the table")
    }
}

/// Trains one model per (hidden, lr) cell and picks the lowest validation MSE.
///
/// Cells are trained in parallel; cell `i` (row-major over hidden x lr) uses
/// seed `base.seed + i`. Ties go to fewer hidden nodes, then the smaller rate.
pub fn grid_search(
    space: &GridSearchSpace,
    base: &AnnConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<GridSearchResult, AnnError> {
    if space.hidden_candidates.is_empty() || space.lr_candidates.is_empty() {
        return Err(AnnError::BadConfig("grid search space is empty".into()));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(AnnError::EmptyDataset);
    }
    let cells: Vec<AnnConfig> = space
        .hidden_candidates
        .iter()
        .flat_map(|&h| space.lr_candidates.iter().map(move |&lr| (h, lr)))
        .enumerate()
        .map(|(i, (h, lr))| AnnConfig {
            n_hidden: h,
            learning_rate: lr,
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect();
    for c in &cells {
        c.validate()?;
    }

    let table = cells
        .par_iter()
        .map(|cfg| {
            let val_mse = match train(cfg, train_set) {
                Ok(model) => model.mse(val_set).map(|m| if m.is_finite() { m } else { f64::INFINITY }),
                Err(AnnError::DivergenceDetected { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }?;
            Ok(GridCell {
                n_hidden: cfg.n_hidden,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed,
                val_mse,
            })
        })
        .collect::<Result<Vec<_>, AnnError>>()?;

    let best_idx = (0..table.len())
        .min_by(|&a, &b| {
            let (ca, cb) = (&table[a], &table[b]);
            ca.val_mse
                .total_cmp(&cb.val_mse)
                .then(ca.n_hidden.cmp(&cb.n_hidden))
                .then(ca.learning_rate.total_cmp(&cb.learning_rate))
        })
        .expect("non-empty table");
    Ok(GridSearchResult {
        best: cells[best_idx].clone(),
        table,
    })
}
