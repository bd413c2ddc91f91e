//! Grid search over config keys.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GridSpec;
use crate::error::{HarnessError, Result};
use crate::run::{build_model, run_id, run_with_model, MetricsRow, SharedModel};

/// Environment variable capping the number of cells run at once.
pub const MAX_PARALLEL_ENV: &str = "SCOREKIT_MAX_PARALLEL";

/// Metrics eligible for best-cell selection; lower is better for all of them.
pub const METRICS: [&str; 4] = ["sw2", "mean_err", "cov_err", "mode_mass_err"];

pub fn metric_value(row: &MetricsRow, metric: &str) -> Option<f64> {
    match metric {
        "sw2" => Some(row.sw2),
        "mean_err" => Some(row.mean_err),
        "cov_err" => Some(row.cov_err),
        "mode_mass_err" => Some(row.mode_mass_err),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Successful cells sorted by run id.
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<CellFailure>,
    /// Run id of the best cell for each metric in [`METRICS`].
    pub best: BTreeMap<String, String>,
}

/// `argmin` per metric over `rows`; ties go to the earliest run id.
pub fn select_best(rows: &[MetricsRow]) -> BTreeMap<String, String> {
    let mut best = BTreeMap::new();
    for metric in METRICS {
        let winner = rows
            .iter()
            .filter_map(|r| {
                metric_value(r, metric)
                    .filter(|v| v.is_finite())
                    .map(|v| (v, &r.run_id))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        if let Some((_, id)) = winner {
            best.insert(metric.to_string(), id.clone());
        }
    }
    best
}

/// Keys whose variation requires a fresh model per cell.
fn touches_model(key: &str) -> bool {
    ["data.", "model.", "train.", "train_noise."]
        .iter()
        .any(|p| key.starts_with(p))
}

/// Parallelism from [`MAX_PARALLEL_ENV`], if set to a positive integer.
pub fn max_parallel_from_env() -> Option<usize> {
    std::env::var(MAX_PARALLEL_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
}

/// Runs every cell and aggregates rows sorted by run id.
///
/// Cell ids are the base id with the cell index appended, so the aggregate
/// does not depend on execution order. Failing cells are recorded and the
/// rest continue; an error is returned only when every cell fails.
pub fn grid_search(spec: &GridSpec, max_parallel: Option<usize>) -> Result<GridReport> {
    let mut cells = spec.cells()?;
    if cells.len() > spec.base.run.max_cells {
        return Err(HarnessError::validation(
            "run.max_cells",
            format!("{} cells exceed the cap", cells.len()),
        ));
    }
    let width = cells.len().saturating_sub(1).to_string().len().max(3);
    let base_id = spec.base.run.id.clone();
    for (i, c) in cells.iter_mut().enumerate() {
        let stem = base_id.clone().unwrap_or_else(|| run_id(c));
        c.run.id = Some(format!("c{i:0width$}-{stem}"));
    }
    let shared: Option<SharedModel> = if spec.axes.iter().any(|(k, _)| touches_model(k)) {
        None
    } else {
        Some(build_model(&spec.base)?)
    };
    let run_cell = |c: &crate::config::RunConfig| -> std::result::Result<MetricsRow, CellFailure> {
        let fail = |e: HarnessError| CellFailure {
            run_id: run_id(c),
            error: e.to_string(),
        };
        c.validate().map_err(fail)?;
        let model = match &shared {
            Some(m) => m.clone(),
            None => build_model(c).map_err(fail)?,
        };
        run_with_model(c, &model).map(|(_, row)| row).map_err(fail)
    };
    let threads = max_parallel
        .or_else(max_parallel_from_env)
        .unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Grid(e.to_string()))?;
    let results: Vec<_> = pool.install(|| cells.par_iter().map(run_cell).collect());
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    if rows.is_empty() {
        let detail = failures
            .iter()
            .map(|f| format!("{}: {}", f.run_id, f.error))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(HarnessError::Grid(format!("every cell failed: {detail}")));
    }
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    failures.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let best = select_best(&rows);
    Ok(GridReport {
        rows,
        failures,
        best,
    })
}
