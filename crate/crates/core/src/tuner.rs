//! Exhaustive grid search of the score weights over the unit simplex.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusSplit;
use crate::decoder::{run_task, RunOptions, Strategy};
use crate::embedder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::plm::CompletionClient;
use crate::scoring::{PoolIndex, SelectionConfig, Weights};

pub const DEFAULT_STEP: f64 = 0.05;

/// Every `(w1, w2, w3)` with components on multiples of `step` summing to 1.
/// `step` must divide 1 evenly.
pub fn simplex_lattice(step: f64) -> Result<Vec<Weights>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1 evenly")));
    }
    let n = n as u32;
    let denom = n as f64;
    let mut points = Vec::with_capacity(((n + 1) * (n + 2) / 2) as usize);
    for i in (0..=n).rev() {
        for j in (0..=n - i).rev() {
            let k = n - i - j;
            points.push(Weights {
                length: i as f64 / denom,
                entropy: j as f64 / denom,
                similarity: k as f64 / denom,
            });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub weights: Weights,
    /// `None` when the run at this point failed or was incomplete.
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    pub points: Vec<GridPoint>,
    pub best: Option<Weights>,
    pub best_metric: Option<f64>,
}

impl TuningReport {
    /// CSV with columns `w1,w2,w3,metric`; missing metrics are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("cannot write tuning CSV: {e}"));
        writer.write_record(["w1", "w2", "w3", "metric"]).map_err(csv_err)?;
        for point in &self.points {
            let w = point.weights;
            writer
                .write_record([
                    w.length.to_string(),
                    w.entropy.to_string(),
                    w.similarity.to_string(),
                    point.metric.map(|m| m.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Highest metric; ties go to the larger similarity weight, then the larger entropy weight.
pub fn pick_best(points: &[GridPoint]) -> Option<(Weights, f64)> {
    points
        .iter()
        .filter_map(|p| p.metric.map(|m| (p.weights, m)))
        .max_by(|(wa, ma), (wb, mb)| {
            ma.total_cmp(mb)
                .then(wa.similarity.total_cmp(&wb.similarity))
                .then(wa.entropy.total_cmp(&wb.entropy))
        })
}

/// Runs the complete select/render/decode/evaluate pipeline on `dev` at every
/// lattice point and reports the best weights. Points are evaluated in
/// parallel (`opts.jobs` workers), each one decoding sequentially.
pub fn grid_search(
    dev: &CorpusSplit,
    dev_embeddings: &[EmbeddingVector],
    pool: &PoolIndex<'_>,
    cfg_base: &SelectionConfig,
    client: &dyn CompletionClient,
    step: f64,
    opts: &RunOptions,
) -> Result<TuningReport> {
    let lattice = simplex_lattice(step)?;
    let point_opts = RunOptions {
        jobs: 1,
        prompt_dir: None,
        resume_from: None,
        ..opts.clone()
    };
    let evaluate_point = |weights: &Weights| -> GridPoint {
        let cfg = cfg_base.clone().with_weights(*weights);
        let outcome = run_task(dev, dev_embeddings, pool, &cfg, &Strategy::Complexity, client, &point_opts)
            .and_then(|pred| {
                if let Some(first) = pred.failures.first() {
                    return Err(Error::Domain(format!(
                        "{} dev sentence(s) failed, first {}: {}",
                        pred.failures.len(),
                        first.test_id,
                        first.error
                    )));
                }
                evaluate(&pred, dev)
            });
        match outcome {
            Ok(report) => GridPoint {
                weights: *weights,
                metric: Some(report.headline()),
                error: None,
            },
            Err(e) => {
                log::warn!("grid point {weights} failed: {e}");
                GridPoint {
                    weights: *weights,
                    metric: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start tuning workers: {e}")))?;
    let points: Vec<GridPoint> = workers.install(|| lattice.par_iter().map(evaluate_point).collect());
    let best = pick_best(&points);
    Ok(TuningReport {
        best: best.map(|(w, _)| w),
        best_metric: best.map(|(_, m)| m),
        points,
    })
}
