//! Evaluation reports, the epoch log CSV and the embedding dump CSV.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rap_core::dataset::Sample;
use rap_core::encoder::EncoderHead;
use rap_core::prototypes::{generate, within_between_stats};
use rap_core::trainer::{infer, EpochLog, Inference};

pub const EPOCH_LOG_HEADER: [&str; 8] = [
    "epoch", "L_all", "L_r", "L_a", "L_ce", "val_nmi", "within", "between",
];

/// Clustering quality of one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Samples carrying ground truth; the metrics cover only these.
    pub scored: usize,
    pub k: usize,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub acc: Option<f64>,
    /// Mean `1 − cos` between each embedding and its cluster's mean direction.
    pub within: f64,
    /// Mean `1 − cos` between the mean directions of every cluster pair.
    pub between: f64,
    pub cluster_sizes: Vec<usize>,
}

/// Embeds and clusters `samples`, then scores the clustering.
pub fn evaluate(
    encoder: &EncoderHead,
    samples: &[Sample],
    k: usize,
    seed: u64,
    class_names: &[String],
) -> Result<(EvalReport, Inference)> {
    let inference = infer(encoder, samples, k, seed, class_names)?;
    let labels = &inference.assignment.labels;
    let centers = generate(inference.embeddings.view(), labels, k, 1.0)?;
    let stats = within_between_stats(inference.embeddings.view(), labels, &centers)?;
    let m = inference.report.as_ref();
    let report = EvalReport {
        samples: samples.len(),
        scored: samples.iter().filter(|s| s.truth().is_some()).count(),
        k,
        nmi: m.map(|r| r.nmi),
        ari: m.map(|r| r.ari),
        acc: m.map(|r| r.acc),
        within: stats.within,
        between: stats.between,
        cluster_sizes: inference.assignment.sizes(),
    };
    Ok((report, inference))
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}", 100.0 * v))
}

/// Human-readable table. Metrics and statistics are shown ×100.
pub fn table(r: &EvalReport) -> String {
    format!(
        "samples   {} ({} with ground truth)\n\
         k         {}\n\
         NMI       {}\n\
         ARI       {}\n\
         ACC       {}\n\
         within    {:.2}  (raw {:.6})\n\
         between   {:.2}  (raw {:.6})\n",
        r.samples,
        r.scored,
        r.k,
        metric(r.nmi),
        metric(r.ari),
        metric(r.acc),
        100.0 * r.within,
        r.within,
        100.0 * r.between,
        r.between,
    )
}

pub fn write_epoch_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(EPOCH_LOG_HEADER)?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            l.total.to_string(),
            l.rpal.to_string(),
            l.apdl.to_string(),
            l.ce.to_string(),
            l.val_nmi.to_string(),
            l.within.to_string(),
            l.between.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample: id, embedding coordinates, predicted cluster, ground truth.
pub fn write_embeddings(path: &Path, samples: &[Sample], inference: &Inference) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let dim = inference.embeddings.ncols();
    let mut header = vec!["id".to_owned()];
    header.extend((0..dim).map(|j| format!("z{j}")));
    header.push("cluster".into());
    header.push("eval_label".into());
    w.write_record(&header)?;
    for ((s, z), c) in samples
        .iter()
        .zip(inference.embeddings.rows())
        .zip(&inference.assignment.labels)
    {
        let mut row = vec![s.id.clone()];
        row.extend(z.iter().map(|v| v.to_string()));
        row.push(c.to_string());
        row.push(s.truth().unwrap_or_default().to_owned());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
