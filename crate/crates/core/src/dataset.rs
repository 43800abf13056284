//! Feature-vector datasets: JSONL loading and writing, token mean-pooling
//! and a seeded Gaussian-mixture generator.
//!
//! The on-disk format is JSON Lines. An optional first line carries the task
//! header, every other line is one sample:
//!
//! ```text
//! {"task": {"known_classes": ["a", "b"], "total_classes": 3}}
//! {"id": "s1", "features": [0.1, 0.2], "label": "a", "split": "labeled"}
//! {"id": "s2", "tokens": [[0.0, 1.0], [1.0, 0.0]], "eval_label": "c", "split": "unlabeled"}
//! {"id": "s3", "features": [0.3, 0.1], "label": "c", "split": "test"}
//! ```
//!
//! Token matrices are mean-pooled into a single vector at load time. When the
//! header is absent the known classes are the distinct labels of the labeled
//! split and the total class count is the number of distinct labels seen in
//! any field.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{RapError, Result};

/// Which part of the dataset a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    /// Training label; present for labeled and test samples only.
    pub label: Option<String>,
    /// Hidden ground truth of an unlabeled sample, used only for evaluation.
    pub eval_label: Option<String>,
}

impl Sample {
    /// Ground truth usable for evaluation, whichever field carries it.
    pub fn truth(&self) -> Option<&str> {
        self.label.as_deref().or(self.eval_label.as_deref())
    }
}

/// Token-level feature rows of one input (at least one row, equal widths).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: Vec<Vec<f64>>,
}

impl TokenMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| RapError::InvalidArgument("token matrix has no rows".into()))?;
        if width == 0 {
            return Err(RapError::InvalidArgument("token rows are empty".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(RapError::ShapeMismatch(format!(
                "token row {bad} has width {} (expected {width})",
                rows[bad].len()
            )));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

/// Averages the token rows into one sentence-level vector.
pub fn mean_pool(tokens: &TokenMatrix) -> Vec<f64> {
    let mut acc = vec![0.0; tokens.width()];
    for row in tokens.rows() {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = tokens.rows().len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Known/novel class layout of a discovery task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    known_classes: Vec<String>,
    total_classes: usize,
}

impl TaskSpec {
    /// Known class names are sorted and deduplicated; their position in that
    /// order is the class index used everywhere else.
    pub fn new(known_classes: impl IntoIterator<Item = String>, total_classes: usize) -> Result<Self> {
        let known: BTreeSet<String> = known_classes.into_iter().collect();
        if total_classes == 0 {
            return Err(RapError::InvalidTask("total_classes must be positive".into()));
        }
        if known.len() > total_classes {
            return Err(RapError::InvalidTask(format!(
                "{} known classes exceed total_classes = {total_classes}",
                known.len()
            )));
        }
        Ok(Self {
            known_classes: known.into_iter().collect(),
            total_classes,
        })
    }

    pub fn known_classes(&self) -> &[String] {
        &self.known_classes
    }

    pub fn known_count(&self) -> usize {
        self.known_classes.len()
    }

    pub fn novel_count(&self) -> usize {
        self.total_classes - self.known_classes.len()
    }

    pub fn total_classes(&self) -> usize {
        self.total_classes
    }

    pub fn known_index(&self, label: &str) -> Option<usize> {
        self.known_classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
    pub task: TaskSpec,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, enforcing every cross-split invariant.
    pub fn new(
        labeled: Vec<Sample>,
        unlabeled: Vec<Sample>,
        test: Vec<Sample>,
        task: TaskSpec,
    ) -> Result<Self> {
        let dim = labeled
            .iter()
            .chain(&unlabeled)
            .chain(&test)
            .map(|s| s.features.len())
            .next()
            .ok_or(RapError::EmptyDataset)?;
        let mut seen = HashSet::new();
        for (split, samples) in [
            (Split::Labeled, &labeled),
            (Split::Unlabeled, &unlabeled),
            (Split::Test, &test),
        ] {
            for s in samples {
                validate_sample(s, split, dim, &task, 0)?;
                if !seen.insert(s.id.as_str()) {
                    return Err(RapError::DuplicateId {
                        line: 0,
                        id: s.id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            labeled,
            unlabeled,
            test,
            task,
            dim,
        })
    }

    /// Feature dimension `d` shared by every sample.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples scored at evaluation time: the test split when present,
    /// otherwise the unlabeled split (transductive evaluation).
    pub fn eval_samples(&self) -> &[Sample] {
        if self.test.is_empty() {
            &self.unlabeled
        } else {
            &self.test
        }
    }

    /// Every class name appearing as a label or hidden label, sorted.
    pub fn all_class_names(&self) -> Vec<String> {
        let mut names: BTreeSet<String> = self.task.known_classes().iter().cloned().collect();
        for s in self.labeled.iter().chain(&self.unlabeled).chain(&self.test) {
            if let Some(t) = s.truth() {
                names.insert(t.to_owned());
            }
        }
        names.into_iter().collect()
    }
}

/// Stacks sample features into an `n × d` matrix.
pub fn feature_matrix<'a>(samples: impl IntoIterator<Item = &'a Sample>, dim: usize) -> Array2<f64> {
    let rows: Vec<&Sample> = samples.into_iter().collect();
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, s) in rows.iter().enumerate() {
        for (j, &x) in s.features.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    m
}

/// Maps ground-truth names of `samples` to dense indices over `names`
/// (which must be sorted). Samples without ground truth map to `None`.
pub fn truth_indices(samples: &[Sample], names: &[String]) -> Vec<Option<usize>> {
    samples
        .iter()
        .map(|s| {
            s.truth()
                .and_then(|t| names.binary_search_by(|n| n.as_str().cmp(t)).ok())
        })
        .collect()
}

fn validate_sample(s: &Sample, split: Split, dim: usize, task: &TaskSpec, line: usize) -> Result<()> {
    if s.features.len() != dim {
        return Err(RapError::DimensionMismatch {
            line,
            expected: dim,
            found: s.features.len(),
        });
    }
    if s.features.iter().any(|x| !x.is_finite()) {
        return Err(RapError::MalformedLine {
            line,
            message: format!("sample {:?} has non-finite features", s.id),
        });
    }
    match split {
        Split::Labeled => {
            let label = s.label.as_deref().ok_or_else(|| RapError::MalformedLine {
                line,
                message: format!("labeled sample {:?} has no label", s.id),
            })?;
            if task.known_index(label).is_none() {
                return Err(RapError::UnknownLabel {
                    line,
                    label: label.to_owned(),
                });
            }
        }
        Split::Unlabeled => {
            if s.label.is_some() {
                return Err(RapError::MalformedLine {
                    line,
                    message: format!("unlabeled sample {:?} carries a label; use eval_label", s.id),
                });
            }
        }
        Split::Test => {
            if s.label.is_none() {
                return Err(RapError::MalformedLine {
                    line,
                    message: format!("test sample {:?} has no label", s.id),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval_label: Option<String>,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    task: TaskSpec,
}

/// Parses a JSONL dataset file.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| RapError::io(path, e))?;
    parse_jsonl(&text)
}

/// Parses JSONL dataset text; line numbers in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Dataset> {
    let mut header: Option<TaskSpec> = None;
    let mut records: Vec<(usize, Split, Sample)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| RapError::MalformedLine {
            line,
            message: e.to_string(),
        })?;
        if value.get("task").is_some() {
            if header.is_some() || !records.is_empty() {
                return Err(RapError::MalformedLine {
                    line,
                    message: "task header must be the first record".into(),
                });
            }
            let h: Header = serde_json::from_value(value).map_err(|e| RapError::MalformedLine {
                line,
                message: e.to_string(),
            })?;
            header = Some(TaskSpec::new(h.task.known_classes, h.task.total_classes)?);
            continue;
        }
        let rec: Record = serde_json::from_value(value).map_err(|e| RapError::MalformedLine {
            line,
            message: e.to_string(),
        })?;
        let features = match (rec.features, rec.tokens) {
            (Some(f), None) => f,
            (None, Some(t)) => mean_pool(&TokenMatrix::new(t).map_err(|e| RapError::MalformedLine {
                line,
                message: e.to_string(),
            })?),
            _ => {
                return Err(RapError::MalformedLine {
                    line,
                    message: "record needs exactly one of `features` or `tokens`".into(),
                })
            }
        };
        if features.is_empty() {
            return Err(RapError::MalformedLine {
                line,
                message: "empty feature vector".into(),
            });
        }
        let expected = *dim.get_or_insert(features.len());
        if features.len() != expected {
            return Err(RapError::DimensionMismatch {
                line,
                expected,
                found: features.len(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(RapError::DuplicateId { line, id: rec.id });
        }
        records.push((
            line,
            rec.split,
            Sample {
                id: rec.id,
                features,
                label: rec.label,
                eval_label: rec.eval_label,
            },
        ));
    }

    if records.is_empty() {
        return Err(RapError::EmptyDataset);
    }
    let task = match header {
        Some(t) => t,
        None => infer_task(&records)?,
    };
    let dim = dim.unwrap_or(0);
    let (mut labeled, mut unlabeled, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (line, split, sample) in records {
        validate_sample(&sample, split, dim, &task, line)?;
        match split {
            Split::Labeled => labeled.push(sample),
            Split::Unlabeled => unlabeled.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok(Dataset {
        labeled,
        unlabeled,
        test,
        task,
        dim,
    })
}

fn infer_task(records: &[(usize, Split, Sample)]) -> Result<TaskSpec> {
    let known: BTreeSet<String> = records
        .iter()
        .filter(|(_, split, _)| *split == Split::Labeled)
        .filter_map(|(_, _, s)| s.label.clone())
        .collect();
    let mut all = known.clone();
    all.extend(
        records
            .iter()
            .filter_map(|(_, _, s)| s.truth().map(str::to_owned)),
    );
    TaskSpec::new(known, all.len().max(1))
}

/// Writes `dataset` in the JSONL format read by [`load_jsonl`].
pub fn write_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| RapError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| RapError::io(path, e);
    out.write_all(to_jsonl(dataset)?.as_bytes()).map_err(io)?;
    out.flush().map_err(io)
}

/// Serializes `dataset` to JSONL text (header line first).
pub fn to_jsonl(dataset: &Dataset) -> Result<String> {
    let mut text = serde_json::to_string(&Header {
        task: dataset.task.clone(),
    })?;
    text.push('\n');
    for (split, samples) in [
        (Split::Labeled, &dataset.labeled),
        (Split::Unlabeled, &dataset.unlabeled),
        (Split::Test, &dataset.test),
    ] {
        for s in samples {
            let rec = Record {
                id: s.id.clone(),
                features: Some(s.features.clone()),
                tokens: None,
                label: s.label.clone(),
                eval_label: s.eval_label.clone(),
                split,
            };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
        }
    }
    Ok(text)
}

/// Parameters of [`synth_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    /// Minimum distance between any two class centers.
    pub sep: f64,
    /// Per-coordinate standard deviation within a class.
    pub sigma: f64,
    pub labeled_fraction: f64,
    pub known_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            n_per_class: 100,
            dim: 16,
            sep: 6.0,
            sigma: 1.0,
            labeled_fraction: 0.1,
            known_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Number of known classes implied by `known_fraction` (round half away from zero).
pub fn known_class_count(classes: usize, known_fraction: f64) -> usize {
    (known_fraction * classes as f64).round() as usize
}

/// Draws an isotropic Gaussian mixture split into labeled and unlabeled parts.
///
/// Centers are drawn one at a time from an isotropic Gaussian scaled so the
/// typical pairwise distance is about `1.25·sep`; candidates closer than
/// `sep` to an accepted center are redrawn. Known classes are a seeded random
/// subset; within each known class `round(labeled_fraction·n_per_class)`
/// samples are labeled. Everything else is unlabeled and keeps its class as
/// `eval_label`. Class names are `c00`, `c01`, ….
pub fn synth_mixture(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(RapError::InvalidArgument("need at least 2 classes".into()));
    }
    if cfg.n_per_class == 0 || cfg.dim == 0 {
        return Err(RapError::InvalidArgument(
            "n_per_class and dim must be positive".into(),
        ));
    }
    if !(cfg.sep > 0.0 && cfg.sigma > 0.0) {
        return Err(RapError::InvalidArgument("sep and sigma must be positive".into()));
    }
    for (name, f) in [
        ("labeled_fraction", cfg.labeled_fraction),
        ("known_fraction", cfg.known_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(RapError::InvalidArgument(format!("{name} must lie in [0, 1]")));
        }
    }
    let n_known = known_class_count(cfg.classes, cfg.known_fraction);
    if n_known == 0 {
        return Err(RapError::InvalidArgument(
            "known_fraction leaves no known classes".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = draw_centers(&mut rng, cfg.classes, cfg.dim, cfg.sep);
    let names: Vec<String> = (0..cfg.classes).map(|c| format!("c{c:02}")).collect();

    let mut order: Vec<usize> = (0..cfg.classes).collect();
    order.shuffle(&mut rng);
    let mut is_known = vec![false; cfg.classes];
    for &c in &order[..n_known] {
        is_known[c] = true;
    }
    let per_class_labeled =
        ((cfg.labeled_fraction * cfg.n_per_class as f64).round() as usize).min(cfg.n_per_class);

    let (mut labeled, mut unlabeled) = (Vec::new(), Vec::new());
    let mut next_id = 0usize;
    for (c, center) in centers.iter().enumerate() {
        let mut members: Vec<Vec<f64>> = (0..cfg.n_per_class)
            .map(|_| {
                center
                    .iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + cfg.sigma * z
                    })
                    .collect()
            })
            .collect();
        members.shuffle(&mut rng);
        for (i, features) in members.into_iter().enumerate() {
            let id = format!("s{next_id:06}");
            next_id += 1;
            if is_known[c] && i < per_class_labeled {
                labeled.push(Sample {
                    id,
                    features,
                    label: Some(names[c].clone()),
                    eval_label: None,
                });
            } else {
                unlabeled.push(Sample {
                    id,
                    features,
                    label: None,
                    eval_label: Some(names[c].clone()),
                });
            }
        }
    }
    labeled.shuffle(&mut rng);
    unlabeled.shuffle(&mut rng);

    let known = names
        .iter()
        .zip(&is_known)
        .filter(|(_, &k)| k)
        .map(|(n, _)| n.clone());
    let task = TaskSpec::new(known, cfg.classes)?;
    Dataset::new(labeled, unlabeled, Vec::new(), task)
}

fn draw_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    // E‖a − b‖ ≈ scale·√(2·dim) for two Gaussian draws.
    let mut scale = 1.25 * sep / (2.0 * dim as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0usize;
    while centers.len() < k {
        let candidate: Vec<f64> = (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let clear = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= sep * sep
        });
        if clear {
            centers.push(candidate);
        } else {
            failures += 1;
            if failures % 1000 == 0 {
                scale *= 1.1;
            }
        }
    }
    centers
}
