//! End-to-end training: supervised warmup, per-epoch k-means pseudo-labels
//! aligned to the known classes, prototype generation, joint optimization
//! with EMA prototype tracking, early stopping, and k-means inference.

use log::{debug, info};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::clustering::{
    estimate_k, hungarian, kmeans_restarts, ClusterAssignment, DEFAULT_MAX_ITER, DEFAULT_N_INIT, DEFAULT_TOL,
};
use crate::config::{ClusterCount, TrainConfig};
use crate::dataset::{feature_matrix, truth_indices, Dataset, Sample};
use crate::encoder::{ClassifierHead, EncoderHead, ParamGradients};
use crate::losses::{ce_loss, multitask_loss, Batch, Mixing};
use crate::metrics::{evaluate, nmi, MetricsReport};
use crate::prototypes::{generate, within_between_stats, PrototypeSet};
use crate::vecops::norm;
use crate::{RapError, Result};

/// Per-epoch record of the joint phase (loss values are step means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub rpal: f64,
    pub apdl: f64,
    pub ce: f64,
    pub val_nmi: f64,
    /// Raw within-cluster statistic (mean cosine distance to prototype).
    pub within: f64,
    /// Raw between-cluster statistic (mean pairwise prototype cosine distance).
    pub between: f64,
}

/// Parameters and history returned by [`train`].
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: EncoderHead,
    pub classifier: ClassifierHead,
    pub prototypes: PrototypeSet,
    /// Cluster count used for pseudo-labels and inference.
    pub k: usize,
    /// Epoch whose state was kept (0 = end of warmup).
    pub best_epoch: usize,
    pub warmup_ce: Vec<f64>,
    pub logs: Vec<EpochLog>,
}

/// Labeled-train, validation and unlabeled rows in matrix form.
struct TrainingData {
    inputs: Array2<f64>,
    /// Known-class index for labeled rows.
    labels: Vec<Option<usize>>,
    val_inputs: Array2<f64>,
    val_labels: Vec<usize>,
}

impl TrainingData {
    fn new(dataset: &Dataset, val_fraction: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dataset.labeled.is_empty() {
            return Err(RapError::InvalidArgument("the labeled split is empty".into()));
        }
        let mut order: Vec<usize> = (0..dataset.labeled.len()).collect();
        order.shuffle(rng);
        let n_val = ((val_fraction * order.len() as f64).floor() as usize).min(order.len() - 1);
        let (val_idx, train_idx) = order.split_at(n_val);
        let known = |s: &Sample| dataset.task.known_index(s.label.as_deref().unwrap_or_default());

        let train: Vec<&Sample> = train_idx
            .iter()
            .map(|&i| &dataset.labeled[i])
            .chain(&dataset.unlabeled)
            .collect();
        let labels = train.iter().map(|s| known(s)).collect();
        // With no held-out rows, validate on the labeled training rows.
        let val: Vec<&Sample> = if val_idx.is_empty() {
            train_idx.iter().map(|&i| &dataset.labeled[i]).collect()
        } else {
            val_idx.iter().map(|&i| &dataset.labeled[i]).collect()
        };
        Ok(Self {
            inputs: feature_matrix(train.iter().copied(), dataset.dim()),
            labels,
            val_inputs: feature_matrix(val.iter().copied(), dataset.dim()),
            val_labels: val.iter().map(|s| known(s).unwrap()).collect(),
        })
    }

    fn labeled_rows(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }
}

fn gather(inputs: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    inputs.select(Axis(0), rows)
}

fn clip(grads: &mut ParamGradients, d_mu: Option<&mut Array2<f64>>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mu_sq = d_mu.as_ref().map_or(0.0, |d| d.iter().map(|x| x * x).sum());
    let total = (grads.squared_norm() + mu_sq).sqrt();
    if total > max_norm {
        let s = max_norm / total;
        grads.scale(s);
        if let Some(d) = d_mu {
            *d *= s;
        }
    }
}

/// Mean cross-entropy of the classifier over `rows`.
fn labeled_ce(
    data: ArrayView2<f64>,
    rows: &[usize],
    labels: &[usize],
    encoder: &EncoderHead,
    classifier: &ClassifierHead,
) -> Result<f64> {
    let z = encoder.embed(gather(data, rows).view())?;
    let mask = vec![true; rows.len()];
    Ok(ce_loss(z.view(), labels, &mask, classifier)?.value)
}

/// Cross-entropy-only training on the labeled rows of `inputs`.
///
/// Returns the full labeled cross-entropy measured after each epoch.
pub fn warmup(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    encoder: &mut EncoderHead,
    classifier: &mut ClassifierHead,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if inputs.nrows() == 0 {
        return Err(RapError::InvalidArgument("warmup needs labeled samples".into()));
    }
    let all: Vec<usize> = (0..inputs.nrows()).collect();
    let mut history = Vec::with_capacity(config.warmup_epochs);
    let mut order = all.clone();
    for epoch in 1..=config.warmup_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let (z, caches) = encoder.forward_batch(gather(inputs, chunk).view())?;
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let ce = ce_loss(z.view(), &targets, &vec![true; chunk.len()], classifier)?;
            if !ce.value.is_finite() {
                return Err(RapError::NonFiniteLoss {
                    epoch,
                    step: 0,
                    detail: "warmup cross-entropy".into(),
                });
            }
            let mut grads = ParamGradients::zeros(encoder, classifier);
            grads.add_encoder(&encoder.backward_batch(&caches, ce.d_z.view()), 1.0);
            grads.add_classifier(ce.d_cls.as_ref().unwrap(), 1.0);
            clip(&mut grads, None, config.grad_clip);
            encoder.apply(&grads.dw, &grads.db, config.learning_rate);
            classifier.apply(&grads.dv, &grads.dc, config.learning_rate);
        }
        let loss = labeled_ce(inputs, &all, labels, encoder, classifier)?;
        debug!("warmup epoch {epoch}: ce = {loss:.6}");
        history.push(loss);
    }
    Ok(history)
}

/// Maps k-means clusters onto class indices so that, on the labeled rows,
/// cluster `c` goes to the known class it overlaps most under a one-to-one
/// matching. Known classes occupy indices `0..known`; clusters matched to
/// none of them take the remaining indices `known..k`.
///
/// `labeled` holds `(cluster, known_class)` pairs. Returns `map[cluster]`.
pub fn align_clusters(labeled: &[(usize, usize)], k: usize, known: usize) -> Result<Vec<usize>> {
    if known > k {
        return Err(RapError::InvalidArgument(format!(
            "{known} known classes cannot be aligned to {k} clusters"
        )));
    }
    let mut overlap = Array2::<f64>::zeros((k, k));
    for &(c, y) in labeled {
        if c >= k || y >= known {
            return Err(RapError::InvalidArgument(format!(
                "pair ({c}, {y}) outside {k} clusters / {known} known classes"
            )));
        }
        overlap[[c, y]] += 1.0;
    }
    let max = overlap.iter().copied().fold(0.0, f64::max);
    let cost = overlap.mapv(|o| max - o);
    let solved = hungarian(cost.view())?;
    Ok(solved.map.into_iter().map(|m| m.unwrap()).collect())
}

/// Resolves the configured cluster count against the data.
fn resolve_k(
    config: &TrainConfig,
    dataset: &Dataset,
    embeddings: ArrayView2<f64>,
    seed: u64,
) -> Result<usize> {
    let total = dataset.task.total_classes();
    let k = match config.k {
        ClusterCount::GroundTruth => total,
        ClusterCount::Fixed(k) => k,
        ClusterCount::Estimate => {
            let k_init = (2 * total).min(embeddings.nrows());
            let k = estimate_k(embeddings, k_init, config.drop_ratio, seed)?;
            info!("estimated {k} clusters from k_init = {k_init}");
            k
        }
    };
    let known = dataset.task.known_count();
    if k < known.max(1) {
        return Err(RapError::InvalidArgument(format!(
            "k = {k} is smaller than the {known} known classes"
        )));
    }
    if k > embeddings.nrows() {
        return Err(RapError::TooManyClusters {
            k,
            points: embeddings.nrows(),
        });
    }
    Ok(k)
}

struct Snapshot {
    encoder: EncoderHead,
    classifier: ClassifierHead,
    prototypes: PrototypeSet,
    epoch: usize,
}

/// Pseudo-labels for one epoch.
struct EpochTargets {
    /// Aligned cluster index of every training row.
    clusters: Vec<usize>,
    /// Ground truth for labeled rows, aligned cluster otherwise.
    targets: Vec<usize>,
}

fn pseudo_label(
    data: &TrainingData,
    assignment: &ClusterAssignment,
    k: usize,
    known: usize,
) -> Result<EpochTargets> {
    let pairs: Vec<(usize, usize)> = data
        .labeled_rows()
        .into_iter()
        .map(|i| (assignment.labels[i], data.labels[i].unwrap()))
        .collect();
    let map = align_clusters(&pairs, k, known)?;
    let clusters: Vec<usize> = assignment.labels.iter().map(|&c| map[c]).collect();
    let targets = clusters
        .iter()
        .zip(&data.labels)
        .map(|(&c, l)| l.unwrap_or(c))
        .collect();
    Ok(EpochTargets { clusters, targets })
}

/// Trains encoder, classifier and prototypes on `dataset`.
///
/// The returned state is the one with the best validation NMI; ties go to
/// the later epoch. Training stops early once `early_stop_patience` epochs
/// pass without reaching the best score again.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data = TrainingData::new(dataset, config.val_fraction, &mut rng)?;
    let known = dataset.task.known_count();
    let mut encoder = EncoderHead::init(&mut rng, dataset.dim(), config.embed_dim);
    let mut classifier = ClassifierHead::init(&mut rng, config.embed_dim, known);

    let labeled_rows = data.labeled_rows();
    let labeled_targets: Vec<usize> = labeled_rows.iter().map(|&i| data.labels[i].unwrap()).collect();
    let warmup_ce = warmup(
        gather(data.inputs.view(), &labeled_rows).view(),
        &labeled_targets,
        &mut encoder,
        &mut classifier,
        config,
        &mut rng,
    )?;

    let z = encoder.embed(data.inputs.view())?;
    let k = resolve_k(config, dataset, z.view(), rng.random())?;
    let first = kmeans_restarts(
        z.view(),
        k,
        rng.random(),
        DEFAULT_N_INIT,
        DEFAULT_MAX_ITER,
        DEFAULT_TOL,
    )?;
    let first_targets = pseudo_label(&data, &first, k, known)?;
    let prototypes = generate(z.view(), &first_targets.clusters, k, config.loss.lambda)?;
    let mut best = Snapshot {
        encoder: encoder.clone(),
        classifier: classifier.clone(),
        prototypes,
        epoch: 0,
    };
    let mut best_nmi = f64::NEG_INFINITY;
    let mut logs = Vec::new();
    let beta = Beta::new(config.loss.alpha, config.loss.alpha)
        .map_err(|e| RapError::InvalidArgument(format!("beta distribution: {e}")))?;

    for epoch in 1..=config.epochs {
        let z = encoder.embed(data.inputs.view())?;
        let assignment = kmeans_restarts(
            z.view(),
            k,
            rng.random(),
            DEFAULT_N_INIT,
            DEFAULT_MAX_ITER,
            DEFAULT_TOL,
        )?;
        let EpochTargets { clusters, targets } = pseudo_label(&data, &assignment, k, known)?;
        let mut protos = generate(z.view(), &clusters, k, config.loss.lambda)?;

        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_r, mut sum_a, mut sum_ce) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch::new(
                gather(data.inputs.view(), chunk),
                chunk.iter().map(|&i| targets[i]).collect(),
                chunk.iter().map(|&i| data.labels[i].is_some()).collect(),
            )?;
            let mut partner: Vec<usize> = (0..chunk.len()).collect();
            partner.shuffle(&mut rng);
            let eta = (0..chunk.len()).map(|_| beta.sample(&mut rng)).collect();
            let mixing = Mixing { partner, eta };

            let mut loss = multitask_loss(
                &batch,
                &mixing,
                protos.mu.view(),
                &encoder,
                &classifier,
                &config.loss,
            )?;
            if !loss.total.is_finite() || !loss.grads.is_finite() {
                return Err(RapError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "L_all = {}, L_r = {}, L_a = {}, L_ce = {}",
                        loss.total, loss.rpal, loss.apdl, loss.ce
                    ),
                });
            }
            let mu_grad = protos.trainable.then_some(&mut loss.d_mu);
            clip(&mut loss.grads, mu_grad, config.grad_clip);
            encoder.apply(&loss.grads.dw, &loss.grads.db, config.learning_rate);
            classifier.apply(&loss.grads.dv, &loss.grads.dc, config.learning_rate);
            protos.apply_gradient(&loss.d_mu, config.learning_rate)?;
            ema_from_batch(&mut protos, loss.embeddings.view(), &batch.targets)?;

            sum_total += loss.total;
            sum_r += loss.rpal;
            sum_a += loss.apdl;
            sum_ce += loss.ce;
            steps += 1;
        }

        let z = encoder.embed(data.inputs.view())?;
        let stats = within_between_stats(z.view(), &targets, &protos)?;
        let val_z = encoder.embed(data.val_inputs.view())?;
        let predicted: Vec<usize> = val_z.axis_iter(Axis(0)).map(|r| protos.nearest(r)).collect();
        let val_nmi = nmi(&data.val_labels, &predicted)?;
        let steps = steps.max(1) as f64;
        let log = EpochLog {
            epoch,
            total: sum_total / steps,
            rpal: sum_r / steps,
            apdl: sum_a / steps,
            ce: sum_ce / steps,
            val_nmi,
            within: stats.within,
            between: stats.between,
        };
        info!(
            "epoch {epoch}: L_all {:.4} L_r {:.4} L_a {:.4} L_ce {:.4} val_nmi {:.4} within {:.4} between {:.4}",
            log.total, log.rpal, log.apdl, log.ce, log.val_nmi, log.within, log.between
        );
        logs.push(log);

        if val_nmi >= best_nmi {
            best_nmi = val_nmi;
            best = Snapshot {
                encoder: encoder.clone(),
                classifier: classifier.clone(),
                prototypes: protos.clone(),
                epoch,
            };
        } else if epoch - best.epoch >= config.early_stop_patience {
            info!("early stop at epoch {epoch}; best epoch {}", best.epoch);
            break;
        }
    }

    Ok(TrainedModel {
        encoder: best.encoder,
        classifier: best.classifier,
        prototypes: best.prototypes,
        k,
        best_epoch: best.epoch,
        warmup_ce,
        logs,
    })
}

/// EMA-updates every prototype whose class appears in the batch with the
/// normalized mean embedding of that class.
fn ema_from_batch(protos: &mut PrototypeSet, z: ArrayView2<f64>, targets: &[usize]) -> Result<()> {
    let mut sums = Array2::<f64>::zeros((protos.len(), z.ncols()));
    let mut counts = vec![0usize; protos.len()];
    for (row, &t) in z.axis_iter(Axis(0)).zip(targets) {
        sums.row_mut(t).scaled_add(1.0, &row);
        counts[t] += 1;
    }
    for (mut row, &n) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if n > 0 {
            row /= n as f64;
        }
    }
    for (c, mean) in sums.axis_iter(Axis(0)).enumerate() {
        let n = norm(mean);
        if counts[c] > 0 && n >= 1e-12 {
            protos.ema_update(c, (&mean / n).view())?;
        }
    }
    Ok(())
}

/// Embeddings, clusters and (when ground truth exists) metrics for a sample set.
#[derive(Debug, Clone)]
pub struct Inference {
    pub embeddings: Array2<f64>,
    pub assignment: ClusterAssignment,
    /// Computed over the samples that carry ground truth.
    pub report: Option<MetricsReport>,
}

/// Embeds `samples`, clusters them into `k` groups and scores the result
/// against the ground truth named in `class_names` (sorted).
pub fn infer(
    encoder: &EncoderHead,
    samples: &[Sample],
    k: usize,
    seed: u64,
    class_names: &[String],
) -> Result<Inference> {
    if samples.is_empty() {
        return Err(RapError::EmptyDataset);
    }
    let x = feature_matrix(samples, encoder.input_dim());
    if samples.iter().any(|s| s.features.len() != encoder.input_dim()) {
        return Err(RapError::ShapeMismatch(format!(
            "encoder expects {}-dimensional features",
            encoder.input_dim()
        )));
    }
    let embeddings = encoder.embed(x.view())?;
    let assignment = kmeans_restarts(
        embeddings.view(),
        k,
        seed,
        DEFAULT_N_INIT,
        DEFAULT_MAX_ITER,
        DEFAULT_TOL,
    )?;
    let report = score(samples, &assignment.labels, class_names)?;
    Ok(Inference {
        embeddings,
        assignment,
        report,
    })
}

/// Metrics of `predicted` against the samples' ground truth, if any exists.
pub fn score(
    samples: &[Sample],
    predicted: &[usize],
    class_names: &[String],
) -> Result<Option<MetricsReport>> {
    let (truth, pred): (Vec<usize>, Vec<usize>) = truth_indices(samples, class_names)
        .into_iter()
        .zip(predicted)
        .filter_map(|(t, &p)| t.map(|t| (t, p)))
        .unzip();
    if truth.is_empty() {
        return Ok(None);
    }
    evaluate(&truth, &pred).map(Some)
}

/// k-means directly on raw features, scored like [`infer`].
pub fn raw_kmeans_baseline(
    samples: &[Sample],
    dim: usize,
    k: usize,
    seed: u64,
    class_names: &[String],
) -> Result<Option<MetricsReport>> {
    let x = feature_matrix(samples, dim);
    let assignment = kmeans_restarts(x.view(), k, seed, DEFAULT_N_INIT, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    score(samples, &assignment.labels, class_names)
}
