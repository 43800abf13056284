//! Training objectives with analytic gradients.
//!
//! * [`pcl_loss`]: prototypical contrastive loss, softmax over `z·μ/τ`.
//! * [`rpal_loss`]: the same loss evaluated on mixup-interpolated inputs with
//!   interpolated targets (robust prototypical attraction).
//! * [`apdl_loss`]: prototype dispersion, each pair weighted by the
//!   reciprocal of its Euclidean distance.
//! * [`instance_contrastive_loss`]: alignment + uniformity baseline over two
//!   views; not part of the joint objective.
//! * [`ce_loss`]: cross-entropy of the classifier on labeled samples.
//! * [`multitask_loss`]: `ω·L_r + L_a + L_ce`.
//!
//! Every softmax-style term is evaluated with a max-shifted log-sum-exp.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{
    accumulate_outer, ClassifierGrads, ClassifierHead, EncoderGrads, EncoderHead, ParamGradients,
};
use crate::vecops::{log_sum_exp, norm, softmax};
use crate::{RapError, Result};

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature τ of every similarity softmax.
    pub tau: f64,
    /// Beta(α, α) parameter for mixup coefficients.
    pub alpha: f64,
    /// Weight ω of the robust attraction term.
    pub omega: f64,
    /// EMA momentum λ of prototype tracking.
    pub lambda: f64,
    /// Floor on prototype distances inside the dispersion weights.
    pub eps_dist: f64,
    /// Include the dispersion term in the joint objective.
    pub use_apdl: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 1.0,
            omega: 2.0,
            lambda: 0.9,
            eps_dist: 1e-6,
            use_apdl: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| RapError::InvalidConfigValue {
            key: key.to_owned(),
            message: message.to_owned(),
        };
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(bad("tau", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(bad("alpha", "must be positive"));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(bad("omega", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad("lambda", "must lie in [0, 1]"));
        }
        if !(self.eps_dist > 0.0 && self.eps_dist.is_finite()) {
            return Err(bad("eps_dist", "must be positive"));
        }
        Ok(())
    }
}

/// A loss value with its gradients.
///
/// `d_z` is with respect to the embeddings the loss consumed (the mixed
/// embeddings for [`rpal_loss`]); `d_mu` with respect to the prototype
/// matrix. Either may have zero rows when the loss does not depend on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_z: Array2<f64>,
    pub d_mu: Array2<f64>,
    pub d_cls: Option<ClassifierGrads>,
}

/// One minibatch: encoder inputs, class targets and which rows carry ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    /// Ground-truth index for labeled rows, pseudo-label otherwise.
    pub targets: Vec<usize>,
    pub labeled_mask: Vec<bool>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Vec<usize>, labeled_mask: Vec<bool>) -> Result<Self> {
        if targets.len() != inputs.nrows() || labeled_mask.len() != inputs.nrows() {
            return Err(RapError::ShapeMismatch(format!(
                "batch has {} inputs, {} targets, {} mask entries",
                inputs.nrows(),
                targets.len(),
                labeled_mask.len()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(RapError::InvalidArgument("empty batch".into()));
        }
        Ok(Self {
            inputs,
            targets,
            labeled_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Pair partner and mixing coefficient for each batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixing {
    pub partner: Vec<usize>,
    pub eta: Vec<f64>,
}

impl Mixing {
    /// Every row mixed with itself at η = 1 (plain prototypical loss).
    pub fn identity(n: usize) -> Self {
        Self {
            partner: (0..n).collect(),
            eta: vec![1.0; n],
        }
    }
}

/// Convex combination `η·a + (1 − η)·b`.
pub fn mixup(a: ArrayView1<f64>, b: ArrayView1<f64>, eta: f64) -> Array1<f64> {
    &a * eta + &b * (1.0 - eta)
}

fn check_targets(targets: &[usize], classes: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= classes) {
        Some(t) => Err(RapError::InvalidArgument(format!(
            "target {t} out of range for {classes} prototypes"
        ))),
        None => Ok(()),
    }
}

/// Soft-target prototypical cross-entropy on rows of `z`.
///
/// Row `i` contributes `weight · Σ_k q_ik · (−log softmax(z_i·μ/τ)_k)` where
/// `q_i` puts `eta[i]` on `first[i]` and `1 − eta[i]` on `second[i]`.
fn soft_prototype_ce(
    z: ArrayView2<f64>,
    first: &[usize],
    second: &[usize],
    eta: &[f64],
    weight: f64,
    mu: ArrayView2<f64>,
    tau: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let logits = z.dot(&mu.t()) / tau;
    let mut value = 0.0;
    let mut d_z = Array2::zeros(z.raw_dim());
    let mut d_mu = Array2::zeros(mu.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let l = row.to_vec();
        let lse = log_sum_exp(&l);
        let (a, b, e) = (first[i], second[i], eta[i]);
        value += weight * (e * (lse - l[a]) + (1.0 - e) * (lse - l[b]));
        let mut g: Array1<f64> = Array1::from(softmax(&l));
        g[a] -= e;
        g[b] -= 1.0 - e;
        g *= weight / tau;
        d_z.row_mut(i).assign(&g.dot(&mu));
        accumulate_outer(&mut d_mu, g.view(), z.row(i));
    }
    (value, d_z, d_mu)
}

/// Prototypical contrastive loss averaged over the rows of `z`.
pub fn pcl_loss(z: ArrayView2<f64>, targets: &[usize], mu: ArrayView2<f64>, tau: f64) -> Result<LossValue> {
    if z.nrows() == 0 || targets.len() != z.nrows() {
        return Err(RapError::ShapeMismatch(format!(
            "{} embeddings for {} targets",
            z.nrows(),
            targets.len()
        )));
    }
    check_targets(targets, mu.nrows())?;
    let ones = vec![1.0; targets.len()];
    let (value, d_z, d_mu) =
        soft_prototype_ce(z, targets, targets, &ones, 1.0 / targets.len() as f64, mu, tau);
    Ok(LossValue {
        value,
        d_z,
        d_mu,
        d_cls: None,
    })
}

/// Result of [`rpal_loss`]: the loss with gradients plus the encoder
/// parameter gradients obtained by back-propagating through the mixed inputs.
#[derive(Debug, Clone)]
pub struct RpalLoss {
    pub loss: LossValue,
    pub encoder: EncoderGrads,
    pub mixed_embeddings: Array2<f64>,
}

/// Robust prototypical attraction: for each row `a` paired with
/// `b = partner[a]`, embeds `mixup(x_a, x_b, η_a)` and scores it against the
/// η-weighted targets `y_a`, `y_b`. Averaged over pairs.
pub fn rpal_loss(
    inputs: ArrayView2<f64>,
    targets: &[usize],
    mixing: &Mixing,
    mu: ArrayView2<f64>,
    tau: f64,
    encoder: &EncoderHead,
) -> Result<RpalLoss> {
    let n = inputs.nrows();
    if n == 0 || targets.len() != n || mixing.partner.len() != n || mixing.eta.len() != n {
        return Err(RapError::ShapeMismatch(format!(
            "rpal: {n} inputs, {} targets, {} partners, {} etas",
            targets.len(),
            mixing.partner.len(),
            mixing.eta.len()
        )));
    }
    if mixing.partner.iter().any(|&p| p >= n) {
        return Err(RapError::InvalidArgument(
            "partner index outside the batch".into(),
        ));
    }
    if mixing.eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(RapError::InvalidArgument(
            "mixing coefficient outside [0, 1]".into(),
        ));
    }
    check_targets(targets, mu.nrows())?;

    let mut mixed = Array2::zeros(inputs.raw_dim());
    for a in 0..n {
        let b = mixing.partner[a];
        mixed
            .row_mut(a)
            .assign(&mixup(inputs.row(a), inputs.row(b), mixing.eta[a]));
    }
    let (z_mix, caches) = encoder.forward_batch(mixed.view())?;
    let second: Vec<usize> = mixing.partner.iter().map(|&b| targets[b]).collect();
    let (value, d_z, d_mu) = soft_prototype_ce(
        z_mix.view(),
        targets,
        &second,
        &mixing.eta,
        1.0 / n as f64,
        mu,
        tau,
    );
    let enc = encoder.backward_batch(&caches, d_z.view());
    Ok(RpalLoss {
        loss: LossValue {
            value,
            d_z,
            d_mu,
            d_cls: None,
        },
        encoder: enc,
        mixed_embeddings: z_mix,
    })
}

/// Gradient of `cos(a, b)` with respect to `a`.
fn cosine_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let (na, nb) = (norm(a), norm(b));
    let cos = a.dot(&b) / (na * nb);
    let g = &b / (na * nb) - &a * (cos / (na * na));
    (cos, g)
}

/// Alignment/uniformity loss over `2N` embeddings where rows `i` and `i + N`
/// are two views of the same sample. Similarities are cosines.
pub fn instance_contrastive_loss(z: ArrayView2<f64>, tau: f64) -> Result<LossValue> {
    let total = z.nrows();
    if total < 2 || total % 2 != 0 {
        return Err(RapError::ShapeMismatch(format!(
            "instance contrastive loss needs an even number (≥ 2) of views, got {total}"
        )));
    }
    let half = total / 2;
    let mut cos = Array2::<f64>::zeros((total, total));
    for i in 0..total {
        for k in (i + 1)..total {
            let c = z.row(i).dot(&z.row(k)) / (norm(z.row(i)) * norm(z.row(k)));
            cos[[i, k]] = c;
            cos[[k, i]] = c;
        }
    }
    // dL/dcos for each ordered pair, then chain through the cosine.
    let mut d_cos = Array2::<f64>::zeros((total, total));
    let mut alignment = 0.0;
    for i in 0..half {
        alignment -= cos[[i, i + half]] / (tau * half as f64);
        d_cos[[i, i + half]] -= 1.0 / (tau * half as f64);
    }
    let mut uniformity = 0.0;
    for i in 0..total {
        let others: Vec<usize> = (0..total).filter(|&k| k != i).collect();
        let logits: Vec<f64> = others.iter().map(|&k| cos[[i, k]] / tau).collect();
        uniformity += log_sum_exp(&logits) / total as f64;
        for (&k, w) in others.iter().zip(softmax(&logits)) {
            d_cos[[i, k]] += w / (tau * total as f64);
        }
    }
    let mut d_z = Array2::zeros(z.raw_dim());
    for i in 0..total {
        for k in 0..total {
            let g = d_cos[[i, k]];
            if g == 0.0 {
                continue;
            }
            let (_, ga) = cosine_grad(z.row(i), z.row(k));
            let (_, gb) = cosine_grad(z.row(k), z.row(i));
            d_z.row_mut(i).scaled_add(g, &ga);
            d_z.row_mut(k).scaled_add(g, &gb);
        }
    }
    Ok(LossValue {
        value: alignment + uniformity,
        d_z,
        d_mu: Array2::zeros((0, z.ncols())),
        d_cls: None,
    })
}

/// Prototype dispersion: `mean_i log( 1/(C−1) Σ_{j≠i} D_ij · exp(cos_ij/τ) )`
/// with `D_ij = 1 / max(‖μ_i − μ_j‖, ε)`. Gradients include the distance
/// weights.
pub fn apdl_loss(mu: ArrayView2<f64>, tau: f64, eps_dist: f64) -> Result<LossValue> {
    let c = mu.nrows();
    if c < 2 {
        return Err(RapError::InvalidArgument(format!(
            "dispersion loss needs at least 2 prototypes, got {c}"
        )));
    }
    let mut value = 0.0;
    let mut d_mu = Array2::<f64>::zeros(mu.raw_dim());
    let log_pairs = ((c - 1) as f64).ln();
    for i in 0..c {
        let mut logits = Vec::with_capacity(c - 1);
        let mut parts = Vec::with_capacity(c - 1);
        for j in (0..c).filter(|&j| j != i) {
            let (cos, g_cos_i) = cosine_grad(mu.row(i), mu.row(j));
            let (_, g_cos_j) = cosine_grad(mu.row(j), mu.row(i));
            let diff = &mu.row(i) - &mu.row(j);
            let dist = norm(diff.view());
            let floored = dist.max(eps_dist);
            logits.push(cos / tau - floored.ln());
            // ∂(−ln dist)/∂μ_i = −(μ_i − μ_j)/dist²; zero below the floor.
            let g_dist_i = if dist > eps_dist {
                -&diff / (dist * dist)
            } else {
                Array1::zeros(diff.len())
            };
            let g_i = &g_cos_i / tau + &g_dist_i;
            let g_j = &g_cos_j / tau - &g_dist_i;
            parts.push((j, g_i, g_j));
        }
        value += (log_sum_exp(&logits) - log_pairs) / c as f64;
        for (w, (j, g_i, g_j)) in softmax(&logits).into_iter().zip(parts) {
            let scale = w / c as f64;
            d_mu.row_mut(i).scaled_add(scale, &g_i);
            d_mu.row_mut(j).scaled_add(scale, &g_j);
        }
    }
    Ok(LossValue {
        value,
        d_z: Array2::zeros((0, mu.ncols())),
        d_mu,
        d_cls: None,
    })
}

/// Mean softmax cross-entropy of the classifier over the labeled rows.
/// Returns zero (with zero gradients) when no row is labeled.
pub fn ce_loss(
    z: ArrayView2<f64>,
    targets: &[usize],
    labeled_mask: &[bool],
    cls: &ClassifierHead,
) -> Result<LossValue> {
    if targets.len() != z.nrows() || labeled_mask.len() != z.nrows() {
        return Err(RapError::ShapeMismatch(format!(
            "{} embeddings, {} targets, {} mask entries",
            z.nrows(),
            targets.len(),
            labeled_mask.len()
        )));
    }
    let classes = cls.classes();
    let labeled: Vec<usize> = (0..z.nrows()).filter(|&i| labeled_mask[i]).collect();
    let mut d_z = Array2::zeros(z.raw_dim());
    let mut grads = ClassifierGrads::zeros(classes, z.ncols());
    if labeled.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            d_z,
            d_mu: Array2::zeros((0, z.ncols())),
            d_cls: Some(grads),
        });
    }
    let scale = 1.0 / labeled.len() as f64;
    let mut value = 0.0;
    for &i in &labeled {
        let y = targets[i];
        if y >= classes {
            return Err(RapError::InvalidArgument(format!(
                "label {y} outside the {classes} known classes"
            )));
        }
        let logits = cls.classify(z.row(i)).to_vec();
        value += scale * (log_sum_exp(&logits) - logits[y]);
        let mut g = Array1::from(softmax(&logits));
        g[y] -= 1.0;
        g *= scale;
        d_z.row_mut(i).assign(&cls.weight.t().dot(&g));
        accumulate_outer(&mut grads.dv, g.view(), z.row(i));
        grads.dc += &g;
    }
    Ok(LossValue {
        value,
        d_z,
        d_mu: Array2::zeros((0, z.ncols())),
        d_cls: Some(grads),
    })
}

/// Joint objective value, its parts and gradients for every parameter.
#[derive(Debug, Clone)]
pub struct MultitaskLoss {
    pub total: f64,
    pub rpal: f64,
    pub apdl: f64,
    pub ce: f64,
    pub grads: ParamGradients,
    pub d_mu: Array2<f64>,
    /// Embeddings of the unmixed batch inputs.
    pub embeddings: Array2<f64>,
}

/// `L_all = ω·L_r + L_a + L_ce`, with `L_a` dropped when `config.use_apdl`
/// is false.
pub fn multitask_loss(
    batch: &Batch,
    mixing: &Mixing,
    mu: ArrayView2<f64>,
    encoder: &EncoderHead,
    cls: &ClassifierHead,
    config: &LossConfig,
) -> Result<MultitaskLoss> {
    let mut grads = ParamGradients::zeros(encoder, cls);
    let mut d_mu = Array2::zeros(mu.raw_dim());

    let rpal = rpal_loss(
        batch.inputs.view(),
        &batch.targets,
        mixing,
        mu,
        config.tau,
        encoder,
    )?;
    grads.add_encoder(&rpal.encoder, config.omega);
    d_mu.scaled_add(config.omega, &rpal.loss.d_mu);

    let apdl = if config.use_apdl && mu.nrows() >= 2 {
        let a = apdl_loss(mu, config.tau, config.eps_dist)?;
        d_mu += &a.d_mu;
        a.value
    } else {
        0.0
    };

    let (z, caches) = encoder.forward_batch(batch.inputs.view())?;
    let ce = ce_loss(z.view(), &batch.targets, &batch.labeled_mask, cls)?;
    if let Some(g) = &ce.d_cls {
        grads.add_classifier(g, 1.0);
    }
    grads.add_encoder(&encoder.backward_batch(&caches, ce.d_z.view()), 1.0);

    Ok(MultitaskLoss {
        total: config.omega * rpal.loss.value + apdl + ce.value,
        rpal: rpal.loss.value,
        apdl,
        ce: ce.value,
        grads,
        d_mu,
        embeddings: z,
    })
}
