//! One random finite-difference instance per loss, each composed with the
//! encoder where the loss sees embeddings. Prototypes are unit rows except
//! for the prototype-only loss. Every function returns the worst entry-wise
//! relative error over all parameter blocks.

#![allow(dead_code)]

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rap_core::encoder::{ClassifierHead, EncoderHead};
use rap_core::losses::{
    apdl_loss, ce_loss, instance_contrastive_loss, multitask_loss, pcl_loss, rpal_loss, Batch, LossConfig,
    Mixing,
};

use super::{gaussian_matrix, gaussian_vector, max_relative_error, unit_rows, Params};

pub const TAU: f64 = 0.1;

struct Instance {
    rng: ChaCha8Rng,
    inputs: Array2<f64>,
    classes: usize,
    targets: Vec<usize>,
    params: Params,
}

fn instance(seed: u64, rows: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h) = (5, 4);
    let classes = 2 + (seed as usize % 5);
    let inputs = gaussian_matrix(&mut rng, rows, d);
    let targets = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let mut params = Params::default();
    params.push_matrix("w", &(gaussian_matrix(&mut rng, h, d) * 0.5));
    params.push_vector("b", &(gaussian_vector(&mut rng, h) * 0.5));
    Instance {
        rng,
        inputs,
        classes,
        targets,
        params,
    }
}

fn encoder(p: &Params) -> EncoderHead {
    EncoderHead {
        weight: p.matrix("w"),
        bias: p.vector("b"),
    }
}

fn classifier(p: &Params) -> ClassifierHead {
    ClassifierHead {
        weight: p.matrix("v"),
        bias: p.vector("c"),
    }
}

fn flat<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    parts.into_iter().flatten().copied().collect()
}

fn random_mixing(rng: &mut ChaCha8Rng, n: usize) -> Mixing {
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let eta = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    Mixing { partner, eta }
}

pub fn pcl(seed: u64) -> f64 {
    let mut t = instance(seed, 6);
    let mu = unit_rows(gaussian_matrix(&mut t.rng, t.classes, 4));
    t.params.push_matrix("mu", &mu);
    let value = |p: &Params| {
        let z = encoder(p).embed(t.inputs.view()).unwrap();
        pcl_loss(z.view(), &t.targets, p.matrix("mu").view(), TAU)
            .unwrap()
            .value
    };
    let enc = encoder(&t.params);
    let (z, caches) = enc.forward_batch(t.inputs.view()).unwrap();
    let l = pcl_loss(z.view(), &t.targets, mu.view(), TAU).unwrap();
    let g = enc.backward_batch(&caches, l.d_z.view());
    let analytic = flat([
        g.dw.as_slice().unwrap(),
        g.db.as_slice().unwrap(),
        l.d_mu.as_slice().unwrap(),
    ]);
    max_relative_error(&t.params, &analytic, value)
}

pub fn rpal(seed: u64) -> f64 {
    let mut t = instance(seed, 6);
    let mu = unit_rows(gaussian_matrix(&mut t.rng, t.classes, 4));
    let mixing = random_mixing(&mut t.rng, 6);
    t.params.push_matrix("mu", &mu);
    let value = |p: &Params| {
        rpal_loss(
            t.inputs.view(),
            &t.targets,
            &mixing,
            p.matrix("mu").view(),
            TAU,
            &encoder(p),
        )
        .unwrap()
        .loss
        .value
    };
    let r = rpal_loss(
        t.inputs.view(),
        &t.targets,
        &mixing,
        mu.view(),
        TAU,
        &encoder(&t.params),
    )
    .unwrap();
    let analytic = flat([
        r.encoder.dw.as_slice().unwrap(),
        r.encoder.db.as_slice().unwrap(),
        r.loss.d_mu.as_slice().unwrap(),
    ]);
    max_relative_error(&t.params, &analytic, value)
}

pub fn apdl(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 2 + (seed as usize % 5);
    let mu = gaussian_matrix(&mut rng, classes, 4);
    let mut params = Params::default();
    params.push_matrix("mu", &mu);
    let value = |p: &Params| apdl_loss(p.matrix("mu").view(), TAU, 1e-6).unwrap().value;
    let l = apdl_loss(mu.view(), TAU, 1e-6).unwrap();
    max_relative_error(&params, l.d_mu.as_slice().unwrap(), value)
}

pub fn ce(seed: u64) -> f64 {
    let mut t = instance(seed, 6);
    let known = t.classes;
    let v = gaussian_matrix(&mut t.rng, known, 4);
    let c = gaussian_vector(&mut t.rng, known);
    let mut mask: Vec<bool> = (0..6).map(|_| t.rng.random_bool(0.6)).collect();
    mask[0] = true;
    t.params.push_matrix("v", &v);
    t.params.push_vector("c", &c);
    let value = |p: &Params| {
        let z = encoder(p).embed(t.inputs.view()).unwrap();
        ce_loss(z.view(), &t.targets, &mask, &classifier(p))
            .unwrap()
            .value
    };
    let enc = encoder(&t.params);
    let (z, caches) = enc.forward_batch(t.inputs.view()).unwrap();
    let l = ce_loss(z.view(), &t.targets, &mask, &classifier(&t.params)).unwrap();
    let g = enc.backward_batch(&caches, l.d_z.view());
    let cls = l.d_cls.unwrap();
    let analytic = flat([
        g.dw.as_slice().unwrap(),
        g.db.as_slice().unwrap(),
        cls.dv.as_slice().unwrap(),
        cls.dc.as_slice().unwrap(),
    ]);
    max_relative_error(&t.params, &analytic, value)
}

pub fn instance_contrastive(seed: u64) -> f64 {
    let mut t = instance(seed, 4);
    let noise = gaussian_matrix(&mut t.rng, 4, 5) * 0.3;
    let views = ndarray::concatenate![ndarray::Axis(0), t.inputs, &t.inputs + &noise];
    let value = |p: &Params| {
        let z = encoder(p).embed(views.view()).unwrap();
        instance_contrastive_loss(z.view(), TAU).unwrap().value
    };
    let enc = encoder(&t.params);
    let (z, caches) = enc.forward_batch(views.view()).unwrap();
    let l = instance_contrastive_loss(z.view(), TAU).unwrap();
    let g = enc.backward_batch(&caches, l.d_z.view());
    let analytic = flat([g.dw.as_slice().unwrap(), g.db.as_slice().unwrap()]);
    max_relative_error(&t.params, &analytic, value)
}

pub fn multitask(seed: u64) -> f64 {
    let mut t = instance(seed, 6);
    let known = 1 + t.classes / 2;
    let mu = unit_rows(gaussian_matrix(&mut t.rng, t.classes, 4));
    let v = gaussian_matrix(&mut t.rng, known, 4);
    let c = gaussian_vector(&mut t.rng, known);
    let mixing = random_mixing(&mut t.rng, 6);
    let mask: Vec<bool> = t.targets.iter().map(|&y| y < known).collect();
    let config = LossConfig {
        omega: t.rng.random_range(0.5..3.0),
        ..LossConfig::default()
    };
    let batch = Batch::new(t.inputs.clone(), t.targets.clone(), mask).unwrap();
    t.params.push_matrix("v", &v);
    t.params.push_vector("c", &c);
    t.params.push_matrix("mu", &mu);
    let value = |p: &Params| {
        multitask_loss(
            &batch,
            &mixing,
            p.matrix("mu").view(),
            &encoder(p),
            &classifier(p),
            &config,
        )
        .unwrap()
        .total
    };
    let l = multitask_loss(
        &batch,
        &mixing,
        mu.view(),
        &encoder(&t.params),
        &classifier(&t.params),
        &config,
    )
    .unwrap();
    let analytic = flat([
        l.grads.dw.as_slice().unwrap(),
        l.grads.db.as_slice().unwrap(),
        l.grads.dv.as_slice().unwrap(),
        l.grads.dc.as_slice().unwrap(),
        l.d_mu.as_slice().unwrap(),
    ]);
    max_relative_error(&t.params, &analytic, value)
}

/// `(name, check)` for every loss.
pub const ALL: [(&str, fn(u64) -> f64); 6] = [
    ("pcl_loss", pcl),
    ("rpal_loss", rpal),
    ("apdl_loss", apdl),
    ("ce_loss", ce),
    ("instance_contrastive_loss", instance_contrastive),
    ("multitask_loss", multitask),
];
