//! Cross-entropy training of the fusion head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FusionHead, CLASSES};
use crate::config::{OptimizerKind, TrainConfig};
use crate::domain::EmotionLabel;
use crate::error::{Error, Result};
use crate::linalg::{add_outer, softmax, transpose_matvec};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// One labelled example: eye feature, flattened padded candidate block and
/// a non-neutral label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub f_eye: Vec<f64>,
    pub fc: Vec<f64>,
    pub label: EmotionLabel,
}

/// Mean cross-entropy over `batch` and its gradient, shaped like the head.
pub fn loss_and_grad(head: &FusionHead, batch: &[TrainingSample]) -> Result<(f64, FusionHead)> {
    let dims = head.dims();
    let n = dims.gate_width();
    let mut grad = FusionHead::zeros(dims)?;
    let mut loss = 0.0;
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let class = s
            .label
            .class_index()
            .ok_or_else(|| Error::Data("neutral label in training data".into()))?;
        let tr = head.forward(&s.f_eye, &s.fc)?;
        let p = softmax(&tr.logits);
        let max = tr.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + tr.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += (lse - tr.logits[class]) * scale;

        let mut dlogits: Vec<f64> = p.iter().map(|v| v * scale).collect();
        dlogits[class] -= scale;
        add_outer(&mut grad.cls_w, &dlogits, &tr.f_eva);
        add_to(&mut grad.cls_b, &dlogits);

        let dfeva = transpose_matvec(&head.cls_w, &dlogits, n);
        let dz: Vec<f64> = (0..n)
            .map(|i| dfeva[i] * tr.f_ev[i] * tr.u[i] * (1.0 - tr.u[i]))
            .collect();
        add_outer(&mut grad.se_w2, &dz, &tr.h);
        add_to(&mut grad.se_b2, &dz);

        let dh = transpose_matvec(&head.se_w2, &dz, dims.se_hidden());
        let dh_pre: Vec<f64> = dh.iter().zip(&tr.h_pre).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
        add_outer(&mut grad.se_w1, &dh_pre, &tr.f_ev);
        add_to(&mut grad.se_b1, &dh_pre);

        let through_gate = transpose_matvec(&head.se_w1, &dh_pre, n);
        let dfv: Vec<f64> = (0..dims.d_eye).map(|i| dfeva[i] * tr.u[i] + through_gate[i]).collect();
        add_outer(&mut grad.fcv_w, &dfv, &tr.fc);
        add_to(&mut grad.fcv_b, &dfv);
    }
    debug_assert_eq!(grad.cls_b.len(), CLASSES);
    Ok((loss, grad))
}

fn add_to(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam { m: FusionHead, v: FusionHead, t: i32 },
}

/// Applies optimizer steps to a head, one batch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub head: FusionHead,
    lr: f64,
    opt: Optimizer,
    steps: usize,
}

impl Trainer {
    pub fn new(head: FusionHead, lr: f64, kind: OptimizerKind) -> Result<Self> {
        let opt = match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: FusionHead::zeros(head.dims())?,
                v: FusionHead::zeros(head.dims())?,
                t: 0,
            },
        };
        Ok(Self { head, lr, opt, steps: 0 })
    }

    /// Takes one step on `batch` and returns the loss measured before it.
    pub fn step(&mut self, batch: &[TrainingSample]) -> Result<f64> {
        let (loss, grad) = loss_and_grad(&self.head, batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.steps, loss });
        }
        self.steps += 1;
        let lr = self.lr;
        match &mut self.opt {
            Optimizer::Sgd => {
                for (p, g) in self.head.params_mut().into_iter().zip(grad.params()) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                let params = self.head.params_mut();
                for (((p, g), m), v) in params.into_iter().zip(grad.params()).zip(m.params_mut()).zip(v.params_mut()) {
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                }
            }
        }
        if self.head.params().iter().any(|p| p.iter().any(|w| !w.is_finite())) {
            return Err(Error::Divergence { step: self.steps, loss: f64::NAN });
        }
        Ok(loss)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Minibatch training with a seeded shuffle each epoch.
pub fn train_head(dataset: &[TrainingSample], head: FusionHead, cfg: &TrainConfig) -> Result<(FusionHead, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("train.batch must be positive".into()));
    }
    let mut trainer = Trainer::new(head, cfg.lr, cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch.min(dataset.len()));
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|i| dataset[*i].clone()));
            total += trainer.step(&batch)?;
            batches += 1;
        }
        epoch_losses.push(total / f64::from(batches));
    }
    let steps = trainer.steps();
    Ok((trainer.head, TrainReport { epoch_losses, steps }))
}
