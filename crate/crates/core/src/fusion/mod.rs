//! Eye/scene fusion head.
//!
//! ```text
//! f_c   = candidate features, nearest first, zero-padded to r_max rows   (r_max*d_vis)
//! f_v   = FC_v f_c                                                         (d_eye)
//! f_ev  = [f_v, f_eye]                                                     (2*d_eye)
//! u     = sigmoid(W2 relu(W1 f_ev + b1) + b2)                              (2*d_eye)
//! f_eva = u * f_ev
//! logits = W_c f_eva + b_c                                                 (6)
//! ```
//!
//! The gate `u` is also the source of the influential score: the share of
//! gate mass that lands on the scene channels `f_v`.

mod train;

pub use train::{loss_and_grad, train_head, Optimizer, TrainReport, Trainer, TrainingSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::TensorArchive;
use crate::config::FusionDims;
use crate::domain::EmotionLabel;
use crate::error::{Error, Result};
use crate::eyefeat::EyeFeature;
use crate::linalg::{affine, argmax, sigmoid};
use crate::roiselect::CandidateSet;

pub const CLASSES: usize = 6;

pub const FCV_W: &str = "fcv.W";
pub const FCV_B: &str = "fcv.b";
pub const SE_W1: &str = "se.W1";
pub const SE_B1: &str = "se.b1";
pub const SE_W2: &str = "se.W2";
pub const SE_B2: &str = "se.b2";
pub const CLS_W: &str = "cls.W";
pub const CLS_B: &str = "cls.b";

/// Fusion parameters, row-major, held in `f64`; archives store them as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    dims: FusionDims,
    pub fcv_w: Vec<f64>,
    pub fcv_b: Vec<f64>,
    pub se_w1: Vec<f64>,
    pub se_b1: Vec<f64>,
    pub se_w2: Vec<f64>,
    pub se_b2: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub fc: Vec<f64>,
    pub f_ev: Vec<f64>,
    pub h_pre: Vec<f64>,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub f_eva: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub emotion: EmotionLabel,
    pub logits: Vec<f64>,
    pub u: Vec<f64>,
    pub influential_score: f64,
}

impl FusionHead {
    /// `(name, shape)` of every parameter tensor, in archive order.
    pub fn shapes(dims: &FusionDims) -> [(&'static str, Vec<usize>); 8] {
        let n = dims.gate_width();
        let m = dims.se_hidden();
        [
            (FCV_W, vec![dims.d_eye, dims.r_max * dims.d_vis]),
            (FCV_B, vec![dims.d_eye]),
            (SE_W1, vec![m, n]),
            (SE_B1, vec![m]),
            (SE_W2, vec![n, m]),
            (SE_B2, vec![n]),
            (CLS_W, vec![CLASSES, n]),
            (CLS_B, vec![CLASSES]),
        ]
    }

    pub fn zeros(dims: FusionDims) -> Result<Self> {
        dims.validate()?;
        let [a, b, c, d, e, f, g, h] = Self::shapes(&dims).map(|(_, s)| vec![0.0; s.iter().product()]);
        Ok(Self {
            dims,
            fcv_w: a,
            fcv_b: b,
            se_w1: c,
            se_b1: d,
            se_w2: e,
            se_b2: f,
            cls_w: g,
            cls_b: h,
        })
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(dims: FusionDims, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = Self::shapes(&dims);
        for ((_, shape), param) in shapes.iter().zip(head.params_mut()) {
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                for w in param.iter_mut() {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(head)
    }

    pub fn from_archive(archive: &TensorArchive, dims: FusionDims) -> Result<Self> {
        let mut head = Self::zeros(dims)?;
        let shapes = Self::shapes(&dims);
        for ((name, shape), param) in shapes.iter().zip(head.params_mut()) {
            let t = archive.require(name, shape)?;
            *param = t.data.iter().map(|v| f64::from(*v)).collect();
        }
        Ok(head)
    }

    pub fn write_to(&self, archive: &mut TensorArchive) -> Result<()> {
        for ((name, shape), param) in Self::shapes(&self.dims).iter().zip(self.params()) {
            archive.upsert(name, shape, param.iter().map(|v| *v as f32).collect())?;
        }
        Ok(())
    }

    pub fn dims(&self) -> FusionDims {
        self.dims
    }

    pub fn params(&self) -> [&Vec<f64>; 8] {
        [
            &self.fcv_w,
            &self.fcv_b,
            &self.se_w1,
            &self.se_b1,
            &self.se_w2,
            &self.se_b2,
            &self.cls_w,
            &self.cls_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.fcv_w,
            &mut self.fcv_b,
            &mut self.se_w1,
            &mut self.se_b1,
            &mut self.se_w2,
            &mut self.se_b2,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }

    /// Forward pass over an already flattened, padded `f_c`.
    pub fn forward(&self, f_eye: &[f64], fc: &[f64]) -> Result<ForwardTrace> {
        let d = self.dims;
        if f_eye.len() != d.d_eye {
            return Err(Error::Model(format!("eye feature has {} values, head expects {}", f_eye.len(), d.d_eye)));
        }
        if fc.len() != d.r_max * d.d_vis {
            return Err(Error::Model(format!(
                "candidate block has {} values, head expects {}",
                fc.len(),
                d.r_max * d.d_vis
            )));
        }
        let f_v = affine(&self.fcv_w, &self.fcv_b, fc);
        let f_ev: Vec<f64> = f_v.iter().chain(f_eye).copied().collect();
        let h_pre = affine(&self.se_w1, &self.se_b1, &f_ev);
        let h: Vec<f64> = h_pre.iter().map(|z| z.max(0.0)).collect();
        let u: Vec<f64> = affine(&self.se_w2, &self.se_b2, &h).into_iter().map(sigmoid).collect();
        let f_eva: Vec<f64> = u.iter().zip(&f_ev).map(|(a, b)| a * b).collect();
        let logits = affine(&self.cls_w, &self.cls_b, &f_eva);
        Ok(ForwardTrace {
            fc: fc.to_vec(),
            f_ev,
            h_pre,
            h,
            u,
            f_eva,
            logits,
        })
    }
}

/// Flattens candidate features row-major in candidate order and zero-pads to
/// `r_max` rows.
pub fn flatten_candidates(cands: &CandidateSet, dims: &FusionDims) -> Result<Vec<f64>> {
    if cands.len() > dims.r_max {
        return Err(Error::Model(format!("{} candidates exceed r_max = {}", cands.len(), dims.r_max)));
    }
    let mut fc = vec![0.0; dims.r_max * dims.d_vis];
    for (row, region) in fc.chunks_exact_mut(dims.d_vis).zip(&cands.regions) {
        if region.feature.len() != dims.d_vis {
            return Err(Error::Model(format!(
                "region {} feature has {} values, head expects {}",
                region.id,
                region.feature.len(),
                dims.d_vis
            )));
        }
        for (dst, src) in row.iter_mut().zip(&region.feature) {
            *dst = f64::from(*src);
        }
    }
    Ok(fc)
}

/// Share of the gate on the first half of the channels (the scene channels).
pub fn influential_score(u: &[f64]) -> Result<f64> {
    if u.is_empty() || u.len() % 2 != 0 {
        return Err(Error::Precondition(format!("gate length {} must be even and positive", u.len())));
    }
    if let Some(bad) = u.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Precondition(format!("gate value {bad} outside (0,1)")));
    }
    let half = u.len() / 2;
    let scene: f64 = u[..half].iter().sum();
    let eye: f64 = u[half..].iter().sum();
    Ok(scene / (scene + eye))
}

pub fn classify_logits(logits: &[f64]) -> EmotionLabel {
    EmotionLabel::from_class_index(argmax(logits)).expect("six logits")
}

pub fn fuse_classify(f_eye: &EyeFeature, cands: &CandidateSet, head: &FusionHead) -> Result<FusionOutput> {
    let fc = flatten_candidates(cands, &head.dims)?;
    let trace = head.forward(&f_eye.vector, &fc)?;
    let influential_score = influential_score(&trace.u).map_err(|e| Error::Model(format!("gate saturated: {e}")))?;
    Ok(FusionOutput {
        emotion: classify_logits(&trace.logits),
        logits: trace.logits,
        u: trace.u,
        influential_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Rect, Region};
    use crate::roiselect::select_candidates;

    fn desk() -> FusionDims {
        FusionDims {
            d_vis: 4,
            d_eye: 3,
            r_max: 2,
            se_reduction: 1,
        }
    }

    fn cands(n: u32, d_vis: usize) -> CandidateSet {
        let regions: Vec<Region> = (0..n)
            .map(|i| Region {
                id: i,
                rect: Rect::from([0.2 + 0.3 * f64::from(i), 0.5, 0.1, 0.1]),
                tag: format!("r{i}"),
                feature: (0..d_vis).map(|k| (k as f32 + 1.0) * (i as f32 + 1.0)).collect(),
            })
            .collect();
        select_candidates(&regions, [0.2, 0.5], 10)
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = FusionHead::zeros(desk()).unwrap();
        let eye = EyeFeature { t: 0, vector: vec![0.3, -1.0, 2.0] };
        let out = fuse_classify(&eye, &cands(2, 4), &head).unwrap();
        assert!(out.u.iter().all(|u| *u == 0.5));
        assert!(out.logits.iter().all(|l| *l == 0.0));
        assert_eq!(out.emotion, EmotionLabel::Happiness);
        assert_eq!(out.influential_score, 0.5);
    }

    #[test]
    fn single_candidate_is_zero_padded() {
        let fc = flatten_candidates(&cands(1, 4), &desk()).unwrap();
        assert_eq!(&fc[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert!(fc[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn archive_round_trip() {
        let head = FusionHead::init(desk(), 3).unwrap();
        let mut ar = TensorArchive::new();
        head.write_to(&mut ar).unwrap();
        let back = FusionHead::from_archive(&ar, desk()).unwrap();
        for (a, b) in head.params().iter().zip(back.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let mut wrong = desk();
        wrong.d_vis = 5;
        assert!(FusionHead::from_archive(&ar, wrong).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let head = FusionHead::zeros(desk()).unwrap();
        let eye = EyeFeature { t: 0, vector: vec![0.0; 4] };
        assert!(matches!(fuse_classify(&eye, &cands(1, 4), &head), Err(Error::Model(_))));
        let eye = EyeFeature { t: 0, vector: vec![0.0; 3] };
        assert!(matches!(fuse_classify(&eye, &cands(1, 5), &head), Err(Error::Model(_))));
        assert!(matches!(fuse_classify(&eye, &cands(3, 4), &head), Err(Error::Model(_))));
    }

    #[test]
    fn score_examples() {
        assert_eq!(influential_score(&[0.3; 260]).unwrap(), 0.5);
        let mut u = vec![0.001; 130];
        u.extend(vec![0.999; 130]);
        assert!((influential_score(&u).unwrap() - 0.001).abs() < 1e-12);
        assert!(influential_score(&[0.5, 1.0]).is_err());
        assert!(influential_score(&[0.5; 3]).is_err());
    }
}
