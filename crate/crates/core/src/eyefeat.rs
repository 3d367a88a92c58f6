//! Eye features and the neutral/non-neutral trigger that duty-cycles the
//! world camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::archive::TensorArchive;
use crate::domain::{EyeSample, FeatureSource};
use crate::error::{Error, Result};
use crate::linalg::{affine, softmax};

pub const TRIGGER_W: &str = "trigger.W";
pub const TRIGGER_B: &str = "trigger.b";
pub const EXTRACTOR_W: &str = "extractor.W";
pub const EXTRACTOR_B: &str = "extractor.b";

/// `[f_e, pupil]`; the last two components are the pupil extents.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeFeature {
    pub t: u64,
    pub vector: Vec<f64>,
}

impl EyeFeature {
    pub fn pupil(&self) -> [f64; 2] {
        let n = self.vector.len();
        [self.vector[n - 2], self.vector[n - 1]]
    }
}

/// Produces the raw expression embedding `f_e` for an eye sample.
pub trait EyeFeatureExtractor {
    /// Output length, without the pupil channels.
    fn dim(&self) -> usize;
    fn embed(&self, sample: &EyeSample) -> Result<Vec<f64>>;
}

/// Returns the precomputed embedding stored with the sample.
#[derive(Debug, Clone)]
pub struct PassthroughExtractor {
    pub dim: usize,
}

impl EyeFeatureExtractor for PassthroughExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sample: &EyeSample) -> Result<Vec<f64>> {
        match &sample.source {
            FeatureSource::Vector(v) if v.len() == self.dim => Ok(v.clone()),
            FeatureSource::Vector(v) => Err(Error::Data(format!(
                "eye feature at t={} has length {}, expected {}",
                sample.t,
                v.len(),
                self.dim
            ))),
            FeatureSource::FrameRef(r) => Err(Error::Data(format!(
                "passthrough extractor needs a precomputed feature, t={} only has frame `{r}`",
                sample.t
            ))),
        }
    }
}

/// Deterministic pseudo-random embedding keyed by `(seed, frame reference)`.
#[derive(Debug, Clone)]
pub struct MockExtractor {
    pub dim: usize,
    pub seed: u64,
}

impl EyeFeatureExtractor for MockExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sample: &EyeSample) -> Result<Vec<f64>> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        match &sample.source {
            FeatureSource::FrameRef(r) => {
                hasher.update(b"ref:");
                hasher.update(r.as_bytes());
            }
            FeatureSource::Vector(v) => {
                hasher.update(b"vec:");
                for x in v {
                    hasher.update(x.to_bits().to_le_bytes());
                }
            }
        }
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Ok((0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }
}

/// One linear layer over the sample's stored embedding.
#[derive(Debug, Clone)]
pub struct LinearExtractor {
    dim: usize,
    input: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearExtractor {
    pub fn from_archive(archive: &TensorArchive, dim: usize) -> Result<Self> {
        let w = archive
            .get(EXTRACTOR_W)
            .ok_or_else(|| Error::Model(format!("tensor `{EXTRACTOR_W}` missing from archive")))?;
        let [rows, input] = w.shape[..] else {
            return Err(Error::Model(format!("`{EXTRACTOR_W}` must be 2-D")));
        };
        if rows != dim {
            return Err(Error::Model(format!("`{EXTRACTOR_W}` has {rows} rows, expected {dim}")));
        }
        let b = archive.require(EXTRACTOR_B, &[dim])?;
        Ok(Self {
            dim,
            input,
            weight: w.data.iter().map(|v| f64::from(*v)).collect(),
            bias: b.data.iter().map(|v| f64::from(*v)).collect(),
        })
    }
}

impl EyeFeatureExtractor for LinearExtractor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sample: &EyeSample) -> Result<Vec<f64>> {
        match &sample.source {
            FeatureSource::Vector(v) if v.len() == self.input => Ok(affine(&self.weight, &self.bias, v)),
            FeatureSource::Vector(v) => Err(Error::Data(format!(
                "stored embedding at t={} has length {}, linear extractor expects {}",
                sample.t,
                v.len(),
                self.input
            ))),
            FeatureSource::FrameRef(_) => Err(Error::Data(format!(
                "linear extractor needs a stored embedding at t={}",
                sample.t
            ))),
        }
    }
}

pub fn extract_eye_feature(sample: &EyeSample, extractor: &dyn EyeFeatureExtractor) -> Result<EyeFeature> {
    let mut vector = extractor.embed(sample)?;
    if vector.len() != extractor.dim() {
        return Err(Error::Data(format!(
            "extractor produced {} values, declared {}",
            vector.len(),
            extractor.dim()
        )));
    }
    vector.extend_from_slice(&sample.pupil);
    Ok(EyeFeature { t: sample.t, vector })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision {
    pub is_non_neutral: bool,
    pub p_non_neutral: f64,
}

/// Binary neutral / non-neutral classifier. Row 0 of the weight matrix is the
/// neutral logit, row 1 the non-neutral logit.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerModel {
    d_eye: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    theta: f64,
}

impl TriggerModel {
    pub fn new(weight: Vec<f64>, bias: Vec<f64>, theta: f64) -> Result<Self> {
        if bias.len() != 2 || weight.is_empty() || weight.len() % 2 != 0 {
            return Err(Error::Model("trigger weights must be 2 x d_eye with a 2-vector bias".into()));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Model(format!("trigger threshold {theta} outside (0,1)")));
        }
        Ok(Self {
            d_eye: weight.len() / 2,
            weight,
            bias,
            theta,
        })
    }

    pub fn from_archive(archive: &TensorArchive, d_eye: usize, theta: f64) -> Result<Self> {
        let w = archive.require(TRIGGER_W, &[2, d_eye])?;
        let b = archive.require(TRIGGER_B, &[2])?;
        Self::new(
            w.data.iter().map(|v| f64::from(*v)).collect(),
            b.data.iter().map(|v| f64::from(*v)).collect(),
            theta,
        )
    }

    pub fn write_to(&self, archive: &mut TensorArchive) -> Result<()> {
        archive.upsert(TRIGGER_W, &[2, self.d_eye], self.weight.iter().map(|v| *v as f32).collect())?;
        archive.upsert(TRIGGER_B, &[2], self.bias.iter().map(|v| *v as f32).collect())
    }

    pub fn d_eye(&self) -> usize {
        self.d_eye
    }

    /// `(p_neutral, p_non_neutral)`.
    pub fn probabilities(&self, feature: &EyeFeature) -> Result<[f64; 2]> {
        if feature.vector.len() != self.d_eye {
            return Err(Error::Model(format!(
                "trigger expects {} inputs, feature has {}",
                self.d_eye,
                feature.vector.len()
            )));
        }
        let p = softmax(&affine(&self.weight, &self.bias, &feature.vector));
        Ok([p[0], p[1]])
    }

    pub fn classify(&self, feature: &EyeFeature) -> Result<TriggerDecision> {
        let [_, p] = self.probabilities(feature)?;
        Ok(TriggerDecision {
            is_non_neutral: p >= self.theta,
            p_non_neutral: p,
        })
    }
}

pub fn classify_neutral(feature: &EyeFeature, model: &TriggerModel) -> Result<TriggerDecision> {
    model.classify(feature)
}
