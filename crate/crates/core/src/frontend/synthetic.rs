//! Synthetic symbol-stream corpora.
//!
//! Each class owns a fixed random prototype vector. An utterance is a
//! sequence of symbols (no immediate repeats), each held for a random number
//! of frames, with optional additive Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, FrameLabels};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Utterance length in frames, inclusive range.
    pub utterance_length_range: (usize, usize),
    pub frames_per_symbol_range: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            dim: 16,
            utterance_length_range: (48, 80),
            frames_per_symbol_range: (4, 10),
            noise_std: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.utterance_length_range;
        let (flo, fhi) = self.frames_per_symbol_range;
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be ≥ 2".into()));
        }
        if self.dim == 0 || lo == 0 || lo > hi || flo == 0 || flo > fhi {
            return Err(Error::Config(
                "synthetic lengths and dim must be ≥ 1 with lo ≤ hi".into(),
            ));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be ≥ 0".into()));
        }
        Ok(())
    }

    /// The class prototypes fixed by `seed`, one row per class.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = rng_for(self.seed, &[0x5052_4f54]);
        (0..self.num_classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance<S> {
    pub features: FeatureSequence<S>,
    pub labels: FrameLabels,
    /// The generating symbol sequence (the transcript).
    pub symbols: Vec<usize>,
}

/// Draws one utterance. Prototypes come from `spec.seed`; durations, symbol
/// choices and noise come from `rng`.
pub fn gen_synthetic<S: Scalar>(
    spec: &SyntheticCorpusSpec,
    rng: &mut impl Rng,
) -> Result<SyntheticUtterance<S>> {
    spec.validate()?;
    generate(spec, &spec.prototypes(), rng)
}

fn generate<S: Scalar>(
    spec: &SyntheticCorpusSpec,
    prototypes: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<SyntheticUtterance<S>> {
    let (lo, hi) = spec.utterance_length_range;
    let (flo, fhi) = spec.frames_per_symbol_range;
    let total = rng.random_range(lo..=hi);
    let mut labels = Vec::with_capacity(total);
    let mut symbols = Vec::new();
    while labels.len() < total {
        let sym = loop {
            let s = rng.random_range(0..spec.num_classes);
            if symbols.last() != Some(&s) {
                break s;
            }
        };
        let dur = rng.random_range(flo..=fhi).min(total - labels.len());
        symbols.push(sym);
        labels.extend(std::iter::repeat_n(sym, dur));
    }
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(total * spec.dim);
    for &l in &labels {
        for &p in &prototypes[l] {
            let n = if spec.noise_std > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            data.push(S::of(p + n));
        }
    }
    Ok(SyntheticUtterance {
        features: FeatureSequence::new(Tensor::new(vec![total, spec.dim], data)?)?,
        labels: FrameLabels::new(labels, spec.num_classes)?,
        symbols,
    })
}

/// A deterministic, indexable synthetic corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticCorpusSpec,
    prototypes: Vec<Vec<f64>>,
}

impl SyntheticCorpus {
    pub fn new(spec: SyntheticCorpusSpec) -> Result<Self> {
        spec.validate()?;
        let prototypes = spec.prototypes();
        Ok(Self { spec, prototypes })
    }

    /// Utterance `index`; stable across calls and threads.
    pub fn utterance<S: Scalar>(&self, index: u64) -> SyntheticUtterance<S> {
        let mut rng = rng_for(self.spec.seed, &[1, index]);
        generate(&self.spec, &self.prototypes, &mut rng).expect("validated spec")
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }
}
