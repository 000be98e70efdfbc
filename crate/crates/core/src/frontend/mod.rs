//! Feature sequences and their sources: synthetic symbol streams (the main
//! data path) and PCM16 WAV files through a log-mel filterbank.

mod features_io;
mod mel;
mod synthetic;
mod wav;

pub use features_io::{read_features, write_features, CSFT_MAGIC, CSFT_VERSION};
pub use mel::{hz_to_mel, log_mel, mel_center_frequencies, mel_to_hz, MelConfig};
pub use synthetic::{gen_synthetic, SyntheticCorpus, SyntheticCorpusSpec, SyntheticUtterance};
pub use wav::{load_wav, parse_wav, save_wav, wav_bytes, Waveform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `T × D` frame matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<S> {
    frames: Tensor<S>,
    pub frame_shift_ms: f64,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(frames: Tensor<S>) -> Result<Self> {
        Self::with_shift(frames, 10.0)
    }

    pub fn with_shift(frames: Tensor<S>, frame_shift_ms: f64) -> Result<Self> {
        if frames.rank() != 2 || frames.shape()[0] == 0 {
            return Err(Error::InvalidTensor(format!(
                "feature sequence must be T×D with T ≥ 1, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("feature sequence"));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
        })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, t: usize) -> &[S] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Tensor<S> {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut Tensor<S> {
        &mut self.frames
    }

    pub fn into_frames(self) -> Tensor<S> {
        self.frames
    }

    pub fn cast<T: Scalar>(&self) -> FeatureSequence<T> {
        FeatureSequence {
            frames: self.frames.cast(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}

/// Per-frame class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FrameLabels {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::OutOfRange {
                index: bad,
                len: num_classes,
            });
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
