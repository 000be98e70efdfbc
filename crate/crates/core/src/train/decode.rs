//! Greedy transducer decoding.

use rand::SeedableRng;

use crate::autodiff::Tape;
use crate::encoder::{CSiamModel, Ctx, Mode};
use crate::error::Result;
use crate::frontend::FeatureSequence;
use crate::rng::Rng as ChaRng;
use crate::scalar::Scalar;

/// Termination guards for [`greedy_decode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeLimits {
    pub max_symbols_per_frame: usize,
    pub max_len: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        Self {
            max_symbols_per_frame: 4,
            max_len: 256,
        }
    }
}

/// At each encoder frame, emit the argmax label while it is not blank
/// (at most `max_symbols_per_frame` times), then advance.
pub fn greedy_decode<S: Scalar>(
    model: &CSiamModel<S>,
    x: &FeatureSequence<S>,
    limits: &DecodeLimits,
) -> Result<Vec<usize>> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params, Mode::Eval, ChaRng::seed_from_u64(0));
    let top = model.encode_audio(&ctx, x)?.top;
    let frames = top.shape()[0];
    let mut out = Vec::new();
    for t in 0..frames {
        let a = top.slice_rows(t, t + 1)?;
        for _ in 0..limits.max_symbols_per_frame {
            if out.len() >= limits.max_len {
                return Ok(out);
            }
            let l = model.encode_labels(&ctx, &out)?;
            let last = l.shape()[0] - 1;
            let logits = model
                .joint
                .joint_logits(&ctx, a, l.slice_rows(last, last + 1)?)?
                .value();
            let best = argmax(&logits);
            if best == model.blank() {
                break;
            }
            out.push(best);
        }
    }
    Ok(out)
}

fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::tensor::Tensor;

    fn small() -> CSiamModel<f64> {
        let mut cfg = ModelConfig::default();
        cfg.encoder.n_blocks = 1;
        cfg.encoder.d_model = 16;
        cfg.encoder.d_ff = 16;
        cfg.encoder.input_dim = 4;
        cfg.label_encoder.d_model = 16;
        cfg.label_encoder.d_ff = 16;
        cfg.label_encoder.vocab_size = 5;
        cfg.predictor.n_blocks = 1;
        cfg.joint.d_joint = 8;
        CSiamModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn blank_dominant_joint_emits_nothing() {
        let mut m = small();
        let b = m.joint.output.b;
        let bias = &mut m.params.get_mut(b).tensor;
        bias.data_mut()[0] = 1e3;
        let x =
            FeatureSequence::new(Tensor::from_fn(&[20, 4], |k| (k as f64 * 0.37).sin())).unwrap();
        assert!(greedy_decode(&m, &x, &DecodeLimits::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn output_respects_length_cap() {
        let mut m = small();
        let b = m.joint.output.b;
        m.params.get_mut(b).tensor.data_mut()[2] = 1e3;
        let x =
            FeatureSequence::new(Tensor::from_fn(&[40, 4], |k| (k as f64 * 0.11).cos())).unwrap();
        let limits = DecodeLimits {
            max_symbols_per_frame: 3,
            max_len: 7,
        };
        let out = greedy_decode(&m, &x, &limits).unwrap();
        assert_eq!(out, vec![2; 7]);
    }
}
