//! Layer-wise linear-separability diagnostic: a small classifier (two dense
//! layers and a softmax) is trained on the frozen activations of each
//! encoder layer to predict frame labels.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape};
use crate::encoder::{Ctx, EncoderActivations, Linear, Mode};
use crate::error::{Error, Result};
use crate::frontend::FrameLabels;
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::train::{adam_update, AdamHyper, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub train_steps: usize,
    pub lr: f64,
    pub batch_frames: usize,
    /// Layers to probe; `None` probes every layer.
    pub layer_indices: Option<Vec<usize>>,
    /// Trailing fraction of utterances held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            num_classes: 8,
            train_steps: 2000,
            lr: 1e-3,
            batch_frames: 256,
            layer_indices: None,
            val_fraction: 0.2,
            seed: 11,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_classes < 2 || self.batch_frames == 0 {
            return Err(Error::Config("probe dimensions must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(
                "probe lr must be > 0 and val_fraction in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: usize,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerAccuracyTable {
    pub rows: Vec<LayerAccuracy>,
}

impl LayerAccuracyTable {
    pub fn layer(&self, layer: usize) -> Option<&LayerAccuracy> {
        self.rows.iter().find(|r| r.layer == layer)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.layer);
        writeln!(w, "layer,train_acc,val_acc")?;
        for r in rows {
            writeln!(w, "{},{:.4},{:.4}", r.layer, r.train_acc, r.val_acc)?;
        }
        Ok(())
    }
}

/// Writes the accuracy-versus-layer CSV.
pub fn emit_curve(table: &LayerAccuracyTable, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Majority label of each `stride`-frame window; ties go to the label seen
/// first in the window.
pub fn majority_pool(labels: &FrameLabels, stride: usize) -> Vec<usize> {
    labels
        .labels
        .chunks(stride.max(1))
        .map(|w| {
            let mut best = (w[0], 0);
            for (i, &l) in w.iter().enumerate() {
                if w[..i].contains(&l) {
                    continue;
                }
                let c = w.iter().filter(|&&x| x == l).count();
                if c > best.1 {
                    best = (l, c);
                }
            }
            best.0
        })
        .collect()
}

/// Activations of one utterance with its frame-rate labels.
#[derive(Debug, Clone)]
pub struct ProbeExample {
    pub acts: EncoderActivations<f32>,
    pub labels: FrameLabels,
}

struct LayerData {
    x: Vec<Vec<f32>>,
    y: Vec<usize>,
}

impl LayerData {
    fn tensor(&self, idx: &[usize]) -> Tensor<f32> {
        let d = self.x[0].len();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.x[i]);
        }
        Tensor::new(vec![idx.len(), d], data).expect("consistent rows")
    }
}

/// Trains one classifier per probed layer on the training utterances and
/// reports frame accuracy on both splits. Activations are plain tensors,
/// so no gradient can reach the encoder.
pub fn train_probe(
    examples: &[ProbeExample],
    stride: usize,
    cfg: &ProbeConfig,
) -> Result<LayerAccuracyTable> {
    cfg.validate()?;
    let first = examples
        .first()
        .ok_or_else(|| Error::Config("no probe examples".into()))?;
    let n_layers = first.acts.layers.len();
    let mut pooled = Vec::with_capacity(examples.len());
    for ex in examples {
        let y = majority_pool(&ex.labels, stride);
        if ex.acts.layers.len() != n_layers {
            return Err(Error::Config("examples disagree on layer count".into()));
        }
        for l in &ex.acts.layers {
            if l.rows() != y.len() {
                return Err(Error::ShapeMismatch {
                    op: "train_probe",
                    left: l.shape().to_vec(),
                    right: vec![y.len()],
                });
            }
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= cfg.num_classes) {
            return Err(Error::OutOfRange {
                index: bad,
                len: cfg.num_classes,
            });
        }
        pooled.push(y);
    }
    let layers: Vec<usize> = match &cfg.layer_indices {
        Some(v) => {
            if let Some(&bad) = v.iter().find(|&&l| l >= n_layers) {
                return Err(Error::OutOfRange {
                    index: bad,
                    len: n_layers,
                });
            }
            v.clone()
        }
        None => (0..n_layers).collect(),
    };
    let n_val = ((examples.len() as f64) * cfg.val_fraction).round() as usize;
    let n_train = examples.len() - n_val.min(examples.len() - 1);

    let split = |layer: usize, range: std::ops::Range<usize>| -> LayerData {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in range {
            let a = &examples[i].acts.layers[layer];
            for (t, &c) in pooled[i].iter().enumerate() {
                x.push(a.row(t).to_vec());
                y.push(c);
            }
        }
        LayerData { x, y }
    };

    let mut rows = layers
        .par_iter()
        .map(|&layer| {
            let train = split(layer, 0..n_train);
            let val = split(layer, n_train..examples.len());
            let (train_acc, val_acc) = fit_layer(&train, &val, layer, cfg)?;
            Ok(LayerAccuracy {
                layer,
                train_acc,
                val_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.layer);
    Ok(LayerAccuracyTable { rows })
}

fn fit_layer(
    train: &LayerData,
    val: &LayerData,
    layer: usize,
    cfg: &ProbeConfig,
) -> Result<(f64, f64)> {
    let d = train.x[0].len();
    let mut rng = rng_for(cfg.seed, &[layer as u64]);
    let mut ps = ParamSet::<f32>::new();
    let l1 = Linear::new(&mut ps, "probe.l1", d, cfg.hidden_dim, &mut rng)?;
    let l2 = Linear::new(
        &mut ps,
        "probe.l2",
        cfg.hidden_dim,
        cfg.num_classes,
        &mut rng,
    )?;
    let mut adam = AdamState::zeros_like(&ps);
    let hyper = AdamHyper {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let n = train.y.len();
    let b = cfg.batch_frames.min(n);
    for step in 1..=cfg.train_steps {
        let idx = sample(&mut rng, n, b).into_vec();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &ps, Mode::Eval, rng_for(0, &[]));
        let x = tape.constant(train.tensor(&idx));
        let logits = l2.forward(&ctx, l1.forward(&ctx, x)?.relu())?;
        let flat: Vec<usize> = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| r * cfg.num_classes + train.y[i])
            .collect();
        let loss = logits.log_softmax().gather_flat(&flat, &[b])?.mean().neg();
        let grads = tape.backward(loss)?.param_grads(&ps);
        adam_update(&mut ps, &mut adam, &grads, step as u64, &hyper)?;
    }
    let accuracy = |data: &LayerData| -> Result<f64> {
        if data.y.is_empty() {
            return Ok(0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &ps, Mode::Eval, rng_for(0, &[]));
        let all: Vec<usize> = (0..data.y.len()).collect();
        let logits = l2
            .forward(
                &ctx,
                l1.forward(&ctx, tape.constant(data.tensor(&all)))?.relu(),
            )?
            .tensor();
        let hits = (0..data.y.len())
            .filter(|&r| {
                let row = logits.row(r);
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                best == data.y[r]
            })
            .count();
        Ok(hits as f64 / data.y.len() as f64)
    };
    Ok((accuracy(train)?, accuracy(val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_pool_breaks_ties_toward_earlier_label() {
        let l = FrameLabels::new(vec![1, 2, 2, 1, 3, 3, 3, 0, 0, 1], 4).unwrap();
        assert_eq!(majority_pool(&l, 4), vec![1, 3, 0]);
        let l = FrameLabels::new(vec![2, 1, 1, 2], 4).unwrap();
        assert_eq!(majority_pool(&l, 4), vec![2]);
    }

    #[test]
    fn csv_format_and_empty_table() {
        let table = LayerAccuracyTable {
            rows: (0..5)
                .rev()
                .map(|layer| LayerAccuracy {
                    layer,
                    train_acc: 0.123456,
                    val_acc: 1.0,
                })
                .collect(),
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "layer,train_acc,val_acc");
        assert_eq!(lines[1], "0,0.1235,1.0000");
        assert!(LayerAccuracyTable::default().write_csv(Vec::new()).is_err());
    }
}
