//! Transducer loss: `−log P(y | x)` summed over every monotonic
//! blank/label alignment through the `T × (U+1)` lattice, in log space.

use crate::autodiff::{log_sum_exp, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of a logit lattice: `frames × (labels.len() + 1)` rows of
/// vocabulary logits, row index `t·(U+1) + u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnntLattice {
    pub frames: usize,
    pub labels: Vec<usize>,
    pub blank: usize,
}

fn lae<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl RnntLattice {
    fn validate(&self, shape: &[usize]) -> Result<usize> {
        let u1 = self.labels.len() + 1;
        let vocab = shape.last().copied().unwrap_or(0);
        if self.frames == 0 {
            return Err(Error::Config(format!(
                "transducer lattice needs at least one frame (U = {})",
                self.labels.len()
            )));
        }
        if shape.iter().product::<usize>() != self.frames * u1 * vocab {
            return Err(Error::ShapeMismatch {
                op: "rnnt_loss",
                left: shape.to_vec(),
                right: vec![self.frames, u1, vocab],
            });
        }
        if vocab < 2 || self.blank >= vocab {
            return Err(Error::Config(format!(
                "need V > 1 and blank < V, got V = {vocab}"
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= vocab || l == self.blank) {
            return Err(Error::OutOfRange {
                index: bad,
                len: vocab,
            });
        }
        Ok(vocab)
    }
}

/// Negative log-likelihood of `lattice.labels` under the logits (before
/// softmax). Forward variables give the value; forward and backward
/// variables together give the exact gradient, recorded as one fused node.
pub fn rnnt_loss<'t, S: Scalar>(logits: Var<'t, S>, lattice: &RnntLattice) -> Result<Var<'t, S>> {
    let shape = logits.shape();
    let vocab = lattice.validate(&shape)?;
    let z = logits.value();
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("rnnt logits"));
    }
    let t_len = lattice.frames;
    let u_len = lattice.labels.len();
    let u1 = u_len + 1;
    let blank = lattice.blank;
    let labels = lattice.labels.clone();

    // log-softmax per lattice node
    let mut logp = vec![S::zero(); z.len()];
    for r in 0..t_len * u1 {
        let row = &z[r * vocab..(r + 1) * vocab];
        let lse = log_sum_exp(row);
        for k in 0..vocab {
            logp[r * vocab + k] = row[k] - lse;
        }
    }
    let at = |t: usize, u: usize| t * u1 + u;
    let lblank = |t: usize, u: usize| logp[at(t, u) * vocab + blank];
    let lemit = |t: usize, u: usize| logp[at(t, u) * vocab + labels[u]];

    let ninf = S::neg_infinity();
    let mut alpha = vec![ninf; t_len * u1];
    for t in 0..t_len {
        for u in 0..u1 {
            alpha[at(t, u)] = if t == 0 && u == 0 {
                S::zero()
            } else {
                let from_t = if t > 0 {
                    alpha[at(t - 1, u)] + lblank(t - 1, u)
                } else {
                    ninf
                };
                let from_u = if u > 0 {
                    alpha[at(t, u - 1)] + lemit(t, u - 1)
                } else {
                    ninf
                };
                lae(from_t, from_u)
            };
        }
    }
    let log_p = alpha[at(t_len - 1, u_len)] + lblank(t_len - 1, u_len);

    let mut beta = vec![ninf; t_len * u1];
    for t in (0..t_len).rev() {
        for u in (0..u1).rev() {
            beta[at(t, u)] = if t == t_len - 1 && u == u_len {
                lblank(t, u)
            } else {
                let via_blank = if t + 1 < t_len {
                    beta[at(t + 1, u)] + lblank(t, u)
                } else {
                    ninf
                };
                let via_emit = if u < u_len {
                    beta[at(t, u + 1)] + lemit(t, u)
                } else {
                    ninf
                };
                lae(via_blank, via_emit)
            };
        }
    }

    // d(−log P)/d z = softmax · occupancy − transition posterior
    let mut grad = vec![S::zero(); z.len()];
    if log_p.is_finite() {
        for t in 0..t_len {
            for u in 0..u1 {
                let node = at(t, u);
                let occ = (alpha[node] + beta[node] - log_p).exp();
                let base = node * vocab;
                for k in 0..vocab {
                    grad[base + k] = logp[base + k].exp() * occ;
                }
                let next_blank = if t + 1 < t_len {
                    beta[at(t + 1, u)]
                } else if u == u_len {
                    S::zero()
                } else {
                    ninf
                };
                grad[base + blank] -= (alpha[node] + lblank(t, u) + next_blank - log_p).exp();
                if u < u_len {
                    grad[base + labels[u]] -=
                        (alpha[node] + lemit(t, u) + beta[at(t, u + 1)] - log_p).exp();
                }
            }
        }
    }

    let id = logits.id();
    Ok(logits.tape().push(
        vec![],
        vec![-log_p],
        Some(Box::new(move |g, sink| {
            let g0 = g[0];
            for (d, &v) in sink.slot(id).iter_mut().zip(&grad) {
                *d += g0 * v;
            }
        })),
    ))
}
