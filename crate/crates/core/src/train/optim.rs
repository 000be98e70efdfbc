//! Learning-rate schedule, gradient clipping, variational noise and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

/// Linear warm-up from 0 to `peak_lr` over `warmup_steps`, then exponential
/// decay reaching `final_lr` at `decay_end_step`, constant afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    let e = cfg.decay_end_step as f64;
    if s <= w {
        if w == 0.0 {
            return cfg.peak_lr;
        }
        cfg.peak_lr * s / w
    } else if s < e {
        cfg.peak_lr * (cfg.final_lr / cfg.peak_lr).powf((s - w) / (e - w))
    } else {
        cfg.final_lr
    }
}

pub fn global_norm<S: Scalar>(grads: &[Tensor<S>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `limit`. Returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], limit: f64) -> Result<f64> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    if norm > limit {
        let k = S::of(limit / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(norm)
}

/// Copy of `params` with `N(0, std²)` added to every weight matrix once
/// `step ≥ start_step`; biases and norm parameters are left untouched.
pub fn add_variational_noise<S: Scalar>(
    params: &ParamSet<S>,
    std: f64,
    step: u64,
    start_step: u64,
    rng: &mut impl Rng,
) -> Result<ParamSet<S>> {
    let mut out = params.clone();
    if std <= 0.0 || step < start_step {
        return Ok(out);
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    for p in out
        .iter_mut()
        .filter(|p| p.kind == ParamKind::Weight && p.trainable)
    {
        p.tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += S::of(normal.sample(rng)));
    }
    Ok(out)
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        let z: Vec<_> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
            .collect();
        Self { m: z.clone(), v: z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to weight matrices only.
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn from_config(cfg: &TrainConfig, lr: f64) -> Self {
        Self {
            lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.l2_weight,
        }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based update count.
pub fn adam_update<S: Scalar>(
    params: &mut ParamSet<S>,
    state: &mut AdamState<S>,
    grads: &[Tensor<S>],
    t: u64,
    h: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config(
            "gradient, moment and parameter counts differ".into(),
        ));
    }
    let c1 = 1.0 - h.beta1.powf(t as f64);
    let c2 = 1.0 - h.beta2.powf(t as f64);
    let (b1, b2) = (S::of(h.beta1), S::of(h.beta2));
    let (one_b1, one_b2) = (S::of(1.0 - h.beta1), S::of(1.0 - h.beta2));
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let decay = if p.kind == ParamKind::Weight {
            h.weight_decay
        } else {
            0.0
        };
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + one_b1 * g[k];
            v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
            let mh = m[k].to_f64_lossy() / c1;
            let vh = v[k].to_f64_lossy() / c2;
            let wf = w.to_f64_lossy();
            *w = S::of(wf - h.lr * (mh / (vh.sqrt() + h.eps) + decay * wf));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn schedule_hits_published_values() {
        let cfg = TrainConfig::full_scale();
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert!((lr_at(5_000, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_at(10_000, &cfg) - 2e-3).abs() < 1e-15);
        assert!((lr_at(200_000, &cfg) - 2.5e-6).abs() < 1e-15);
        assert_eq!(lr_at(300_000, &cfg), 2.5e-6);
        // geometric midpoint of the decay phase
        let mid = lr_at(105_000, &cfg);
        assert!((mid - (2e-3f64 * 2.5e-6).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_continuous_at_boundaries() {
        let cfg = TrainConfig::full_scale();
        let decay = |s: f64| {
            let (w, e) = (cfg.warmup_steps as f64, cfg.decay_end_step as f64);
            cfg.peak_lr * (cfg.final_lr / cfg.peak_lr).powf((s - w) / (e - w))
        };
        let w = lr_at(cfg.warmup_steps, &cfg);
        assert!((w - decay(cfg.warmup_steps as f64)).abs() / w < 1e-12);
        let e = lr_at(cfg.decay_end_step, &cfg);
        assert!((e - cfg.final_lr).abs() / e < 1e-12);
    }

    #[test]
    fn zero_gradient_moves_only_by_decay() {
        let mut ps = ParamSet::<f64>::new();
        ps.add(
            "w",
            Tensor::new(vec![2], vec![2.0, -1.0]).unwrap(),
            ParamKind::Weight,
        )
        .unwrap();
        ps.add(
            "b",
            Tensor::new(vec![1], vec![3.0]).unwrap(),
            ParamKind::Bias,
        )
        .unwrap();
        let mut st = AdamState::zeros_like(&ps);
        let g = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        let h = AdamHyper {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.5,
        };
        adam_update(&mut ps, &mut st, &g, 1, &h).unwrap();
        assert_eq!(
            ps.get(ps.id_of("w").unwrap()).tensor.data(),
            &[2.0 * 0.95, -0.95]
        );
        assert_eq!(ps.get(ps.id_of("b").unwrap()).tensor.data(), &[3.0]);
    }

    #[test]
    fn clipping_rescales_only_above_limit() {
        let mut g = vec![Tensor::<f64>::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0).unwrap(), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut bad = vec![Tensor::<f64>::new(vec![1], vec![f64::NAN]).unwrap()];
        assert!(clip_global_norm(&mut bad, 1.0).is_err());
    }

    #[test]
    fn noise_touches_weights_only_after_start() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Tensor::zeros(&[3, 3]), ParamKind::Weight)
            .unwrap();
        ps.add("b", Tensor::zeros(&[3]), ParamKind::Bias).unwrap();
        let mut rng = rng_for(1, &[]);
        let before = add_variational_noise(&ps, 0.1, 10, 20, &mut rng).unwrap();
        assert_eq!(before.checksum(), ps.checksum());
        let after = add_variational_noise(&ps, 0.1, 20, 20, &mut rng).unwrap();
        let (w, b) = (ps.id_of("w").unwrap(), ps.id_of("b").unwrap());
        assert!(after.get(w).tensor.data().iter().any(|&v| v != 0.0));
        assert!(after.get(b).tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        ps.add(
            "w",
            Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(),
            ParamKind::Weight,
        )
        .unwrap();
        let mut st = AdamState::zeros_like(&ps);
        let g = vec![Tensor::new(vec![2], vec![0.5, -2.0]).unwrap()];
        let h = AdamHyper {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.0,
        };
        adam_update(&mut ps, &mut st, &g, 1, &h).unwrap();
        let w = ps.get(ps.id_of("w").unwrap()).tensor.data().to_vec();
        assert!((w[0] - 0.99).abs() < 1e-8 && (w[1] - 1.01).abs() < 1e-8);
    }
}
