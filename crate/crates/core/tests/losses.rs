use csiam_core::augment::{AlignmentMap, MaskPlan};
use csiam_core::autodiff::{grad_check, ParamKind, ParamSet, Tape};
use csiam_core::encoder::{Ctx, Mode};
use csiam_core::losses::{
    contrastive_loss_pairs, retrieval_accuracy, rnnt_loss, sample_pairs, total_loss,
    ContrastiveBatch, ContrastivePairs, JointConfig, JointNetwork, LossWeights, RnntLattice,
};
use csiam_core::rng::rng_for;
use csiam_core::Tensor64;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: &[usize], seed: u64) -> Tensor64 {
    let mut rng = rng_for(seed, &[]);
    Tensor64::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

fn closed_form_pair(tau: f64) -> f64 {
    let tape = Tape::<f64>::new();
    let aug = tape.input(Tensor64::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let tgt = tape.input(Tensor64::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let pairs = ContrastivePairs {
        anchors: vec![0],
        candidates: vec![vec![0, 1]],
    };
    contrastive_loss_pairs(aug, tgt, &pairs, tau)
        .unwrap()
        .item()
}

#[test]
fn contrastive_closed_form_point() {
    let want = (1.0 + (-1.0f64).exp()).ln();
    assert!((closed_form_pair(1.0) - want).abs() < 1e-12);
    assert!((closed_form_pair(1.0) - 0.313262).abs() < 1e-6);
    // sharper temperature: log(1 + e^{−10})
    assert!((closed_form_pair(0.1) - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn no_negatives_gives_zero_loss() {
    let tape = Tape::<f64>::new();
    let aug = tape.input(randn(&[3, 4], 1));
    let tgt = tape.input(randn(&[3, 4], 2));
    let pairs = ContrastivePairs {
        anchors: vec![0, 2],
        candidates: vec![vec![1], vec![2]],
    };
    assert!(
        contrastive_loss_pairs(aug, tgt, &pairs, 0.1)
            .unwrap()
            .item()
            .abs()
            < 1e-15
    );
}

#[test]
fn sampling_uses_masked_targets_only() {
    let plan = MaskPlan::new(40, vec![(8, 16)]).unwrap();
    let alignment = AlignmentMap::identity(10);
    let batch = ContrastiveBatch::from_mask(&plan, 4, alignment);
    assert_eq!(batch.anchors, vec![2, 3, 4, 5]);
    let pairs = sample_pairs(&batch, 32, &mut rng_for(3, &[])).unwrap();
    for (a, c) in pairs.anchors.iter().zip(&pairs.candidates) {
        assert_eq!(c[0], *a);
        assert_eq!(c.len(), 4);
        let mut rest = c[1..].to_vec();
        rest.sort();
        rest.dedup();
        assert_eq!(rest.len(), 3);
        assert!(rest.iter().all(|q| (2..6).contains(q) && q != a));
    }
    let empty = ContrastiveBatch::from_mask(&MaskPlan::empty(40), 4, AlignmentMap::identity(10));
    assert!(sample_pairs(&empty, 4, &mut rng_for(3, &[])).is_err());
}

#[test]
fn retrieval_counts_strict_wins() {
    let aug = Tensor64::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let tgt = Tensor64::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let pairs = ContrastivePairs {
        anchors: vec![0, 1],
        candidates: vec![vec![0, 1], vec![0, 1]],
    };
    assert_eq!(retrieval_accuracy(&aug, &tgt, &pairs), 0.5);
}

#[test]
fn total_loss_weights_the_contrastive_term() {
    let tape = Tape::<f64>::new();
    let r = tape.input(Tensor64::scalar(2.0));
    let c = tape.input(Tensor64::scalar(3.0));
    let w = LossWeights { lambda_unsup: 0.5 };
    assert_eq!(total_loss(r, c, &w).unwrap().item(), 3.5);
    assert_eq!(
        total_loss(r, c, &LossWeights { lambda_unsup: 0.0 })
            .unwrap()
            .item(),
        2.0
    );
    assert!(total_loss(r, c, &LossWeights { lambda_unsup: -1.0 }).is_err());
}

#[test]
fn zero_weight_joint_gives_uniform_logits() {
    let mut ps = ParamSet::<f64>::new();
    let joint = JointNetwork::new(
        &mut ps,
        "j",
        3,
        2,
        &JointConfig { d_joint: 4 },
        5,
        &mut rng_for(1, &[]),
    )
    .unwrap();
    for p in ps.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &ps, Mode::Eval, rng_for(0, &[]));
    let z = joint
        .joint_logits(
            &ctx,
            tape.input(randn(&[4, 3], 2)),
            tape.input(randn(&[3, 2], 3)),
        )
        .unwrap()
        .tensor();
    assert_eq!(z.shape(), &[12, 5]);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn joint_network_gradients() {
    let mut ps = ParamSet::<f64>::new();
    let joint = JointNetwork::new(
        &mut ps,
        "j",
        3,
        2,
        &JointConfig { d_joint: 4 },
        5,
        &mut rng_for(1, &[]),
    )
    .unwrap();
    ps.add("a", randn(&[3, 3], 4), ParamKind::Weight).unwrap();
    ps.add("l", randn(&[2, 2], 5), ParamKind::Weight).unwrap();
    let c = randn(&[6, 5], 6);
    let report = grad_check(
        |tape: &Tape<f64>, ps: &ParamSet<f64>| {
            let ctx = Ctx::new(tape, ps, Mode::Eval, rng_for(0, &[]));
            let a = tape.param(ps, ps.id_of("a")?);
            let l = tape.param(ps, ps.id_of("l")?);
            Ok(joint
                .joint_logits(&ctx, a, l)?
                .mul(tape.constant(c.clone()))?
                .sum())
        },
        &ps,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

/// −log Σ over every blank/label path, by explicit enumeration.
fn brute_force_rnnt(z: &Tensor64, t_len: usize, labels: &[usize], blank: usize) -> f64 {
    let u1 = labels.len() + 1;
    let logp = |t: usize, u: usize, k: usize| {
        let row = z.row(t * u1 + u);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row[k] - lse
    };
    let mut paths = Vec::new();
    let mut stack = vec![(0usize, 0usize, 0.0f64)];
    while let Some((t, u, acc)) = stack.pop() {
        if t == t_len - 1 && u == labels.len() {
            paths.push(acc + logp(t, u, blank));
            continue;
        }
        if u < labels.len() {
            stack.push((t, u + 1, acc + logp(t, u, labels[u])));
        }
        if t + 1 < t_len {
            stack.push((t + 1, u, acc + logp(t, u, blank)));
        }
    }
    let m = paths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    -(m + paths.iter().map(|p| (p - m).exp()).sum::<f64>().ln())
}

fn lattice_strategy() -> impl Strategy<Value = (usize, usize, Vec<usize>, u64)> {
    (1usize..=4, 2usize..=5).prop_flat_map(|(t, v)| {
        (
            Just(t),
            Just(v),
            prop::collection::vec(1..v, 0..=3),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rnnt_matches_path_enumeration((t, v, labels, seed) in lattice_strategy()) {
        let u1 = labels.len() + 1;
        let z = randn(&[t * u1, v], seed).map(|x| 2.0 * x);
        let tape = Tape::<f64>::new();
        let zin = tape.input(z.clone());
        let lat = RnntLattice { frames: t, labels: labels.clone(), blank: 0 };
        let loss = rnnt_loss(zin, &lat).unwrap();
        let want = brute_force_rnnt(&z, t, &labels, 0);
        prop_assert!((loss.item() - want).abs() / want.abs().max(1e-300) < 1e-8, "{} vs {}", loss.item(), want);
        let g = tape.backward(loss).unwrap().get(zin);
        for r in 0..t * u1 {
            prop_assert!(g.row(r).iter().sum::<f64>().abs() < 1e-8);
        }
    }

    #[test]
    fn rnnt_gradient_matches_finite_differences((t, v, labels, seed) in lattice_strategy()) {
        let u1 = labels.len() + 1;
        let mut ps = ParamSet::<f64>::new();
        ps.add("z", randn(&[t * u1, v], seed), ParamKind::Weight).unwrap();
        let lat = RnntLattice { frames: t, labels, blank: 0 };
        let report = grad_check(
            |tape: &Tape<f64>, ps: &ParamSet<f64>| rnnt_loss(tape.param(ps, ps.id_of("z")?), &lat),
            &ps,
            1e-6,
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{:?}", report);
    }

    #[test]
    fn contrastive_is_scale_invariant_per_row(seed in 0u64..500, k in 0.1f64..10.0) {
        let a = randn(&[4, 5], seed);
        let q = randn(&[6, 5], seed + 1);
        let pairs = ContrastivePairs {
            anchors: vec![0, 1, 3],
            candidates: vec![vec![2, 0, 5], vec![1, 4, 3], vec![5, 0, 1]],
        };
        let eval = |a: &Tensor64, q: &Tensor64| {
            let tape = Tape::<f64>::new();
            contrastive_loss_pairs(tape.input(a.clone()), tape.input(q.clone()), &pairs, 0.1).unwrap().item()
        };
        let base = eval(&a, &q);
        prop_assert!((eval(&a.map(|x| x * k), &q.map(|x| x * k)) - base).abs() < 1e-10);
    }

    #[test]
    fn contrastive_ignores_negative_order(seed in 0u64..500) {
        let a = randn(&[2, 4], seed);
        let q = randn(&[5, 4], seed + 7);
        let eval = |c: Vec<Vec<usize>>| {
            let tape = Tape::<f64>::new();
            let pairs = ContrastivePairs { anchors: vec![0, 1], candidates: c };
            contrastive_loss_pairs(tape.input(a.clone()), tape.input(q.clone()), &pairs, 0.5).unwrap().item()
        };
        let x = eval(vec![vec![0, 1, 2, 3], vec![4, 3, 2, 1]]);
        let y = eval(vec![vec![0, 3, 1, 2], vec![4, 1, 2, 3]]);
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn contrastive_bounded_when_positive_wins(seed in 0u64..500, n_neg in 1usize..6) {
        // positive identical to the anchor: cosine 1 beats every negative
        let a = randn(&[1, 6], seed);
        let mut q = randn(&[n_neg + 1, 6], seed + 3);
        q.data_mut()[..6].copy_from_slice(a.data());
        let tape = Tape::<f64>::new();
        let pairs = ContrastivePairs { anchors: vec![0], candidates: vec![(0..=n_neg).collect()] };
        let loss = contrastive_loss_pairs(tape.input(a), tape.input(q), &pairs, 1.0).unwrap().item();
        prop_assert!(loss >= 0.0 && loss <= ((n_neg + 1) as f64).ln() + 1e-12);
    }

    #[test]
    fn contrastive_gradients(seed in 0u64..100) {
        let mut ps = ParamSet::<f64>::new();
        ps.add("a", randn(&[3, 4], seed), ParamKind::Weight).unwrap();
        ps.add("q", randn(&[4, 4], seed + 1), ParamKind::Weight).unwrap();
        let pairs = ContrastivePairs {
            anchors: vec![0, 2],
            candidates: vec![vec![1, 0, 3], vec![2, 3, 1]],
        };
        let report = grad_check(
            |tape: &Tape<f64>, ps: &ParamSet<f64>| {
                let a = tape.param(ps, ps.id_of("a")?);
                let q = tape.param(ps, ps.id_of("q")?);
                contrastive_loss_pairs(a, q, &pairs, 0.2)
            },
            &ps,
            1e-6,
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{:?}", report);
    }
}
