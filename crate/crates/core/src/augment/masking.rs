use rand::Rng;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::scalar::Scalar;

/// Contiguous masked spans over `len` frames. Spans may overlap; the masked
/// set is their union.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    len: usize,
    spans: Vec<(usize, usize)>,
}

impl MaskPlan {
    pub fn new(len: usize, spans: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(s, l)) = spans.iter().find(|&&(s, l)| s + l > len) {
            return Err(Error::OutOfRange { index: s + l, len });
        }
        Ok(Self { len, spans })
    }

    pub fn empty(len: usize) -> Self {
        Self {
            len,
            spans: Vec::new(),
        }
    }

    pub fn full(len: usize) -> Self {
        Self {
            len,
            spans: vec![(0, len)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.spans.iter().all(|&(_, l)| l == 0)
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn masked(&self) -> Vec<bool> {
        let mut m = vec![false; self.len];
        for &(s, l) in &self.spans {
            m[s..s + l].iter_mut().for_each(|v| *v = true);
        }
        m
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked()
            .into_iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        self.masked().iter().filter(|&&m| m).count() as f64 / self.len as f64
    }

    /// Masked flags at a coarser resolution: output frame `j` covers input
    /// frames `j·stride .. (j+1)·stride` and counts as masked when at least
    /// half of the covered frames are.
    pub fn downsampled(&self, stride: usize, len_ds: usize) -> Vec<bool> {
        let m = self.masked();
        (0..len_ds)
            .map(|j| {
                let lo = (j * stride).min(self.len);
                let hi = ((j + 1) * stride).min(self.len);
                let hit = m[lo..hi].iter().filter(|&&v| v).count();
                hi > lo && 2 * hit >= hi - lo
            })
            .collect()
    }
}

/// Every frame independently starts a span with probability `p`; a span
/// covers `start .. min(start + span, len)`.
pub fn sample_masks(rng: &mut impl Rng, len: usize, p: f64, span: usize) -> MaskPlan {
    let spans = (0..len)
        .filter(|_| rng.random::<f64>() < p)
        .map(|s| (s, span.min(len - s)))
        .collect();
    MaskPlan { len, spans }
}

/// Zeroes every masked frame.
pub fn apply_masks<S: Scalar>(
    x: &FeatureSequence<S>,
    plan: &MaskPlan,
) -> Result<FeatureSequence<S>> {
    if plan.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_masks",
            left: vec![x.len(), x.dim()],
            right: vec![plan.len()],
        });
    }
    let mut y = x.clone();
    let d = x.dim();
    let data = y.frames_mut().data_mut();
    for (t, m) in plan.masked().into_iter().enumerate() {
        if m {
            data[t * d..(t + 1) * d]
                .iter_mut()
                .for_each(|v| *v = S::zero());
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng as ChaRng;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn ramp(t: usize) -> FeatureSequence<f32> {
        FeatureSequence::new(Tensor::from_fn(&[t, 2], |i| i as f32 + 1.0)).unwrap()
    }

    #[test]
    fn extreme_probabilities() {
        let mut rng = ChaRng::seed_from_u64(0);
        assert!(sample_masks(&mut rng, 50, 0.0, 28)
            .masked_indices()
            .is_empty());
        assert_eq!(
            sample_masks(&mut rng, 10, 1.0, 28).masked_indices(),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn apply_plans() {
        let x = ramp(10);
        assert_eq!(apply_masks(&x, &MaskPlan::empty(10)).unwrap(), x);
        assert!(apply_masks(&x, &MaskPlan::full(10))
            .unwrap()
            .frames()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let y = apply_masks(&x, &MaskPlan::new(10, vec![(2, 3)]).unwrap()).unwrap();
        for t in 0..10 {
            let zero = (2..5).contains(&t);
            assert_eq!(y.frame(t).iter().all(|&v| v == 0.0), zero);
            if !zero {
                assert_eq!(y.frame(t), x.frame(t));
            }
        }
    }

    #[test]
    fn downsampled_coverage_rule() {
        let plan = MaskPlan::new(10, vec![(2, 3)]).unwrap();
        // windows [0,4) has 2/4 masked, [4,8) has 1/4, [8,10) 0/2
        assert_eq!(plan.downsampled(4, 3), vec![true, false, false]);
    }

    #[test]
    fn out_of_range_span_rejected() {
        assert!(MaskPlan::new(5, vec![(3, 3)]).is_err());
    }
}
