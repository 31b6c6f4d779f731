//! Update deltas, the adaptive upload threshold, similarity-weighted
//! aggregation with minimum-weight protection, and the three baseline
//! aggregation rules.

use serde::{Deserialize, Serialize};

use super::{FlError, ModelState};
use crate::scalar::Scalar;

/// Tolerance on "weights sum to 1" for applied updates.
pub const WEIGHT_APPLY_TOL: f64 = 1e-9;

/// Adaptive upload threshold parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "UploadPolicy::default")]
pub struct UploadPolicy<T: Scalar> {
    /// Base threshold on the update norm.
    pub eps_base: T,
    /// How strongly low similarity raises the threshold.
    pub lambda_s: T,
}

impl<T: Scalar> Default for UploadPolicy<T> {
    fn default() -> Self {
        UploadPolicy {
            eps_base: T::from_f64_lossy(0.01),
            lambda_s: T::from_f64_lossy(1.0),
        }
    }
}

impl<T: Scalar> UploadPolicy<T> {
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.eps_base > T::zero()) {
            return Err(FlError::BadWeights(format!(
                "upload.eps_base must be positive, got {}",
                self.eps_base
            )));
        }
        if self.lambda_s < T::zero() {
            return Err(FlError::BadWeights(format!(
                "upload.lambda_s must be non-negative, got {}",
                self.lambda_s
            )));
        }
        Ok(())
    }
}

/// Elementwise difference `theta_local - theta_global` and its L2 norm.
pub fn update_delta<T: Scalar>(
    theta_local: &ModelState<T>,
    theta_global: &ModelState<T>,
) -> Result<(Vec<T>, T), FlError> {
    theta_local.check_same_arch(theta_global)?;
    let delta: Vec<T> = theta_local
        .params
        .iter()
        .zip(&theta_global.params)
        .map(|(&l, &g)| l - g)
        .collect();
    let norm = l2_norm(&delta);
    Ok((delta, norm))
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Per-node upload threshold: the base threshold inflated for dissimilar
/// nodes.
pub fn upload_threshold<T: Scalar>(p: &UploadPolicy<T>, sim: T) -> T {
    p.eps_base * (T::one() + p.lambda_s * (T::one() - sim))
}

/// Preliminary aggregation weight: similarity times update magnitude.
pub fn pre_weight<T: Scalar>(sim: T, norm: T) -> T {
    sim * norm
}

/// Normalize pre-weights, floor them at `w_min`, and renormalize.
///
/// When no normalized weight falls below the floor the plain normalization
/// is returned unchanged, so a disabled floor (`w_min = 0`) is exactly the
/// identity on normalized pre-weights.
pub fn protected_weights<T: Scalar>(pre: &[T], w_min: T) -> Result<Vec<T>, FlError> {
    assert!(!pre.is_empty(), "protected_weights needs at least one update");
    let n = pre.len();
    if w_min.to_f64_lossy() * n as f64 > 1.0 {
        return Err(FlError::InfeasibleFloor {
            w_min: w_min.to_f64_lossy(),
            n,
        });
    }
    let total: T = pre.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(FlError::AllZero);
    }
    let normalized: Vec<T> = pre.iter().map(|&w| w / total).collect();
    if normalized.iter().all(|&w| w >= w_min) {
        return Ok(normalized);
    }
    let floored: Vec<T> = normalized.iter().map(|&w| w.max(w_min)).collect();
    let floored_total: T = floored.iter().copied().sum();
    Ok(floored.iter().map(|&w| w / floored_total).collect())
}

/// Add the weighted deltas onto the global model. Weights must sum to 1.
pub fn apply_update<T: Scalar, D: AsRef<[T]>>(
    theta_global: &ModelState<T>,
    deltas: &[D],
    weights: &[T],
) -> Result<ModelState<T>, FlError> {
    if deltas.len() != weights.len() {
        return Err(FlError::BadWeights(format!(
            "{} deltas but {} weights",
            deltas.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().map(|w| w.to_f64_lossy()).sum();
    // 1e-9 at f64 working precision; scaled up for coarser scalars.
    let tol = WEIGHT_APPLY_TOL.max(T::epsilon().to_f64_lossy() * 32.0);
    if (sum - 1.0).abs() > tol {
        return Err(FlError::BadWeights(format!("weights sum to {sum}, not 1")));
    }
    let len = theta_global.params.len();
    let mut params = theta_global.params.clone();
    for (delta, &w) in deltas.iter().zip(weights) {
        let delta = delta.as_ref();
        if delta.len() != len {
            return Err(FlError::ArchMismatch(
                format!("delta of length {}", delta.len()),
                format!("model of length {len}"),
            ));
        }
        for (p, &d) in params.iter_mut().zip(delta) {
            *p = *p + w * d;
        }
    }
    Ok(ModelState {
        arch: theta_global.arch,
        params,
    })
}

/// Synchronous dataset-size-weighted parameter average.
pub fn fedavg_round<T: Scalar>(
    theta_global: &ModelState<T>,
    locals: &[(ModelState<T>, usize)],
) -> Result<ModelState<T>, FlError> {
    assert!(!locals.is_empty(), "fedavg_round needs at least one model");
    let total: usize = locals.iter().map(|&(_, n)| n).sum();
    let mut params = vec![T::zero(); theta_global.params.len()];
    for (m, n) in locals {
        theta_global.check_same_arch(m)?;
        let w = T::from_usize(*n).unwrap() / T::from_usize(total).unwrap();
        for (p, &q) in params.iter_mut().zip(&m.params) {
            *p = *p + w * q;
        }
    }
    Ok(ModelState {
        arch: theta_global.arch,
        params,
    })
}

/// Immediate asynchronous mix with polynomial staleness decay:
/// `alpha_t = alpha * (staleness + 1)^(-decay_a)`.
pub fn fedasync_update<T: Scalar>(
    theta_global: &ModelState<T>,
    theta_local: &ModelState<T>,
    alpha: T,
    staleness: u64,
    decay_a: T,
) -> Result<ModelState<T>, FlError> {
    theta_global.check_same_arch(theta_local)?;
    let age = T::from_u64(staleness + 1).unwrap();
    let alpha_t = alpha * age.powf(-decay_a);
    let params = theta_global
        .params
        .iter()
        .zip(&theta_local.params)
        .map(|(&g, &l)| (T::one() - alpha_t) * g + alpha_t * l)
        .collect();
    Ok(ModelState {
        arch: theta_global.arch,
        params,
    })
}

/// Buffered semi-asynchronous rule: once `k` updates have arrived, return
/// their dataset-size-weighted average and drain the buffer.
pub fn semiasync_update<T: Scalar>(
    buffer: &mut Vec<(ModelState<T>, usize)>,
    k: usize,
    theta_global: &ModelState<T>,
) -> Result<Option<ModelState<T>>, FlError> {
    assert!(k >= 1, "quorum must be at least 1");
    for (m, _) in buffer.iter() {
        theta_global.check_same_arch(m)?;
    }
    if buffer.len() < k {
        return Ok(None);
    }
    let drained: Vec<(ModelState<T>, usize)> = buffer.drain(..).collect();
    fedavg_round(theta_global, &drained).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::Arch;

    fn linear(params: Vec<f64>) -> ModelState<f64> {
        let d = params.len() - 1;
        ModelState::new(Arch::Linear { d }, params).unwrap()
    }

    #[test]
    fn delta_norm_examples() {
        let a = linear(vec![1.0, 2.0]);
        let (delta, norm) = update_delta(&a, &a).unwrap();
        assert!(delta.iter().all(|&d| d == 0.0));
        assert_eq!(norm, 0.0);

        let b = linear(vec![4.0, 6.0]); // delta (3, 4) -> norm 5
        let (_, norm) = update_delta(&b, &a).unwrap();
        assert!((norm - 5.0).abs() < 1e-15);
    }

    #[test]
    fn norm_is_homogeneous() {
        let d = vec![0.3, -0.4, 1.2];
        let scaled: Vec<f64> = d.iter().map(|x| x * -2.5).collect();
        assert!((l2_norm(&scaled) - 2.5 * l2_norm(&d)).abs() < 1e-12);
    }

    #[test]
    fn arch_mismatch_detected() {
        let a = linear(vec![0.0, 0.0]);
        let b = ModelState::<f64>::zeros(Arch::Mlp { d: 1, h: 2 });
        assert!(matches!(
            update_delta(&a, &b),
            Err(FlError::ArchMismatch(_, _))
        ));
    }

    #[test]
    fn upload_threshold_examples() {
        let p = UploadPolicy::<f64> {
            eps_base: 0.01,
            lambda_s: 1.0,
        };
        assert_eq!(upload_threshold(&p, 1.0), 0.01);
        assert!((upload_threshold(&p, 0.0) - 0.02).abs() < 1e-15);
        let p2 = UploadPolicy::<f64> {
            eps_base: 0.01,
            lambda_s: 0.5,
        };
        assert!((upload_threshold(&p2, 0.6) - 0.012).abs() < 1e-15);
    }

    #[test]
    fn upload_threshold_is_decreasing_in_similarity() {
        let p = UploadPolicy::<f64>::default();
        assert!(upload_threshold(&p, 0.2) > upload_threshold(&p, 0.8));
    }

    #[test]
    fn pre_weight_examples() {
        assert_eq!(pre_weight(0.0f64, 123.0), 0.0);
        assert!((pre_weight(0.5, 0.2) - 0.1f64).abs() < 1e-15);
        assert_eq!(pre_weight(1.0f64, 0.0), 0.0);
    }

    #[test]
    fn protected_weights_hand_case() {
        // [0.9, 0.1], floor 0.2 -> floor to [0.9, 0.2] -> [9/11, 2/11]
        let w = protected_weights(&[0.9f64, 0.1], 0.2).unwrap();
        assert!((w[0] - 9.0 / 11.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 11.0).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn protected_weights_degenerate_cases() {
        assert_eq!(protected_weights(&[0.42], 0.3).unwrap(), vec![1.0]);
        let sym = protected_weights(&[0.5, 0.5], 0.25).unwrap();
        assert_eq!(sym, vec![0.5, 0.5]);
        assert_eq!(protected_weights(&[0.0, 0.0], 0.1), Err(FlError::AllZero));
        assert!(matches!(
            protected_weights(&[1.0, 1.0, 1.0], 0.4),
            Err(FlError::InfeasibleFloor { .. })
        ));
    }

    #[test]
    fn protected_weights_skip_floor_is_exact_normalization() {
        let pre = [0.3, 0.2, 0.5];
        let total: f64 = pre.iter().sum();
        let plain: Vec<f64> = pre.iter().map(|w| w / total).collect();
        assert_eq!(protected_weights(&pre, 0.0).unwrap(), plain);
        assert_eq!(protected_weights(&pre, 0.1).unwrap(), plain);
    }

    #[test]
    fn apply_update_examples() {
        let theta = linear(vec![0.0, 0.0]);
        // single delta, weight 1
        let one = apply_update(&theta, &[vec![1.0, -2.0]], &[1.0]).unwrap();
        assert_eq!(one.params, vec![1.0, -2.0]);
        // opposite deltas cancel
        let cancel =
            apply_update(&theta, &[vec![1.0, 1.0], vec![-1.0, -1.0]], &[0.5, 0.5]).unwrap();
        assert_eq!(cancel.params, vec![0.0, 0.0]);
        // weighted sum: [0] + 0.25*[2] + 0.75*[4] = [3.5]
        let theta1 = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![0.0]).unwrap();
        let mixed = apply_update(&theta1, &[vec![2.0], vec![4.0]], &[0.25, 0.75]).unwrap();
        assert!((mixed.params[0] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn apply_update_rejects_bad_weights() {
        let theta = linear(vec![0.0, 0.0]);
        assert!(matches!(
            apply_update(&theta, &[vec![1.0, 1.0]], &[0.5]),
            Err(FlError::BadWeights(_))
        ));
    }

    #[test]
    fn fedavg_examples() {
        let g = linear(vec![9.0, 9.0]);
        let a = linear(vec![0.0, 0.0]);
        let b = linear(vec![2.0, 2.0]);
        // identical locals -> that model
        let same = fedavg_round(&g, &[(a.clone(), 3), (a.clone(), 5)]).unwrap();
        assert_eq!(same.params, a.params);
        // equal sizes -> arithmetic mean
        let mean = fedavg_round(&g, &[(a.clone(), 2), (b.clone(), 2)]).unwrap();
        assert_eq!(mean.params, vec![1.0, 1.0]);
        // sizes {1, 3} on params {0, 4} -> 3
        let c = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![0.0]).unwrap();
        let d = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![4.0]).unwrap();
        let gg = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![0.0]).unwrap();
        let w = fedavg_round(&gg, &[(c, 1), (d, 3)]).unwrap();
        assert!((w.params[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn fedavg_is_apply_update_with_deltas() {
        let g = linear(vec![0.5, -0.25, 1.0]);
        let locals = vec![
            (linear(vec![1.0, 0.0, 2.0]), 2usize),
            (linear(vec![-1.0, 1.0, 0.5]), 6usize),
        ];
        let avg = fedavg_round(&g, &locals).unwrap();
        let total: usize = locals.iter().map(|&(_, n)| n).sum();
        let deltas: Vec<Vec<f64>> = locals
            .iter()
            .map(|(m, _)| update_delta(m, &g).unwrap().0)
            .collect();
        let weights: Vec<f64> = locals
            .iter()
            .map(|&(_, n)| n as f64 / total as f64)
            .collect();
        let via_deltas = apply_update(&g, &deltas, &weights).unwrap();
        for (a, b) in avg.params.iter().zip(&via_deltas.params) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fedasync_examples() {
        let g = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![0.0]).unwrap();
        let l = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![2.0]).unwrap();
        // alpha 1, staleness 0 -> full replacement
        let full = fedasync_update(&g, &l, 1.0, 0, 0.5).unwrap();
        assert_eq!(full.params, vec![2.0]);
        // alpha 0.5, staleness 0 -> midpoint
        let mid = fedasync_update(&g, &l, 0.5, 0, 0.5).unwrap();
        assert!((mid.params[0] - 1.0).abs() < 1e-15);
        // alpha 0.8, staleness 3, decay 1 -> alpha_t = 0.2
        let decayed = fedasync_update(&g, &l, 0.8, 3, 1.0).unwrap();
        assert!((decayed.params[0] - 0.2 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn semiasync_quorum() {
        let g = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![9.0]).unwrap();
        let a = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![0.0]).unwrap();
        let b = ModelState::<f64>::new(Arch::Linear { d: 0 }, vec![4.0]).unwrap();
        let mut buffer = vec![(a.clone(), 1)];
        // below quorum: nothing
        assert_eq!(semiasync_update(&mut buffer, 3, &g).unwrap(), None);
        assert_eq!(buffer.len(), 1);
        // quorum of 2 with equal sizes -> mean, buffer drained
        buffer.push((b, 1));
        let out = semiasync_update(&mut buffer, 2, &g).unwrap().unwrap();
        assert!((out.params[0] - 2.0).abs() < 1e-15);
        assert!(buffer.is_empty());
        // quorum of one behaves like full replacement of the single arrival
        let mut single = vec![(a.clone(), 7)];
        let out = semiasync_update(&mut single, 1, &g).unwrap().unwrap();
        assert_eq!(out.params, a.params);
    }
}
