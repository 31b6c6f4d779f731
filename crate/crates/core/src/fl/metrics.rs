//! Regression evaluation: MAE, RMSE, and R^2.

use serde::{Deserialize, Serialize};

use super::{predict, FlError, LocalDataset, ModelState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegressionMetrics<T: Scalar> {
    pub mae: T,
    pub rmse: T,
    pub r2: T,
}

/// Evaluate a model on a held-out dataset.
///
/// R^2 is `1 - SSE/SST` with SST about the target mean; it is undefined for
/// zero-variance targets.
pub fn evaluate<T: Scalar>(
    m: &ModelState<T>,
    test: &LocalDataset<T>,
) -> Result<RegressionMetrics<T>, FlError> {
    test.validate()?;
    let n = T::from_usize(test.len()).unwrap();
    let mut abs_sum = T::zero();
    let mut sq_sum = T::zero();
    let mut preds = Vec::with_capacity(test.len());
    for (x, &y) in test.inputs.iter().zip(&test.targets) {
        let p = predict(m, x)?;
        let e = p - y;
        abs_sum = abs_sum + e.abs();
        sq_sum = sq_sum + e * e;
        preds.push(p);
    }
    let mean_y = test.targets.iter().copied().sum::<T>() / n;
    let sst: T = test
        .targets
        .iter()
        .map(|&y| (y - mean_y) * (y - mean_y))
        .sum();
    if !(sst > T::zero()) {
        return Err(FlError::DegenerateTargets);
    }
    Ok(RegressionMetrics {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        r2: T::one() - sq_sum / sst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::Arch;

    #[test]
    fn perfect_predictions() {
        // Model y = x on two points it fits exactly.
        let m = ModelState::<f64>::new(Arch::Linear { d: 1 }, vec![1.0, 0.0]).unwrap();
        let test = LocalDataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let r = evaluate(&m, &test).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.r2, 1.0);
    }

    #[test]
    fn constant_mean_predictor_has_zero_r2() {
        let m = ModelState::<f64>::new(Arch::Linear { d: 1 }, vec![0.0, 0.5]).unwrap();
        let test = LocalDataset::new(vec![vec![0.0], vec![0.0]], vec![0.0, 1.0]).unwrap();
        let r = evaluate(&m, &test).unwrap();
        assert!((r.r2 - 0.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_case() {
        // y = {0, 1}, predictions {0.1, 0.7}
        let m = ModelState::<f64>::new(Arch::Linear { d: 1 }, vec![0.6, 0.1]).unwrap();
        let test = LocalDataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let r = evaluate(&m, &test).unwrap();
        assert!((r.mae - 0.2).abs() < 1e-15);
        assert!((r.rmse - 0.05f64.sqrt()).abs() < 1e-15);
        assert!((r.r2 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_targets_are_degenerate() {
        let m = ModelState::<f64>::zeros(Arch::Linear { d: 1 });
        let test = LocalDataset::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(evaluate(&m, &test), Err(FlError::DegenerateTargets));
    }
}
