use serde::{Deserialize, Serialize};

use super::PerceptionError;

/// Depth accuracy: mean absolute relative error in percent and RMSE in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
}

pub fn depth_metrics(estimated: &[f64], truth: &[f64]) -> Result<DepthMetrics, PerceptionError> {
    if estimated.is_empty() || estimated.len() != truth.len() {
        return Err(PerceptionError::EmptyInput);
    }
    if let Some(&bad) = truth.iter().find(|&&g| !(g > 0.0)) {
        return Err(PerceptionError::NonPositiveTruth(bad));
    }
    let n = truth.len() as f64;
    let (mut rel, mut sq) = (0.0, 0.0);
    for (e, g) in estimated.iter().zip(truth) {
        rel += (e - g).abs() / g;
        sq += (e - g) * (e - g);
    }
    Ok(DepthMetrics {
        abs_rel: 100.0 * rel / n,
        rmse: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let gt = [10.0, 20.0, 35.0];
        assert_eq!(depth_metrics(&gt, &gt).unwrap(), DepthMetrics { abs_rel: 0.0, rmse: 0.0 });
        let scaled: Vec<f64> = gt.iter().map(|g| g * 1.1).collect();
        assert!((depth_metrics(&scaled, &gt).unwrap().abs_rel - 10.0).abs() < 1e-9);
        let m = depth_metrics(&[11.0, 18.0], &[10.0, 20.0]).unwrap();
        assert!((m.abs_rel - 10.0).abs() < 1e-12);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse - 1.581).abs() < 1e-3);
    }

    #[test]
    fn errors() {
        assert_eq!(depth_metrics(&[], &[]), Err(PerceptionError::EmptyInput));
        assert_eq!(depth_metrics(&[1.0], &[0.0]), Err(PerceptionError::NonPositiveTruth(0.0)));
    }
}
