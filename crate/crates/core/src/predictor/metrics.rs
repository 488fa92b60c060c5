//! Regression quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub n: usize,
    /// Coefficient of determination.
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Fraction of predictions within 5% of the truth.
    pub acc5: f64,
    pub acc10: f64,
}

/// Metrics over `(truth, prediction)` pairs. Pairs are sorted before
/// accumulation so the result does not depend on their order.
pub fn evaluate_pairs(pairs: &[(f64, f64)]) -> Result<PredictorMetrics> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty test set"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len() as f64;
    let mean = sorted.iter().map(|p| p.0).sum::<f64>() / n;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    let (mut within5, mut within10) = (0usize, 0usize);
    for &(truth, pred) in &sorted {
        let err = (pred - truth).abs();
        abs += err;
        sq += err * err;
        tot += (truth - mean) * (truth - mean);
        within5 += usize::from(err <= 0.05 * truth.abs());
        within10 += usize::from(err <= 0.10 * truth.abs());
    }
    let r2 = if tot > 0.0 {
        1.0 - sq / tot
    } else if sq == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(PredictorMetrics {
        n: sorted.len(),
        r2,
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        acc5: within5 as f64 / n,
        acc10: within10 as f64 / n,
    })
}

pub fn rmse(pairs: &[(f64, f64)]) -> f64 {
    evaluate_pairs(pairs).map_or(0.0, |m| m.rmse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let pairs: Vec<_> = (1..20).map(|i| (i as f64, i as f64)).collect();
        let m = evaluate_pairs(&pairs).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2, m.acc5, m.acc10), (0.0, 0.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn seven_percent_over() {
        let pairs: Vec<_> = (1..20).map(|i| (i as f64, i as f64 * 1.07)).collect();
        let m = evaluate_pairs(&pairs).unwrap();
        assert_eq!((m.acc5, m.acc10), (0.0, 1.0));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(evaluate_pairs(&[]).is_err());
    }

    #[test]
    fn order_does_not_matter() {
        let pairs: Vec<_> = (1..50).map(|i| (i as f64 * 0.37, (i * i % 17) as f64)).collect();
        let mut rev = pairs.clone();
        rev.reverse();
        assert_eq!(evaluate_pairs(&pairs).unwrap(), evaluate_pairs(&rev).unwrap());
    }
}
