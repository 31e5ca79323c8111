use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Discrepancy between observed and simulated data (or summaries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    /// Each coordinate divided by its scale before taking the norm.
    ScaledEuclidean { scale: Vec<f64> },
}

pub fn discrepancy(y: &[f64], x: &[f64], metric: &Metric) -> Result<f64, CoreError> {
    if y.len() != x.len() {
        return Err(CoreError::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    let sq = match metric {
        Metric::Euclidean => y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
        Metric::ScaledEuclidean { scale } => {
            if scale.len() != y.len() {
                return Err(CoreError::DimensionMismatch {
                    expected: y.len(),
                    got: scale.len(),
                });
            }
            y.iter()
                .zip(x)
                .zip(scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>()
        }
    };
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_four_five() {
        assert_eq!(discrepancy(&[0.0, 0.0], &[3.0, 4.0], &Metric::Euclidean).unwrap(), 5.0);
        let scaled = Metric::ScaledEuclidean {
            scale: vec![2.0, 2.0],
        };
        assert_eq!(discrepancy(&[0.0, 0.0], &[3.0, 4.0], &scaled).unwrap(), 2.5);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(discrepancy(&[0.0], &[1.0, 2.0], &Metric::Euclidean).is_err());
    }

    fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..6).prop_flat_map(|d| {
            let v = prop::collection::vec(-1e3f64..1e3, d);
            (v.clone(), v.clone(), v)
        })
    }

    proptest! {
        #[test]
        fn metric_axioms((a, b, c) in triple()) {
            let m = Metric::Euclidean;
            let ab = discrepancy(&a, &b, &m).unwrap();
            prop_assert_eq!(discrepancy(&a, &a, &m).unwrap(), 0.0);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, discrepancy(&b, &a, &m).unwrap());
            let bc = discrepancy(&b, &c, &m).unwrap();
            let ac = discrepancy(&a, &c, &m).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9 * (1.0 + ac));

            let s = Metric::ScaledEuclidean { scale: vec![0.5; a.len()] };
            let sab = discrepancy(&a, &b, &s).unwrap();
            prop_assert_eq!(sab, discrepancy(&b, &a, &s).unwrap());
            prop_assert!(discrepancy(&a, &c, &s).unwrap()
                <= sab + discrepancy(&b, &c, &s).unwrap() + 1e-9 * (1.0 + sab));
        }
    }
}
