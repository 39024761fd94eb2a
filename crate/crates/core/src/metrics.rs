//! Quadratic weighted kappa.

use crate::corpus::ScoreRange;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct RatingMatrices {
    pub n: usize,
    pub weights: Matrix<f64>,
    pub observed: Matrix<f64>,
    pub expected: Matrix<f64>,
}

/// `W[i][j] = (i - j)² / (N - 1)²` over 0-based rating indices.
pub fn weight_matrix(n: usize) -> Result<Matrix<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("weight matrix needs at least 2 ratings, got {n}")));
    }
    let denom = ((n - 1) * (n - 1)) as f64;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        d * d / denom
    }))
}

fn rating_indices(values: &[i64], range: &ScoreRange, which: &str) -> Result<Vec<usize>> {
    values
        .iter()
        .enumerate()
        .map(|(pos, &v)| {
            if range.contains(v) {
                Ok((v - range.min) as usize)
            } else {
                Err(Error::Domain(format!(
                    "{which} rating {v} at position {pos} outside {}-{}",
                    range.min, range.max
                )))
            }
        })
        .collect()
}

fn check_lengths(actual: &[i64], predicted: &[i64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Domain(format!(
            "{} actual ratings vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    Ok(())
}

pub fn observed_matrix(actual: &[i64], predicted: &[i64], range: &ScoreRange) -> Result<Matrix<f64>> {
    check_lengths(actual, predicted)?;
    let a = rating_indices(actual, range, "actual")?;
    let p = rating_indices(predicted, range, "predicted")?;
    let n = range.num_ratings();
    let mut o = Matrix::zeros(n, n);
    for (&i, &j) in a.iter().zip(&p) {
        o.set(i, j, o.get(i, j) + 1.0);
    }
    Ok(o)
}

/// Outer product of the two rating histograms, scaled to total mass equal to
/// the number of pairs.
pub fn expected_matrix(actual: &[i64], predicted: &[i64], range: &ScoreRange) -> Result<Matrix<f64>> {
    check_lengths(actual, predicted)?;
    let a = rating_indices(actual, range, "actual")?;
    let p = rating_indices(predicted, range, "predicted")?;
    let n = range.num_ratings();
    let mut hist_a = vec![0.0; n];
    let mut hist_p = vec![0.0; n];
    a.iter().for_each(|&i| hist_a[i] += 1.0);
    p.iter().for_each(|&j| hist_p[j] += 1.0);
    let total = a.len() as f64;
    if total == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    Ok(Matrix::from_fn(n, n, |i, j| hist_a[i] * hist_p[j] / total))
}

pub fn rating_matrices(actual: &[i64], predicted: &[i64], range: &ScoreRange) -> Result<RatingMatrices> {
    let n = range.num_ratings();
    Ok(RatingMatrices {
        n,
        weights: weight_matrix(n)?,
        observed: observed_matrix(actual, predicted, range)?,
        expected: expected_matrix(actual, predicted, range)?,
    })
}

/// Quadratic weighted kappa over ratings within `range`.
///
/// When both raters put every essay on the same single rating the weighted
/// expected disagreement is zero; the kappa is then 1 if observed and
/// expected coincide and undefined otherwise.
pub fn qwk(actual: &[i64], predicted: &[i64], range: &ScoreRange) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::Domain("kappa of an empty rating sequence".into()));
    }
    let m = rating_matrices(actual, predicted, range)?;
    let weighted = |x: &Matrix<f64>| -> f64 {
        m.weights
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(w, v)| w * v)
            .sum()
    };
    let num = weighted(&m.observed);
    let den = weighted(&m.expected);
    if den == 0.0 {
        if m.observed == m.expected {
            return Ok(1.0);
        }
        return Err(Error::Domain("kappa undefined: no expected disagreement".into()));
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn range(min: i64, max: i64) -> ScoreRange {
        ScoreRange::new(1, min, max).unwrap()
    }

    /// Pairwise reference: expected disagreement averaged over all n² pairings.
    fn brute_force(actual: &[i64], predicted: &[i64], min: i64, max: i64) -> f64 {
        let span = (max - min) as f64;
        let w = |a: i64, b: i64| ((a - b) as f64).powi(2) / (span * span);
        let n = actual.len() as f64;
        let num: f64 = actual.iter().zip(predicted).map(|(&a, &p)| w(a, p)).sum();
        let mut den = 0.0;
        for &a in actual {
            for &p in predicted {
                den += w(a, p);
            }
        }
        1.0 - num / (den / n)
    }

    #[test]
    fn weight_matrix_examples() {
        let w = weight_matrix(3).unwrap();
        assert_eq!(w.get(0, 2), 1.0);
        assert_eq!(w.get(2, 0), 1.0);
        assert!((0..3).all(|i| w.get(i, i) == 0.0));
        let w4 = weight_matrix(4).unwrap();
        assert!((w4.get(1, 2) - 1.0 / 9.0).abs() < 1e-15);
        assert!(weight_matrix(1).is_err());
    }

    #[test]
    fn observed_counts() {
        let o = observed_matrix(&[2], &[4], &range(2, 4)).unwrap();
        assert_eq!(o.get(0, 2), 1.0);
        assert_eq!(o.as_slice().iter().sum::<f64>(), 1.0);

        let empty = observed_matrix(&[], &[], &range(2, 4)).unwrap();
        assert!(empty.as_slice().iter().all(|&v| v == 0.0));

        let a = observed_matrix(&[1, 2, 3, 1], &[1, 3, 3, 2], &range(1, 3)).unwrap();
        let b = observed_matrix(&[1, 3, 1, 2], &[2, 3, 1, 3], &range(1, 3)).unwrap();
        assert_eq!(a, b);

        match observed_matrix(&[1, 9], &[1, 1], &range(1, 3)) {
            Err(Error::Domain(m)) => assert!(m.contains("position 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expected_matrix_examples() {
        let e = expected_matrix(&[3], &[2], &range(1, 3)).unwrap();
        assert_eq!(e.get(2, 1), 1.0);
        assert_eq!(e.as_slice().iter().sum::<f64>(), 1.0);

        let e = expected_matrix(&[0, 0, 1, 1], &[0, 1, 0, 1], &range(0, 1)).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn qwk_examples() {
        assert_eq!(qwk(&[1, 2, 3], &[1, 2, 3], &range(1, 3)).unwrap(), 1.0);
        let v = qwk(&[1, 2, 3, 1], &[1, 2, 3, 2], &range(1, 3)).unwrap();
        let oracle = brute_force(&[1, 2, 3, 1], &[1, 2, 3, 2], 1, 3);
        assert!((v - oracle).abs() < 1e-12);
        // hand value: weighted observed 1/4, weighted expected 5/4
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn qwk_degenerate_cases() {
        assert_eq!(qwk(&[2, 2], &[2, 2], &range(1, 3)).unwrap(), 1.0);
        assert!(qwk(&[], &[], &range(1, 3)).is_err());
        assert!(qwk(&[1], &[1, 2], &range(1, 3)).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_shift_invariant(
            pairs in proptest::collection::vec((0i64..5, 0i64..5), 2..60),
            shift in -10i64..10,
        ) {
            let a: Vec<i64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<i64> = pairs.iter().map(|p| p.1).collect();
            let r = range(0, 4);
            match (qwk(&a, &p, &r), qwk(&p, &a, &r)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    let sa: Vec<i64> = a.iter().map(|v| v + shift).collect();
                    let sp: Vec<i64> = p.iter().map(|v| v + shift).collect();
                    let shifted = qwk(&sa, &sp, &range(shift, 4 + shift)).unwrap();
                    prop_assert!((x - shifted).abs() < 1e-12);
                }
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "asymmetric outcome {:?}", other),
            }
        }

        #[test]
        fn expected_mass_equals_observed_mass(pairs in proptest::collection::vec((0i64..4, 0i64..4), 0..50)) {
            let a: Vec<i64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<i64> = pairs.iter().map(|p| p.1).collect();
            let m = rating_matrices(&a, &p, &range(0, 3)).unwrap();
            let so: f64 = m.observed.as_slice().iter().sum();
            let se: f64 = m.expected.as_slice().iter().sum();
            prop_assert!((so - se).abs() < 1e-9);
            prop_assert_eq!(so, a.len() as f64);
        }
    }
}
