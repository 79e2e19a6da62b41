//! Dense symmetric positive-definite solves for the normal equations.

/// Relative pivot threshold below which a normal matrix is treated as rank
/// deficient.
pub const PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    pub pivot: f64,
    pub largest: f64,
}

impl std::fmt::Display for PivotFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pivot {} is {:.3e} against largest pivot {:.3e}",
            self.index, self.pivot, self.largest
        )
    }
}

/// Solves `A x = b` for symmetric `A` (n×n, either storage order) by an
/// LDLᵀ factorization without pivoting.
///
/// Fails when any pivot is non-positive or smaller than `PIVOT_RATIO`
/// times the largest pivot.
pub fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>, PivotFailure> {
    solve_spd_with_ratio(a, n, b, PIVOT_RATIO)
}

/// [`solve_spd`] with an explicit relative pivot threshold. A ratio of zero
/// only rejects non-positive or non-finite pivots, which suits IRLS systems
/// whose weights legitimately span many orders of magnitude.
pub fn solve_spd_with_ratio(
    a: &[f64],
    n: usize,
    b: &[f64],
    ratio: f64,
) -> Result<Vec<f64>, PivotFailure> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);

    // l holds the unit lower factor below the diagonal and d on it.
    let mut l = a.to_vec();
    let mut d = vec![0.0; n];
    let mut largest = 0.0f64;
    for j in 0..n {
        let mut dj = l[j * n + j];
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        largest = largest.max(dj);
        if !(dj > 0.0) || !dj.is_finite() {
            return Err(PivotFailure {
                index: j,
                pivot: dj,
                largest,
            });
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = v / dj;
        }
    }
    for (j, &dj) in d.iter().enumerate() {
        if dj < ratio * largest {
            return Err(PivotFailure {
                index: j,
                pivot: dj,
                largest,
            });
        }
    }

    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l[i * n + k] * x[k];
        }
    }
    for i in 0..n {
        x[i] /= d[i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= l[k * n + i] * x[k];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|k| a[i * 3 + k] * x_true[k]).sum())
            .collect();
        let x = solve_spd(&a, 3, &b).unwrap();
        for (xi, ti) in x.iter().zip(x_true) {
            assert!((xi - ti).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_is_rejected() {
        // outer product of (1, 2, 3) has rank 1
        let v = [1.0, 2.0, 3.0];
        let a: Vec<f64> = (0..9).map(|k| v[k / 3] * v[k % 3]).collect();
        assert!(solve_spd(&a, 3, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tiny_relative_pivot_is_rejected() {
        let a = [1.0, 0.0, 0.0, 1e-14];
        let err = solve_spd(&a, 2, &[1.0, 1.0]).unwrap_err();
        assert_eq!(err.index, 1);
    }
}
