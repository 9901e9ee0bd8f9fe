//! Central finite differences, used as an independent oracle for every
//! analytic gradient in the crate.

/// Step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest violation of `|a − n| <= max(rel_tol · max(|a|, |n|), abs_floor)`,
/// as `(index, analytic, numeric)`.
pub fn worst_mismatch(
    analytic: &[f64],
    numeric: &[f64],
    rel_tol: f64,
    abs_floor: f64,
) -> Option<(usize, f64, f64)> {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let allowed = f64::max(rel_tol * a.abs().max(n.abs()), abs_floor);
        let excess = (a - n).abs() / allowed;
        if excess > 1.0 && worst.is_none_or(|w| excess > w.3) {
            worst = Some((i, a, n, excess));
        }
    }
    worst.map(|(i, a, n, _)| (i, a, n))
}

/// Panics with the worst offending coordinate if the gradients disagree.
#[track_caller]
pub fn assert_gradients_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_floor: f64) {
    if let Some((i, a, n)) = worst_mismatch(analytic, numeric, rel_tol, abs_floor) {
        panic!("gradient mismatch at {i}: analytic {a:e}, numeric {n:e}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], FD_STEP);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn mismatch_reporting() {
        assert!(worst_mismatch(&[1.0, 2.0], &[1.0, 2.0 + 1e-7], 1e-6, 1e-9).is_none());
        let w = worst_mismatch(&[1.0, 2.0], &[1.1, 2.0], 1e-6, 1e-9).unwrap();
        assert_eq!(w.0, 0);
        assert!(worst_mismatch(&[0.0], &[5e-10], 1e-6, 1e-9).is_none());
    }
}
