use super::Scalar;

/// Relative error with a small floor on the denominator so that two
/// near-zero gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Flat index (across all inputs) of the worst entry.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every coordinate of every input.
///
/// `f` evaluates the scalar function; `grad` returns the analytic
/// gradient for each input (same layout as `inputs`).
pub fn gradcheck<T, F, G>(inputs: &[Vec<T>], h: f64, mut f: F, grad: G) -> GradcheckReport
where
    T: Scalar,
    F: FnMut(&[Vec<T>]) -> T,
    G: FnOnce(&[Vec<T>]) -> Vec<Vec<T>>,
{
    let analytic = grad(inputs);
    let mut work = inputs.to_vec();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let hs = T::lit(h);
    let mut flat = 0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let orig = work[k][i];
            work[k][i] = orig + hs;
            let up = f(&work).to_f64().unwrap();
            work[k][i] = orig - hs;
            let down = f(&work).to_f64().unwrap();
            work[k][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[k][i].to_f64().unwrap(), numeric);
            if err > report.max_relative_error || report.checked == 0 {
                report.max_relative_error = err;
                report.worst_index = flat;
            }
            report.checked += 1;
            flat += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let coeffs = [0.5, -1.25, 3.0, 2.0];
        let x = vec![vec![0.1, 0.2, -0.3, 0.4]];
        let r = gradcheck(
            &x,
            1e-5,
            |v| v[0].iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>(),
            |_| vec![coeffs.to_vec()],
        );
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }
}
