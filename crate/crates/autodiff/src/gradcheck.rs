use crate::real::Real;

/// Central-difference step used by [`grad_check`] unless overridden.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare the analytic gradient returned by `f` at `point` to central
/// differences with step `h`.
///
/// `f` returns the function value and its analytic gradient. The relative
/// error of coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|, REL_ERR_FLOOR)`;
/// the report carries the worst coordinate.
pub fn grad_check<F>(mut f: F, point: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match point");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let (fp, _) = f(&x);
        x[i] = orig - h;
        let (fm, _) = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let err = (a - numeric).abs() / denom;
        if err > report.max_rel_err || !err.is_finite() {
            report = GradCheckReport {
                max_rel_err: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}

/// Convenience for generic code: widen a slice to `f64`.
pub fn to_f64_vec<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}
