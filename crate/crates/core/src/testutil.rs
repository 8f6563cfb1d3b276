//! Finite-difference oracle for unit tests.

use crate::params::ParamSet;

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h`, restoring θ afterwards.
pub fn central_difference<P: ParamSet>(params: &mut P, index: usize, h: f64, f: &dyn Fn(&P) -> f64) -> f64 {
    let original = params.get_flat(index);
    params.set_flat(index, original + h);
    let plus = f(params);
    params.set_flat(index, original - h);
    let minus = f(params);
    params.set_flat(index, original);
    (plus - minus) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|)`, or zero when both sides agree to within 1e-8
/// absolute (gradients that vanish identically, such as attention key biases).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-8 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}
