use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Central differences `(f(w + h e_i) − f(w − h e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&ParamVector) -> Result<f64>,
    w: &ParamVector,
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let keys: Vec<_> = w.keys().copied().collect();
    let mut grad = w.zeros_like();
    let mut probe = w.clone();
    let mut flat_index = 0usize;
    for key in keys {
        let len = w.block(&key).expect("own key").len();
        for i in 0..len {
            let orig = probe.block(&key).expect("own key")[i];
            probe.block_mut(&key).expect("own key")[i] = orig + h;
            let plus = f(&probe)?;
            probe.block_mut(&key).expect("own key")[i] = orig - h;
            let minus = f(&probe)?;
            probe.block_mut(&key).expect("own key")[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite objective at coordinate {flat_index} ({key}[{i}])"
                )));
            }
            grad.block_mut(&key).expect("own key")[i] = (plus - minus) / (2.0 * h);
            flat_index += 1;
        }
    }
    Ok(grad)
}

/// Largest `|a_i − b_i| / max(|a_i|, |b_i|)` over coordinates where the
/// analytic value exceeds `floor` in magnitude.
pub fn max_relative_error(analytic: &ParamVector, numeric: &ParamVector, floor: f64) -> f64 {
    analytic
        .flatten()
        .iter()
        .zip(numeric.flatten())
        .filter(|(a, _)| a.abs() > floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// `max |a − n| / max |a|`, the deviation relative to the gradient's scale.
pub fn scaled_max_error(analytic: &ParamVector, numeric: &ParamVector) -> f64 {
    let a = analytic.flatten();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(numeric.flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
