//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::{ParamId, ParamSet};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Builds the loss for a given parameter state. Called once to obtain the
/// analytic gradients and twice per coordinate for the central differences,
/// so it must be a pure function of `params`.
pub type LossBuilder<'a> = dyn FnMut(&ParamSet) -> Result<(Graph, NodeId)> + 'a;

/// Compare backward() gradients against central finite differences for every
/// coordinate of `check_ids`. Returns the maximum relative error
/// |g_an - g_fd| / max(1e-8, |g_an| + |g_fd|).
pub fn finite_diff_check(
    params: &mut ParamSet,
    check_ids: &[ParamId],
    build: &mut LossBuilder,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Validation(format!(
            "finite_diff_check epsilon must be positive, got {epsilon}"
        )));
    }

    params.reset_grads();
    let (graph, loss) = build(params)?;
    let base = graph.value(loss).item()?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }
    graph.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = check_ids
        .iter()
        .map(|&id| params.grad(id).values().to_vec())
        .collect();
    params.reset_grads();

    let mut eval = |params: &ParamSet| -> Result<f64> {
        let (graph, loss) = build(params)?;
        let v = graph.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss is not finite: {v}")));
        }
        Ok(v)
    };

    let mut max_rel = 0.0f64;
    for (&id, grads) in check_ids.iter().zip(&analytic) {
        for (coord, &g) in grads.iter().enumerate() {
            let original = params.value(id).values()[coord];
            params.get_mut(id).value.values_mut()[coord] = original + epsilon;
            let plus = eval(params)?;
            params.get_mut(id).value.values_mut()[coord] = original - epsilon;
            let minus = eval(params)?;
            params.get_mut(id).value.values_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
