use super::{DenseArray, NodeId, Tape};
use crate::error::{Error, Result};

/// A loss graph produced by a builder closure: the tape, the scalar root, and
/// the leaf node of each checked parameter (same order as the parameter
/// slice handed to [`check_gradients`]).
pub struct BuiltLoss {
    pub tape: Tape,
    pub root: NodeId,
    pub params: Vec<NodeId>,
}

/// Outcome of a finite-difference sweep over every parameter entry.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_entry: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compare the backward pass of `build` against central finite differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every entry of every parameter.
///
/// The builder must be deterministic (no live dropout); this is enforced by
/// evaluating the loss twice and requiring bit-identical values. Note the
/// builder is invoked with perturbed copies of `params`, so anything it is
/// meant to treat as constant (e.g. a detached weight vector) must be captured
/// outside the closure rather than recomputed from the parameters.
pub fn check_gradients<F>(
    mut build: F,
    params: &[DenseArray],
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[DenseArray]) -> Result<BuiltLoss>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "gradcheck epsilon must be positive, got {epsilon}"
        )));
    }
    let mut first = build(params)?;
    let second = build(params)?;
    let v1 = first.tape.scalar_value(first.root);
    let v2 = second.tape.scalar_value(second.root);
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::Contract(format!(
            "loss builder is nondeterministic: {v1} vs {v2} on identical inputs"
        )));
    }
    if first.params.len() != params.len() {
        return Err(Error::Contract(format!(
            "builder returned {} parameter nodes for {} parameters",
            first.params.len(),
            params.len()
        )));
    }

    first.tape.backward(first.root)?;
    let analytic: Vec<DenseArray> = first
        .params
        .iter()
        .map(|&id| first.tape.grad(id))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_entry: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    let mut perturbed: Vec<DenseArray> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.numel() {
            let orig = param.values()[ei];
            perturbed[pi].values_mut()[ei] = orig + epsilon;
            let plus = build(&perturbed)?;
            let lp = plus.tape.scalar_value(plus.root);
            perturbed[pi].values_mut()[ei] = orig - epsilon;
            let minus = build(&perturbed)?;
            let lm = minus.tape.scalar_value(minus.root);
            perturbed[pi].values_mut()[ei] = orig;

            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic[pi].values()[ei];
            let re = rel_err(a, numeric);
            report.entries_checked += 1;
            if re > report.max_rel_err {
                report.max_rel_err = re;
                report.worst_param = pi;
                report.worst_entry = ei;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
