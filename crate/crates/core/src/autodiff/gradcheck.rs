use super::{Array, Graph, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// One entry per input array, in input order.
    pub per_parameter: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)` applied to whole arrays via their max norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

fn evaluate<F>(f: &F, point: &[Array]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let inputs: Vec<Var> = point.iter().map(|a| g.var(a.clone())).collect();
    let out = f(&mut g, &inputs)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalarRoot(v.shape().to_vec()));
    }
    if !v.all_finite() {
        return Err(Error::NonFinite("grad-check function output".into()));
    }
    Ok((g, inputs, out))
}

/// Checks `f`'s reverse-mode gradients at `point` against central differences
/// with step `epsilon`.
pub fn grad_check<F>(f: F, point: &[Array], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("grad-check epsilon must be > 0, got {epsilon}")));
    }
    let (mut g, inputs, out) = evaluate(&f, point)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .zip(point)
        .map(|(&v, a)| g.grad(v).map_or_else(|| vec![0.0; a.len()], |s| s.to_vec()))
        .collect();
    drop(g);

    let mut work: Vec<Array> = point.to_vec();
    let mut per_parameter = Vec::with_capacity(point.len());
    for (pi, an) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; an.len()];
        for (k, num) in numeric.iter_mut().enumerate() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + epsilon;
            let (gp, _, op) = evaluate(&f, &work)?;
            let fp = gp.scalar(op);
            work[pi].data_mut()[k] = orig - epsilon;
            let (gm, _, om) = evaluate(&f, &work)?;
            let fm = gm.scalar(om);
            work[pi].data_mut()[k] = orig;
            *num = (fp - fm) / (2.0 * epsilon);
        }
        per_parameter.push(relative_error(an, &numeric));
    }
    let max_relative_error = per_parameter.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter,
    })
}
