//! Central finite-difference gradient checking.

use crate::graph::{Graph, Group, Mode, ParamKind, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    /// Where the largest error occurred.
    pub worst: String,
    pub checked: usize,
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences with step `h`, over every trainable parameter in `ps` and
/// every tensor in `inputs`.
///
/// At most `max_per_tensor` evenly strided entries of each tensor are
/// perturbed, to bound cost on larger layers.
pub fn check<F>(ps: &ParamStore, inputs: &[Tensor], h: f64, max_per_tensor: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    check_in_mode(Mode::Train, ps, inputs, h, max_per_tensor, f)
}

/// [`check`] with an explicit graph mode.
pub fn check_in_mode<F>(
    mode: Mode,
    ps: &ParamStore,
    inputs: &[Tensor],
    h: f64,
    max_per_tensor: usize,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let groups = [Group::Model, Group::Estimator];
    let eval = |ps: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(mode, &groups);
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, ps, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(mode, &groups);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, ps, &vars)?;
    let grads = g.backward(out)?;
    let pgrads = g.param_grads(&grads);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = format!("{label}: analytic {analytic:.3e} numeric {numeric:.3e}");
        }
    };

    let picks = |n: usize| -> Vec<usize> {
        let step = n.div_ceil(max_per_tensor.max(1)).max(1);
        (0..n).step_by(step).collect()
    };

    for id in ps.ids() {
        let e = ps.entry(id);
        if e.kind != ParamKind::Trainable {
            continue;
        }
        let analytic = pgrads.iter().find(|(p, _)| *p == id).map(|(_, t)| t.data().to_vec());
        for i in picks(e.value.numel()) {
            let mut plus = ps.clone();
            plus.get_mut(id).data_mut()[i] += h;
            let mut minus = ps.clone();
            minus.get_mut(id).data_mut()[i] -= h;
            let numeric = (eval(&plus, inputs)? - eval(&minus, inputs)?) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            record(format!("{}[{i}]", e.name), a, numeric);
        }
    }
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.raw(vars[k]).map(<[f64]>::to_vec);
        for i in picks(t.numel()) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(ps, &plus)? - eval(ps, &minus)?) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            record(format!("input{k}[{i}]"), a, numeric);
        }
    }
    Ok(report)
}
