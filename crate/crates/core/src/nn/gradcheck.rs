use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};

/// Per-parameter comparison of analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, 0 when both vanish.
    pub rel_error: f64,
    /// `‖analytic − numeric‖`.
    pub abs_error: f64,
    pub analytic_norm: f64,
}

/// Checks every parameter of `params` for the scalar built by `build`.
pub fn check_gradients<F>(params: &ParamSet<f64>, step: f64, build: F) -> Vec<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Var,
{
    let mut g = Graph::new();
    let out = build(&mut g, params);
    let grads = g.backward(out);
    let analytic = g.param_grads(&grads, params);
    let mut work = params.clone();
    let eval = |p: &ParamSet<f64>| {
        let mut g = Graph::new();
        let out = build(&mut g, p);
        g.value(out)[0]
    };
    params
        .ids()
        .map(|id: ParamId| {
            let n = params.value(id).len();
            let a = analytic[id.0].clone().unwrap_or_else(|| vec![0.0; n]);
            let mut num = vec![0.0; n];
            for i in 0..n {
                let orig = work.value(id)[i];
                work.value_mut(id)[i] = orig + step;
                let up = eval(&work);
                work.value_mut(id)[i] = orig - step;
                let down = eval(&work);
                work.value_mut(id)[i] = orig;
                num[i] = (up - down) / (2.0 * step);
            }
            let diff = a.iter().zip(&num).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = num.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = na.max(nn);
            GradCheck {
                name: params.name(id).to_string(),
                rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
                abs_error: diff,
                analytic_norm: na,
            }
        })
        .collect()
}

/// `Σ wᵢ·xᵢ` as a tape scalar, a convenient probe loss for gradient checks.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, weights: &[f64]) -> Var {
    let v: f64 = g.value(x).iter().zip(weights).map(|(a, b)| a * b).sum();
    g.external(&[x], v, vec![weights.to_vec()])
}
