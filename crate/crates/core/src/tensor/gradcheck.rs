//! Central finite-difference check of graph gradients.

use super::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest per-entry relative error seen.
    pub max_rel_err: f64,
    /// `(input, flat index)` of that entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with an absolute floor so that entries whose true
/// gradient is ~0 do not divide by noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `backward` against central differences with step `h` for every
/// entry of every tensor in `inputs`. `build` must produce a scalar.
pub fn check_gradients<F, E>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .expect("params always get gradients")
            .clone();
        for j in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            if err > report.max_rel_err {
                report = GradCheck {
                    max_rel_err: err,
                    worst: (ti, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
