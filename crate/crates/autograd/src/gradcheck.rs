//! Central finite-difference checks for graph gradients.

use crate::tensor::Tensor;
use crate::var::{grad, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub max_rel_error: f64,
    /// Index of the tensor that produced `max_rel_error`.
    pub worst_tensor: usize,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares the graph gradient of `f` at `params` with central differences of
/// step `h`. `f` must build a scalar from the supplied leaves only.
pub fn check_gradients(params: &[Tensor], h: f64, f: impl Fn(&[Var]) -> Var) -> GradCheckReport {
    let vars: Vec<Var> = params.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let analytic: Vec<Tensor> = grad(&out, &vars).iter().map(|g| g.value().clone()).collect();

    let eval = |ps: &[Tensor]| -> f64 {
        let consts: Vec<Var> = ps.iter().cloned().map(Var::constant).collect();
        f(&consts).value().item()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].shape());
        for j in 0..params[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }

    let mut max_rel_error = 0.0;
    let mut worst_tensor = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let diff = a.zip_map(n, |x, y| x - y).sq_norm().sqrt();
        let scale = a.sq_norm().sqrt().max(n.sq_norm().sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_tensor = i;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_tensor,
        analytic,
        numeric,
    }
}
