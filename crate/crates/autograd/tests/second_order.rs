//! Gradient checks for every differentiable op, including gradients of
//! gradients.

use biasforge_autograd::{check_gradients, grad, ConvGeom, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

const TOL: f64 = 1e-6;

#[test]
fn conv_and_transposed_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![random(&[2, 2, 6, 6], &mut rng), random(&[3, 2, 4, 4], &mut rng)];
    let geom = ConvGeom::new(2, 1);
    let report = check_gradients(&params, 1e-5, |v| v[0].conv2d(&v[1], geom).tanh().sum());
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);

    let params = vec![random(&[1, 3, 3, 3], &mut rng), random(&[3, 2, 4, 4], &mut rng)];
    let report = check_gradients(&params, 1e-5, |v| v[0].conv_transpose2d(&v[1], 6, 6, geom).square().sum());
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}

#[test]
fn shape_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = vec![random(&[2, 3, 4, 4], &mut rng), random(&[3], &mut rng)];
    let report = check_gradients(&params, 1e-5, |v| {
        let b = v[1].broadcast_axes(&[2, 3, 4, 4], &[false, true, false, false]);
        let x = v[0].add(&b).pad_replicate(1).upsample_nearest(2);
        let y = Var::concat(&[x.narrow(1, 0, 1), x.narrow(1, 1, 2).sigmoid()], 1);
        y.square().sum_per_sample().sqrt().sum()
    });
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
    let report = check_gradients(&params, 1e-5, |v| v[0].matmul(&v[1]).leaky_relu(0.2).square().mean());
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}

#[test]
fn gradient_of_input_gradient_norm() {
    // Penalty-style objective: ‖∂f/∂x‖² differentiated w.r.t. conv weights.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 1, 6, 6], &mut rng);
    let params = vec![random(&[2, 1, 3, 3], &mut rng), random(&[2 * 3 * 3, 1], &mut rng)];
    let geom = ConvGeom::new(2, 1);
    let report = check_gradients(&params, 1e-5, |v| {
        let xv = Var::param(x.clone());
        let h = xv.conv2d(&v[0], geom).tanh().reshape(&[2, 18]);
        let score = h.matmul(&v[1]).sum();
        let gx = grad(&score, &[xv]).remove(0);
        gx.square().sum_per_sample().sqrt().add_scalar(-1.0).square().mean()
    });
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}

#[test]
fn second_order_through_transposed_conv_and_recip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[1, 2, 3, 3], &mut rng);
    let params = vec![random(&[2, 2, 4, 4], &mut rng)];
    let geom = ConvGeom::new(2, 1);
    let report = check_gradients(&params, 1e-5, |v| {
        let xv = Var::param(x.clone());
        let y = xv.conv_transpose2d(&v[0], 6, 6, geom).sigmoid().add_scalar(0.5).safe_recip().sum();
        let gx = grad(&y, &[xv]).remove(0);
        gx.square().sum()
    });
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}
