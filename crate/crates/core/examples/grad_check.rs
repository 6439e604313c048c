//! Central-finite-difference gradient checks for the convolution and
//! normalization primitives, in 64-bit mode.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taylor_unfold::autodiff::{grad_check, Graph, Tensor, VarId};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let inputs = vec![rand_tensor(&[1, 2, 5, 9], &mut rng), rand_tensor(&[4, 2, 2, 3], &mut rng)];
    let build = |g: &mut Graph<f64>, ids: &[VarId]| {
        let y = g.conv2d(ids[0], ids[1], None, 2, 1, (1, 0)).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.sum(y2)
    };
    let report = grad_check(build, &inputs, 1e-6);
    println!("conv2d (stride 2):     max rel err {:.2e}", report.max_rel_err);
    assert!(report.passed());

    let inputs = vec![rand_tensor(&[1, 3, 11], &mut rng), rand_tensor(&[2, 3, 5], &mut rng)];
    let build = |g: &mut Graph<f64>, ids: &[VarId]| {
        let y = g.conv1d_dilated_causal(ids[0], ids[1], None, 2).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.sum(y2)
    };
    let report = grad_check(build, &inputs, 1e-6);
    println!("conv1d (dilation 2):   max rel err {:.2e}", report.max_rel_err);
    assert!(report.passed());

    let inputs = vec![
        rand_tensor(&[1, 3, 4, 6], &mut rng),
        rand_tensor(&[3], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let build = |g: &mut Graph<f64>, ids: &[VarId]| {
        let y = g.frame_norm2d(ids[0], ids[1], ids[2], 1e-5).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.sum(y2)
    };
    let report = grad_check(build, &inputs, 1e-5);
    println!("frame_norm2d:          max rel err {:.2e}", report.max_rel_err);
    assert!(report.passed());

    println!("all gradient checks passed");
}
