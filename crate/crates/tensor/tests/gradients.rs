//! Backward rules against the central-difference oracle, in both precisions.

mod common;

use common::rand_tensor;
use hrmedseg_tensor::{
    check_gradients, finite_diff_grad, relative_error, softmax_attention, with_precision, Precision, Result, Tensor,
    LAYER_NORM_EPS,
};

/// Contracts an arbitrary output with fixed random weights so every output
/// element contributes a distinct sensitivity.
fn probe(out: Tensor, seed: u64) -> Result<Tensor> {
    let r = rand_tensor(out.shape(), seed);
    out.mul(&r)?.sum()
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&[Tensor]) -> Result<Tensor> + Copy) {
    let tol32 = 1e-3;
    let tol64 = 1e-5;
    let e32 = with_precision(Precision::F32, || check_gradients(f, inputs, None).unwrap());
    let e64 = with_precision(Precision::F64, || check_gradients(f, inputs, None).unwrap());
    assert!(e32.max_error() < tol32, "{name}: 32-bit rel. error {:?}", e32.errors);
    assert!(e64.max_error() < tol64, "{name}: 64-bit rel. error {:?}", e64.errors);
}

#[test]
fn matmul_gradients() {
    let a = rand_tensor(&[5, 7], 1);
    let b = rand_tensor(&[7, 3], 2);
    let e = with_precision(Precision::F64, || check_gradients(|t| t[0].matmul(&t[1])?.sum(), &[a.clone(), b.clone()], Some(1e-4)).unwrap());
    assert!(e.max_error() < 1e-5, "{:?}", e.errors);
    check("matmul", &[a, b], |t| probe(t[0].matmul(&t[1])?, 3));
}

#[test]
fn batched_and_shared_weight_matmul_gradients() {
    check("bmm", &[rand_tensor(&[2, 3, 4], 4), rand_tensor(&[2, 4, 5], 5)], |t| probe(t[0].matmul(&t[1])?, 6));
    check("linear", &[rand_tensor(&[2, 3, 4], 7), rand_tensor(&[4, 2], 8)], |t| probe(t[0].matmul(&t[1])?, 9));
}

#[test]
fn softmax_and_attention_gradients() {
    check("softmax", &[rand_tensor(&[3, 5], 10)], |t| probe(t[0].mul_scalar(2.0)?.softmax()?, 11));
    check(
        "softmax_attention",
        &[rand_tensor(&[3, 2], 12), rand_tensor(&[4, 2], 13), rand_tensor(&[4, 3], 14)],
        |t| probe(softmax_attention(&t[0], &t[1], &t[2], 0.7)?, 15),
    );
}

#[test]
fn conv_family_gradients() {
    check(
        "conv2d",
        &[rand_tensor(&[2, 2, 5, 4], 16), rand_tensor(&[3, 2, 3, 3], 17), rand_tensor(&[3], 18)],
        |t| probe(t[0].conv2d(&t[1], Some(&t[2]), 1, 1, 1)?, 19),
    );
    check(
        "conv2d_strided",
        &[rand_tensor(&[1, 2, 6, 6], 20), rand_tensor(&[2, 2, 3, 3], 21)],
        |t| probe(t[0].conv2d(&t[1], None, 2, 1, 1)?, 22),
    );
    check(
        "depthwise",
        &[rand_tensor(&[2, 3, 4, 4], 23), rand_tensor(&[3, 1, 3, 3], 24), rand_tensor(&[3], 25)],
        |t| probe(t[0].depthwise_conv2d(&t[1], Some(&t[2]), 1, 1)?, 26),
    );
    check(
        "pointwise",
        &[rand_tensor(&[2, 3, 3, 2], 27), rand_tensor(&[4, 3, 1, 1], 28)],
        |t| probe(t[0].conv2d(&t[1], None, 1, 0, 1)?, 29),
    );
    check(
        "conv_transpose2d",
        &[rand_tensor(&[2, 3, 2, 3], 30), rand_tensor(&[3, 2, 2, 2], 31), rand_tensor(&[2], 32)],
        |t| probe(t[0].conv_transpose2d(&t[1], Some(&t[2]), 2, 0)?, 33),
    );
}

#[test]
fn resampling_gradients() {
    check("avg_pool2d", &[rand_tensor(&[1, 2, 5, 5], 34)], |t| probe(t[0].avg_pool2d(3, 1, 1)?, 35));
    check("avg_pool_large", &[rand_tensor(&[1, 1, 4, 4], 36)], |t| probe(t[0].avg_pool2d(13, 1, 6)?, 37));
    check("bilinear_up", &[rand_tensor(&[1, 2, 3, 4], 38)], |t| probe(t[0].bilinear_resize(7, 9)?, 39));
    check("bilinear_down", &[rand_tensor(&[1, 1, 8, 6], 40)], |t| probe(t[0].bilinear_resize(3, 4)?, 41));
}

#[test]
fn layer_norm_gradients() {
    check(
        "layer_norm",
        &[rand_tensor(&[3, 6], 42), rand_tensor(&[6], 43), rand_tensor(&[6], 44)],
        |t| probe(t[0].layer_norm(&t[1], &t[2], LAYER_NORM_EPS)?, 45),
    );
}

#[test]
fn activation_gradients() {
    let points = Tensor::new(&[5], vec![-2.0, -0.5, 0.0, 0.5, 2.0]).unwrap();
    check("gelu", std::slice::from_ref(&points), |t| probe(t[0].gelu()?, 46));
    check("silu", std::slice::from_ref(&points), |t| probe(t[0].silu()?, 47));
    check("sigmoid", std::slice::from_ref(&points), |t| probe(t[0].sigmoid()?, 48));
    let off_kink = Tensor::new(&[4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
    check("elu_plus_one", &[off_kink], |t| probe(t[0].elu_plus_one()?, 49));
}

#[test]
fn elementwise_and_shape_gradients() {
    let a = rand_tensor(&[2, 3, 4], 50);
    let b = rand_tensor(&[3, 1], 51);
    check("broadcast_mul", &[a.clone(), b.clone()], |t| probe(t[0].mul(&t[1])?, 52));
    check("broadcast_sub", &[a.clone(), b.clone()], |t| probe(t[0].sub(&t[1])?, 53));
    let pos = rand_tensor(&[3, 1], 54).add_scalar(2.0).unwrap();
    check("broadcast_div", &[a.clone(), pos.clone()], |t| probe(t[0].div(&t[1])?, 55));
    check("ln_pow", &[pos], |t| probe(t[0].ln()?.add(&t[0].powf(2.0)?)?, 56));
    check("permute", std::slice::from_ref(&a), |t| probe(t[0].permute(&[1, 2, 0])?, 57));
    check("narrow_concat", std::slice::from_ref(&a), |t| {
        let x = Tensor::concat(&[t[0].narrow(2, 2, 2)?, t[0].narrow(2, 0, 3)?], 2)?;
        probe(x.exp()?, 58)
    });
    check("sum_axis", &[a], |t| probe(t[0].sum_axis(1, true)?.square()?, 59));
}

#[test]
fn shared_use_accumulates_both_paths() {
    // y = f(x) + g(x) with f = sin-free polynomial, g = exp
    let x = rand_tensor(&[4], 60);
    let leaf = x.with_grad();
    let y = leaf.square().unwrap().add(&leaf.exp().unwrap()).unwrap().sum().unwrap();
    y.backward().unwrap();
    let oracle = with_precision(Precision::F64, || {
        finite_diff_grad(|t| t.square()?.add(&t.exp()?)?.sum(), &x, 1e-5).unwrap()
    });
    assert!(relative_error(&leaf.grad().unwrap(), oracle.data()) < 1e-5);
    let expect: Vec<f64> = x.data().iter().map(|v| 2.0 * v + v.exp()).collect();
    assert!(relative_error(&leaf.grad().unwrap(), &expect) < 1e-6);
}

#[test]
fn backward_basics() {
    let x = rand_tensor(&[3, 2], 61).with_grad();
    x.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    let x = rand_tensor(&[3, 2], 62).with_grad();
    x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(x.grad().unwrap(), expect);
}

#[test]
fn finite_difference_converges_quadratically() {
    // error of the central difference shrinks ~h² on a matmul chain
    with_precision(Precision::F64, || {
        let a = rand_tensor(&[3, 4], 63);
        let b = rand_tensor(&[4, 2], 64);
        let f = |x: &Tensor| x.matmul(&b)?.exp()?.sum();
        let leaf = a.with_grad();
        f(&leaf).unwrap().backward().unwrap();
        let exact = leaf.grad().unwrap();
        let e3 = relative_error(&exact, finite_diff_grad(f, &a, 1e-3).unwrap().data());
        let e4 = relative_error(&exact, finite_diff_grad(f, &a, 1e-4).unwrap().data());
        assert!(e3 < 1e-5 && e4 < 1e-7, "{e3} {e4}");
        let ratio = e3 / e4;
        assert!((50.0..200.0).contains(&ratio), "h² ratio {ratio}");
    });
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let x = rand_tensor(&[6], 65);
    let bad = |t: &[Tensor]| t[0].map_with_grad("bad_cube", |v| v * v * v, |v| 2.0 * v * v)?.sum();
    let good = |t: &[Tensor]| t[0].map_with_grad("cube", |v| v * v * v, |v| 3.0 * v * v)?.sum();
    let e_bad = with_precision(Precision::F64, || check_gradients(bad, std::slice::from_ref(&x), None).unwrap());
    let e_good = with_precision(Precision::F64, || check_gradients(good, &[x], None).unwrap());
    assert!(e_bad.max_error() > 0.1);
    assert!(e_good.max_error() < 1e-6);
}
