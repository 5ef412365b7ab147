use std::sync::Arc;

use proptest::prelude::*;
use wsd_tensor::gradcheck::{check_gradients, GradCheckOptions};
use wsd_tensor::{stream_rng, Graph, Result, Tensor, TensorError, Var};

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Uniform entries in [-1, 1] with |x| >= margin, so kinked ops (relu, l1)
/// are never probed within a finite-difference step of their kink.
fn sample(shape: &[usize], seed: u64, stream: u64, margin: f32) -> Tensor {
    let mut rng = stream_rng(seed, stream);
    let mut x = Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng);
    for v in x.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin - 0.1 } else { margin + 0.1 };
        }
    }
    x
}

fn positive(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    sample(shape, seed, stream, 0.0).map(|v| 0.5 + v.abs())
}

const TOL: f64 = 1e-3;

fn assert_grad<F>(name: &str, inputs: &[Tensor], build: F, seed: u64)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let r = check_gradients(inputs, build, GradCheckOptions { seed, ..Default::default() }).unwrap();
    assert!(
        r.max_rel_error <= TOL,
        "{name} seed {seed}: rel err {:.3e} at input {} elem {} (analytic {}, numeric {})",
        r.max_rel_error,
        r.worst_input,
        r.worst_index,
        r.analytic,
        r.numeric
    );
}

#[test]
fn op_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let z = g.input(t(&[2], &[0.0, 0.0]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let mut rng = stream_rng(1, 0);
    let img = g.input(Tensor::uniform([1, 3, 5, 4], -1.0, 1.0, &mut rng));
    let mut eye = Tensor::zeros([3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    let k = g.input(eye);
    let b = g.input(Tensor::zeros([3]));
    let out = g.conv2d(img, k, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(out), g.value(img));
}

#[test]
fn backward_examples() {
    // d/dx mean(x^2) at x = 3 is 6
    let mut g = Graph::new();
    let x = g.param(t(&[1], &[3.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.mean(sq).unwrap();
    assert_eq!(g.backward(loss).unwrap().wrt(x).data(), &[6.0]);

    // sum(A·B) wrt A is 1·Bᵀ broadcast over rows
    let mut g = Graph::new();
    let a = g.param(sample(&[2, 3], 2, 0, 0.0));
    let bm = sample(&[3, 4], 2, 1, 0.0);
    let b = g.input(bm.clone());
    let ab = g.matmul(a, b).unwrap();
    let loss = g.sum(ab).unwrap();
    let ga = g.backward(loss).unwrap().wrt(a);
    for i in 0..2 {
        for k in 0..3 {
            let row_sum: f32 = (0..4).map(|j| bm.data()[k * 4 + j]).sum();
            assert!((ga.data()[i * 3 + k] - row_sum).abs() < 1e-6);
        }
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros([2]));
    let y = g.relu(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let loss = g.sum(x).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros([2, 3]));
    let b = g.input(Tensor::zeros([4, 2]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add"), "{err}");
    let x = g.input(Tensor::zeros([1, 2, 4, 4]));
    let w = g.input(Tensor::zeros([3, 5, 3, 3]));
    let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("conv2d"), "{err}");
}

#[test]
fn nan_is_an_error_state() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[-1.0, 4.0]));
    assert!(matches!(g.log(x), Err(TensorError::NonFinite { .. })));
}

#[test]
fn unary_gradients() {
    for seed in 0..10 {
        let x = sample(&[2, 7], seed, 0, 0.01);
        assert_grad("relu", &[x.clone()], |g, v| g.relu(v[0]), seed);
        assert_grad("gelu", &[x.clone()], |g, v| g.gelu(v[0]), seed);
        assert_grad("sigmoid", &[x.clone()], |g, v| g.sigmoid(v[0]), seed);
        assert_grad("tanh", &[x.clone()], |g, v| g.tanh(v[0]), seed);
        assert_grad("softplus", &[x.clone()], |g, v| g.softplus(v[0]), seed);
        assert_grad("exp", &[x.clone()], |g, v| g.exp(v[0]), seed);
        assert_grad("scale", &[x.clone()], |g, v| g.scale(v[0], -1.7), seed);
        assert_grad("add_scalar", &[x.clone()], |g, v| g.add_scalar(v[0], 0.3), seed);
        let p = positive(&[2, 7], seed, 1);
        assert_grad("log", &[p.clone()], |g, v| g.log(v[0]), seed);
        assert_grad("sqrt", &[p], |g, v| g.sqrt(v[0]), seed);
    }
}

#[test]
fn binary_gradients_with_broadcast() {
    for seed in 0..10 {
        let a = sample(&[3, 4], seed, 0, 0.0);
        let b = sample(&[4], seed, 1, 0.0);
        let c = sample(&[3, 1], seed, 2, 0.0);
        assert_grad("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]), seed);
        assert_grad("sub", &[a.clone(), c.clone()], |g, v| g.sub(v[0], v[1]), seed);
        assert_grad("mul", &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]), seed);
        let d = positive(&[3, 1], seed, 3);
        assert_grad("div", &[a.clone(), d], |g, v| g.div(v[0], v[1]), seed);
        let same = sample(&[3, 4], seed, 4, 0.0);
        assert_grad("mul same", &[a.clone(), same], |g, v| g.mul(v[0], v[1]), seed);
    }
}

#[test]
fn linear_algebra_gradients() {
    for seed in 0..10 {
        let a = sample(&[3, 5], seed, 0, 0.0);
        let b = sample(&[5, 2], seed, 1, 0.0);
        assert_grad("matmul", &[a, b.clone()], |g, v| g.matmul(v[0], v[1]), seed);
        let a3 = sample(&[2, 3, 5], seed, 2, 0.0);
        assert_grad("matmul 3x2", &[a3.clone(), b], |g, v| g.matmul(v[0], v[1]), seed);
        let b3 = sample(&[2, 5, 4], seed, 3, 0.0);
        assert_grad("bmm", &[a3, b3], |g, v| g.matmul(v[0], v[1]), seed);
    }
}

#[test]
fn conv_gradients() {
    for seed in 0..10 {
        let x = sample(&[2, 3, 6, 5], seed, 0, 0.0);
        let w = sample(&[4, 3, 3, 3], seed, 1, 0.0);
        let b = sample(&[4], seed, 2, 0.0);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            assert_grad(
                "conv2d",
                &[x.clone(), w.clone(), b.clone()],
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad),
                seed,
            );
        }
        let w1 = sample(&[2, 3, 1, 1], seed, 3, 0.0);
        assert_grad("conv2d 1x1", &[x.clone(), w1], |g, v| g.conv2d(v[0], v[1], None, 1, 0), seed);
        assert_grad("upsample2x", &[x], |g, v| g.upsample2x(v[0]), seed);
    }
}

#[test]
fn normalization_gradients() {
    for seed in 0..10 {
        let x = sample(&[3, 6], seed, 0, 0.0);
        let gamma = sample(&[6], seed, 1, 0.0);
        let beta = sample(&[6], seed, 2, 0.0);
        assert_grad("layer_norm", &[x.clone(), gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), seed);
        assert_grad("softmax", &[x], |g, v| g.softmax(v[0]), seed);
    }
}

#[test]
fn structural_gradients() {
    for seed in 0..10 {
        let x = sample(&[2, 3, 4], seed, 0, 0.0);
        let y = sample(&[2, 2, 4], seed, 1, 0.0);
        assert_grad("reshape", &[x.clone()], |g, v| g.reshape(v[0], &[6, 4]), seed);
        assert_grad("permute", &[x.clone()], |g, v| g.permute(v[0], &[2, 0, 1]), seed);
        assert_grad("concat", &[x.clone(), y], |g, v| g.concat(&[v[0], v[1]], 1), seed);
        assert_grad("slice", &[x.clone()], |g, v| g.slice(v[0], 2, 1, 3), seed);
        let idx = Arc::new(vec![2, 0, 2]);
        assert_grad("index_select", &[x.clone()], |g, v| g.index_select(v[0], 1, idx.clone()), seed);
        assert_grad("sum", &[x.clone()], |g, v| g.sum(v[0]), seed);
        assert_grad("sum_axis", &[x.clone()], |g, v| g.sum_axis(v[0], 1), seed);
        assert_grad("mean", &[x.clone()], |g, v| g.mean(v[0]), seed);
        assert_grad("mean_axis", &[x.clone()], |g, v| g.mean_axis(v[0], 2), seed);
        let z = sample(&[2, 3, 4], seed, 2, 0.0);
        // keep a−b away from the |·| kink
        let z = Tensor::new(
            z.shape().to_vec(),
            z.data().iter().zip(x.data()).map(|(&b, &a)| if (a - b).abs() < 0.01 { a + 0.1 } else { b }).collect(),
        )
        .unwrap();
        assert_grad("l1", &[x.clone(), z.clone()], |g, v| g.l1(v[0], v[1]), seed);
        assert_grad("mse", &[x, z], |g, v| g.mse(v[0], v[1]), seed);
    }
}

/// Whole-graph finite differences on a composed chain; the analytic result
/// is the product of the per-op vector-Jacobian products applied in reverse.
#[test]
fn three_op_chains_match_whole_graph_differences() {
    for seed in 0..10 {
        let x = sample(&[4, 5], seed, 0, 0.0);
        let w = sample(&[5, 3], seed, 1, 0.0);
        assert_grad(
            "matmul→tanh→softmax",
            &[x.clone(), w.clone()],
            |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.tanh(h)?;
                g.softmax(h)
            },
            seed,
        );
        assert_grad(
            "mul→sigmoid→mean_axis",
            &[x.clone(), x.clone()],
            |g, v| {
                let h = g.mul(v[0], v[1])?;
                let h = g.sigmoid(h)?;
                g.mean_axis(h, 0)
            },
            seed,
        );
    }
}

#[test]
fn five_op_composite() {
    for seed in 0..10 {
        let x = sample(&[1, 2, 6, 6], seed, 0, 0.0);
        let w = sample(&[3, 2, 3, 3], seed, 1, 0.0).map(|v| v * 0.5);
        let b = sample(&[3], seed, 2, 0.0);
        let gamma = sample(&[108], seed, 3, 0.0);
        let beta = sample(&[108], seed, 4, 0.0);
        assert_grad(
            "conv→gelu→layer_norm→exp→mean",
            &[x, w, b, gamma, beta],
            |g, v| {
                let h = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                let h = g.gelu(h)?;
                // normalize over the whole map so the conv bias is not cancelled
                let h = g.reshape(h, &[1, 108])?;
                let h = g.layer_norm(h, v[3], v[4], 1e-5)?;
                let h = g.exp(h)?;
                g.mean(h)
            },
            seed,
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reshape_concat_slice_roundtrip_bitwise(
        rows in 1usize..5, a_cols in 1usize..5, b_cols in 1usize..5, seed in 0u64..1000
    ) {
        let a = sample(&[rows, a_cols], seed, 0, 0.0);
        let b = sample(&[rows, b_cols], seed, 1, 0.0);
        let mut g = Graph::new();
        let va = g.input(a.clone());
        let vb = g.input(b.clone());
        let cat = g.concat(&[va, vb], 1).unwrap();
        let flat = g.reshape(cat, &[rows * (a_cols + b_cols)]).unwrap();
        let back = g.reshape(flat, &[rows, a_cols + b_cols]).unwrap();
        let sa = g.slice(back, 1, 0, a_cols).unwrap();
        let sb = g.slice(back, 1, a_cols, a_cols + b_cols).unwrap();
        prop_assert_eq!(g.value(sa), &a);
        prop_assert_eq!(g.value(sb), &b);
        let p = g.permute(back, &[1, 0]).unwrap();
        let pp = g.permute(p, &[1, 0]).unwrap();
        prop_assert_eq!(g.value(pp), g.value(cat));
    }
}
