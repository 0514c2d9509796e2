//! Central finite-difference checks for every differentiable op.

use rcdm_tensor::{Graph, Tensor, Var};

fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 10_000) as f64 / 5_000.0 - 1.0
    })
}

/// Builds a scalar loss from the given inputs; compares analytic and numeric
/// gradients for every input, norm-wise.
fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    // contract the output with fixed weights so every element matters
    let w = pseudo(g.shape(out), 99);
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv);
    let loss = g.sum(prod);
    let grads = g.backward(loss);

    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).dot(&w)
    };
    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("gradient present");
        let mut numeric = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            numeric.data_mut()[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let err = analytic.zip_map(&numeric, |a, b| a - b).norm();
        let scale = numeric.norm().max(1e-8);
        assert!(err / scale < 1e-6, "input {k}: relative error {}", err / scale);
    }
}

#[test]
fn conv2d_all_inputs() {
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        check(
            vec![pseudo(&[2, 3, 6, 6], 1), pseudo(&[4, 3, k, k], 2), pseudo(&[4], 3)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        );
    }
}

#[test]
fn instance_norm_and_modulate() {
    check(
        vec![pseudo(&[2, 3, 4, 4], 4), pseudo(&[2, 3], 5), pseudo(&[2, 3], 6)],
        |g, v| {
            let n = g.instance_norm(v[0], 1e-5);
            g.modulate(n, v[1], v[2])
        },
    );
}

#[test]
fn pooling_upsampling_concat() {
    check(vec![pseudo(&[2, 2, 4, 4], 7), pseudo(&[2, 1, 4, 4], 8)], |g, v| {
        let p = g.avg_pool2(v[0]);
        let u = g.upsample2(p);
        let c = g.concat_channels(u, v[1]);
        g.silu(c)
    });
}

#[test]
fn channel_add_and_global_pool() {
    check(vec![pseudo(&[2, 3, 2, 2], 9), pseudo(&[2, 3], 10)], |g, v| {
        let a = g.add_channel(v[0], v[1]);
        g.global_avg_pool(a)
    });
}

#[test]
fn linear_normalize_cross_entropy() {
    check(vec![pseudo(&[4, 5], 11), pseudo(&[3, 5], 12), pseudo(&[3], 13)], |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]));
        let z = g.l2_normalize_rows(y);
        let s = g.matmul_t(z, z);
        let s = g.scale(s, 2.5);
        g.cross_entropy(s, &[1, 0, 3, 2])
    });
}

#[test]
fn elementwise_and_reductions() {
    check(vec![pseudo(&[3, 4], 14), pseudo(&[3, 4], 15)], |g, v| {
        let a = g.mul(v[0], v[1]);
        let b = g.sub(a, v[1]);
        let c = g.add_scalar(b, 0.3);
        let m = g.mse(c, v[0]);
        let r = g.reshape(v[1], &[12]);
        let s = g.mean(r);
        g.add(m, s)
    });
}

#[test]
fn relu_away_from_kink() {
    let x = pseudo(&[10], 16).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
    check(vec![x], |g, v| g.relu(v[0]));
}

#[test]
fn backward_skips_constants() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::ones(&[2]));
    let b = g.param(Tensor::ones(&[2]));
    let c = g.mul(a, b);
    let s = g.sum(c);
    let grads = g.backward(s);
    assert!(grads.get(a).is_none());
    assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
}
