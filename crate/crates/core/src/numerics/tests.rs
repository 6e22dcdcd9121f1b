use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Projects an output onto fixed random weights so every coordinate of the
/// upstream gradient is distinct.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let n = g.value(out).numel();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = g.mul_const(out, w);
    g.sum(y)
}

fn check<F>(shapes: &[&[usize]], seed: u64, forward: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
    let names: Vec<String> = (0..params.len()).map(|i| format!("p{i}")).collect();
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    let report = gradient_check(forward, &names, &params, &opts).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn linear_sum_gradient_is_ones() {
    let mut g = Graph::new();
    let p = g.param(&Tensor::from_vec(&[3], vec![0.3, -2.0, 7.0]));
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn quadratic_gradient() {
    let mut g = Graph::new();
    let p = g.param(&Tensor::from_vec(&[2], vec![1.0, 2.0]));
    let sq = g.mul(p, p);
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn non_finite_loss_is_reported() {
    let mut g = Graph::new();
    let p = g.param(&Tensor::from_vec(&[1], vec![f64::INFINITY]));
    let s = g.sum(p);
    assert!(matches!(g.backward(s), Err(crate::Error::NonFinite(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_vec(&[2], vec![1.0, 2.0]));
    let p = g.param(&Tensor::from_vec(&[2], vec![3.0, 4.0]));
    let m = g.mul(c, p);
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn gradcheck_linear_and_matmul() {
    for seed in 1..=3 {
        check(&[&[2, 3, 5], &[5, 4], &[4]], seed, |g, p| {
            let y = g.linear(p[0], p[1], Some(p[2]));
            Ok(probe(g, y, seed))
        });
        check(&[&[3, 5], &[5, 2]], seed, |g, p| {
            let y = g.matmul(p[0], p[1]);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn gradcheck_elementwise() {
    for seed in 1..=3 {
        check(&[&[4, 6], &[4, 6]], seed, |g, p| {
            let a = g.add(p[0], p[1]);
            let m = g.mul(a, p[1]);
            let s = g.scale(m, 0.7);
            Ok(probe(g, s, seed))
        });
        check(&[&[5, 7]], seed, |g, p| {
            let r = g.relu(p[0]);
            let e = g.elu(p[0]);
            let l = g.leaky_relu(p[0], 0.2);
            let a = g.add(r, e);
            let b = g.add(a, l);
            Ok(probe(g, b, seed))
        });
    }
}

#[test]
fn gradcheck_broadcasts_gather_concat_reshape() {
    for seed in 1..=3 {
        check(&[&[2, 3, 4], &[3, 4], &[2, 4]], seed, |g, p| {
            let a = g.add_tiled(p[0], p[1]);
            let b = g.add_per_item(a, p[2]);
            Ok(probe(g, b, seed))
        });
        check(&[&[4, 3], &[2, 3]], seed, |g, p| {
            let r = g.gather_rows(p[0], &[3, 0, 3, 1]);
            let c = g.concat(&[r, p[1]]);
            let s = g.reshape(c, &[2, 3, 3]);
            let m = g.mean_seq(s);
            Ok(probe(g, m, seed))
        });
    }
}

#[test]
fn gradcheck_layer_norm_softmax() {
    for seed in 1..=3 {
        check(&[&[3, 8], &[8], &[8]], seed, |g, p| {
            let y = g.layer_norm(p[0], p[1], p[2], 1e-5);
            Ok(probe(g, y, seed))
        });
        check(&[&[3, 5]], seed, |g, p| {
            let y = g.softmax(p[0]);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn gradcheck_conv_and_adaptive_pool() {
    for seed in 1..=3 {
        let geo = ConvGeometry {
            kernel: 5,
            stride: 2,
            padding: 2,
        };
        check(&[&[2, 23, 3], &[15, 4], &[4]], seed, move |g, p| {
            let y = g.conv1d(p[0], p[1], p[2], geo);
            Ok(probe(g, y, seed))
        });
        // 37 positions into 16 bins: uneven, overlapping windows.
        check(&[&[2, 37, 3]], seed, |g, p| {
            let y = g.adaptive_avg_pool(p[0], 16);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn gradcheck_attention() {
    for seed in 1..=3 {
        check(&[&[2, 5, 8], &[2, 5, 8], &[2, 5, 8]], seed, |g, p| {
            let y = g.attention(p[0], p[1], p[2], 2);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn gradcheck_gat_and_node_mix() {
    for seed in 1..=3 {
        check(&[&[2, 4, 6], &[3, 4]], seed, |g, p| {
            let y = g.gat_attention(p[0], p[1], 3, 0.2);
            Ok(probe(g, y, seed))
        });
        let adj = Tensor::full(&[4, 4], 0.25);
        check(&[&[2, 4, 3]], seed, move |g, p| {
            let y = g.node_mix(p[0], &adj);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn gradcheck_losses() {
    for seed in 1..=3 {
        check(&[&[4, 3]], seed, |g, p| g.cross_entropy(p[0], &[0, 2, 1, 2]));
        check(&[&[6, 5]], seed, |g, p| g.nt_xent(p[0], 0.5));
    }
}

#[test]
fn gradcheck_linear_resample() {
    for seed in 1..=3 {
        check(&[&[2, 20]], seed, |g, p| {
            let y = g.resample_linear(p[0], 3, 11, 20);
            Ok(probe(g, y, seed))
        });
    }
}

#[test]
fn corrupted_adjoint_fails_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2])];
    let names = vec!["x".to_string(), "w".to_string()];
    let forward = |g: &mut Graph<f64>, p: &[Var]| -> Result<Var> {
        let y = g.linear(p[0], p[1], None);
        Ok(probe(g, y, 9))
    };
    let mut analytic = gradcheck::analytic_gradients(&forward, &params).unwrap();
    let opts = GradCheckOptions::default();
    let ok = gradcheck::compare_gradients(&forward, &names, &params, &analytic, &opts).unwrap();
    assert!(ok.passed());
    for v in analytic[1].data_mut() {
        *v = -*v;
    }
    let bad = gradcheck::compare_gradients(&forward, &names, &params, &analytic, &opts).unwrap();
    assert!(!bad.passed());
    assert!(!bad.tensors[1].failures.is_empty());
    assert!(bad.into_result().is_err());
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f64>::new();
    let q = g.constant(rand_tensor(&mut rng, &[3, 7, 8]));
    let k = g.constant(rand_tensor(&mut rng, &[3, 7, 8]));
    let v = g.constant(rand_tensor(&mut rng, &[3, 7, 8]));
    let out = g.attention(q, k, v, 4);
    let probs = g.attention_weights(out).unwrap();
    for row in probs.chunks_exact(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn nt_xent_rejects_degenerate_latents() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]));
    assert!(matches!(g.nt_xent(z, 0.5), Err(crate::Error::NonFinite(_))));
    let odd = g.constant(Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]));
    assert!(matches!(g.nt_xent(odd, 0.5), Err(crate::Error::InvalidArgument(_))));
}
