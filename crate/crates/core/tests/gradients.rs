mod common;

use common::{check_store, random_tensor};
use dcmtl_core::numeric::{clip_global_norm, Gradients, Graph, NodeId, ParamStore, Tensor};
use dcmtl_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

/// Contracts a node with fixed random weights so every output element
/// contributes a distinct amount to the scalar loss.
fn weighted_sum(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.register(*name, random_tensor(&mut rng, shape, 1.5))
            .unwrap();
    }
    s
}

fn p(g: &mut Graph, name: &str) -> NodeId {
    let id = g.params().id(name).unwrap();
    g.param(id)
}

#[test]
fn matmul_adjoint() {
    let mut s = store_with(&[("a", &[3, 4]), ("b", &[4, 2]), ("v", &[4])], 1);
    let err = check_store(&mut s, |g| {
        let (a, b) = (p(g, "a"), p(g, "b"));
        let c = g.matmul(a, b)?;
        weighted_sum(g, c, 9)
    });
    assert!(err < TOL, "{err}");
    let err = check_store(&mut s, |g| {
        let (v, b) = (p(g, "v"), p(g, "b"));
        let c = g.matmul(v, b)?;
        weighted_sum(g, c, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_adjoints() {
    let mut s = store_with(&[("x", &[2, 3]), ("y", &[2, 3]), ("b", &[3])], 2);
    type Build = fn(&mut Graph) -> Result<NodeId>;
    let cases: [(&str, Build); 8] = [
        ("add", |g| {
            let (x, y) = (p(g, "x"), p(g, "y"));
            let z = g.add(x, y)?;
            weighted_sum(g, z, 3)
        }),
        ("sub", |g| {
            let (x, y) = (p(g, "x"), p(g, "y"));
            let z = g.sub(x, y)?;
            weighted_sum(g, z, 3)
        }),
        ("mul", |g| {
            let (x, y) = (p(g, "x"), p(g, "y"));
            let z = g.mul(x, y)?;
            weighted_sum(g, z, 3)
        }),
        ("mul self", |g| {
            let x = p(g, "x");
            let z = g.mul(x, x)?;
            weighted_sum(g, z, 3)
        }),
        ("bias", |g| {
            let (x, b) = (p(g, "x"), p(g, "b"));
            let z = g.add_bias(x, b)?;
            weighted_sum(g, z, 3)
        }),
        ("scale", |g| {
            let x = p(g, "x");
            let z = g.scale(x, -2.5);
            weighted_sum(g, z, 3)
        }),
        ("sigmoid", |g| {
            let x = p(g, "x");
            let z = g.sigmoid(x);
            weighted_sum(g, z, 3)
        }),
        ("tanh", |g| {
            let x = p(g, "x");
            let z = g.tanh(x);
            weighted_sum(g, z, 3)
        }),
    ];
    for (name, build) in cases {
        let err = check_store(&mut s, build);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn structural_adjoints() {
    let mut s = store_with(&[("x", &[3, 2]), ("y", &[3, 4]), ("z", &[2, 2])], 4);
    type Build = fn(&mut Graph) -> Result<NodeId>;
    let cases: [(&str, Build); 5] = [
        ("concat", |g| {
            let (x, y) = (p(g, "x"), p(g, "y"));
            let c = g.concat(&[x, y, x])?;
            weighted_sum(g, c, 5)
        }),
        ("slice", |g| {
            let y = p(g, "y");
            let c = g.slice(y, 1, 3)?;
            weighted_sum(g, c, 5)
        }),
        ("concat rows", |g| {
            let (x, z) = (p(g, "x"), p(g, "z"));
            let c = g.concat_rows(&[x, z])?;
            weighted_sum(g, c, 5)
        }),
        ("slice rows", |g| {
            let y = p(g, "y");
            let c = g.slice_rows(y, 1, 3)?;
            weighted_sum(g, c, 5)
        }),
        ("select rows", |g| {
            let (x, y) = (p(g, "x"), p(g, "y"));
            let y = g.slice(y, 0, 2)?;
            let c = g.select_rows(&[true, false, true], x, y)?;
            weighted_sum(g, c, 5)
        }),
    ];
    for (name, build) in cases {
        let err = check_store(&mut s, build);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn reduction_adjoints() {
    let mut s = store_with(&[("m", &[3, 4]), ("v", &[5])], 6);
    for axis in [0, 1] {
        let err = check_store(&mut s, |g| {
            let m = p(g, "m");
            let r = g.logsumexp(m, axis)?;
            weighted_sum(g, r, 7)
        });
        assert!(err < TOL, "logsumexp axis {axis}: {err}");
    }
    let err = check_store(&mut s, |g| {
        let v = p(g, "v");
        g.logsumexp(v, 0)
    });
    assert!(err < TOL, "vector logsumexp: {err}");
    let err = check_store(&mut s, |g| {
        let m = p(g, "m");
        let sq = g.mul(m, m)?;
        Ok(g.sum(sq))
    });
    assert!(err < TOL, "sum: {err}");
}

#[test]
fn gather_adjoint_accumulates_duplicates() {
    let mut s = store_with(&[("table", &[4, 3])], 8);
    let err = check_store(&mut s, |g| {
        let t = p(g, "table");
        let rows = g.gather(t, &[2, 0, 2, 3])?;
        weighted_sum(g, rows, 11)
    });
    assert!(err < TOL, "{err}");

    let mut g = Graph::new(&s);
    let t = p(&mut g, "table");
    let rows = g.gather(t, &[2, 2]).unwrap();
    let up = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap());
    let prod = g.mul(rows, up).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    let gt = grads.by_name("table").unwrap();
    assert_eq!(gt.row(2), &[11.0, 22.0, 33.0]);
    assert_eq!(gt.row(0), &[0.0, 0.0, 0.0]);
}

#[test]
fn closed_form_values() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let lse = g.logsumexp(z, 0).unwrap();
    assert!((g.value(lse).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let zero = g.constant(Tensor::scalar(0.0));
    let (sg, th) = (g.sigmoid(zero), g.tanh(zero));
    assert_eq!(g.value(sg).item(), 0.5);
    assert_eq!(g.value(th).item(), 0.0);
    let big = g.constant(Tensor::vector(vec![1000.0, 1000.0, -1000.0]));
    let lse = g.logsumexp(big, 0).unwrap();
    assert!((g.value(lse).item() - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-9);
    let sig = g.sigmoid(big);
    assert!(g.value(sig).is_finite());
}

#[test]
fn backward_examples_and_errors() {
    let mut s = ParamStore::new();
    s.register("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
    s.register("unused", Tensor::zeros(&[2, 2])).unwrap();
    let mut g = Graph::new(&s);
    let p = p(&mut g, "p");
    let total = g.sum(p);
    let grads = g.backward(total).unwrap();
    assert_eq!(grads.by_name("p").unwrap().data(), &[1.0, 1.0]);
    assert_eq!(grads.by_name("unused").unwrap().data(), &[0.0; 4]);
    let sq = g.mul(p, p).unwrap();
    let total = g.sum(sq);
    assert_eq!(
        g.backward(total).unwrap().by_name("p").unwrap().data(),
        &[2.0, 4.0]
    );
    assert!(matches!(g.backward(sq), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 2]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(g.add(a, b).unwrap_err().to_string().contains("add"));
    let bias = g.constant(Tensor::zeros(&[2]));
    assert!(g.add_bias(a, bias).is_err());
    assert!(g.slice(a, 2, 4).is_err());
    assert!(matches!(g.gather(a, &[2]), Err(Error::OutOfRange { .. })));
}

#[test]
fn backward_is_deterministic() {
    let s = store_with(&[("a", &[5, 7]), ("b", &[7, 3])], 12);
    let run = || {
        let mut g = Graph::new(&s);
        let (a, b) = (p(&mut g, "a"), p(&mut g, "b"));
        let c = g.matmul(a, b).unwrap();
        let t = g.tanh(c);
        let l = g.logsumexp(t, 1).unwrap();
        let loss = g.sum(l);
        g.backward(loss).unwrap()
    };
    let (x, y) = (run(), run());
    for ((_, gx), (_, gy)) in x.iter().zip(y.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(gx), bits(gy));
    }
}

#[test]
fn clipping_bounds_the_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let mut s = ParamStore::new();
        for i in 0..rng.gen_range(1..4) {
            let len = rng.gen_range(1..6);
            s.register(format!("p{i}"), Tensor::zeros(&[len])).unwrap();
        }
        let mut grads = Gradients::zeros_like(&s);
        let ids: Vec<_> = s.iter().map(|(id, _, _)| id).collect();
        let scale = rng.gen_range(0.1..20.0);
        for id in ids {
            for v in grads.get_mut(id).data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        let max = rng.gen_range(0.5..10.0);
        let before = grads.global_norm();
        let reported = clip_global_norm(&mut grads, max);
        assert!((reported - before).abs() < 1e-12);
        assert!(grads.global_norm() <= max + 1e-9);
        if before <= max {
            assert!((grads.global_norm() - before).abs() < 1e-12);
        }
    }
}
