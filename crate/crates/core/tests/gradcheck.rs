//! Finite-difference checks for every differentiable tape operation.

use std::sync::Arc;

use textrec_core::numeric::{AttentionPattern, NodeId, ParamStore, SeededRng, Tape, Tensor};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Compare analytic and central-difference gradients of `f` for every coordinate.
fn check(shapes: &[&[usize]], seed: u64, f: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId) {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let data = (0..s.iter().product()).map(|_| rng.normal()).collect();
            store.add(format!("p{i}"), Tensor::new(s.to_vec(), data).unwrap()).unwrap()
        })
        .collect();
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let nodes: Vec<_> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = f(&mut tape, &nodes);
        (tape.value(out).data()[0], tape, out)
    };
    let (_, tape, out) = eval(&store);
    tape.backward_into(out, &mut store).unwrap();
    for &id in &ids {
        let grad = store.get(id).grad.data().to_vec();
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + H;
            let up = eval(&store).0;
            store.get_mut(id).value.data_mut()[i] = orig - H;
            let down = eval(&store).0;
            store.get_mut(id).value.data_mut()[i] = orig;
            let n = (up - down) / (2.0 * H);
            let scale = a.abs().max(n.abs()).max(1e-3);
            assert!((a - n).abs() / scale < TOL, "{}[{i}]: analytic {a}, numeric {n}", store.get(id).name);
        }
    }
}

/// Reduce any node to a scalar with fixed, non-uniform weights.
fn reduce(tape: &mut Tape<f64>, x: NodeId) -> NodeId {
    let n = tape.value(x).numel();
    let w = (0..n).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect();
    let y = tape.mul_mask(x, w).unwrap();
    tape.sum(y)
}

#[test]
fn matmul_and_linear() {
    check(&[&[3, 4], &[4, 2]], 1, |t, p| {
        let y = t.matmul(p[0], p[1]).unwrap();
        reduce(t, y)
    });
    check(&[&[3, 4], &[5, 4]], 2, |t, p| {
        let y = t.matmul_bt(p[0], p[1]).unwrap();
        reduce(t, y)
    });
    check(&[&[3, 4], &[2, 4], &[2]], 3, |t, p| {
        let y = t.linear(p[0], p[1], p[2]).unwrap();
        reduce(t, y)
    });
}

#[test]
fn elementwise_ops() {
    check(&[&[2, 5], &[2, 5]], 4, |t, p| {
        let y = t.add(p[0], p[1]).unwrap();
        let y = t.scale(y, 1.7);
        reduce(t, y)
    });
    check(&[&[3, 4], &[4]], 5, |t, p| {
        let y = t.add_row(p[0], p[1]).unwrap();
        reduce(t, y)
    });
    check(&[&[3, 6]], 6, |t, p| {
        let y = t.gelu(p[0]);
        reduce(t, y)
    });
}

#[test]
fn normalisations() {
    check(&[&[3, 5], &[5], &[5]], 7, |t, p| {
        let y = t.layer_norm(p[0], p[1], p[2], 1e-12).unwrap();
        reduce(t, y)
    });
    check(&[&[4, 3]], 8, |t, p| {
        let y = t.row_normalize(p[0], 1e-12);
        reduce(t, y)
    });
    check(&[&[3, 5]], 9, |t, p| {
        let y = t.softmax(p[0]);
        reduce(t, y)
    });
    check(&[&[4, 6]], 10, |t, p| t.cross_entropy(p[0], &[0, 5, 2, 2]).unwrap());
}

#[test]
fn indexing_ops() {
    check(&[&[6, 3]], 11, |t, p| {
        let y = t.embedding(p[0], &[4, 1, 4, 0]).unwrap();
        reduce(t, y)
    });
    check(&[&[5, 3], &[2, 3]], 12, |t, p| {
        let a = t.gather_rows(p[0], &[3, 3, 0]).unwrap();
        let b = t.concat_rows(&[a, p[1]]).unwrap();
        reduce(t, b)
    });
    check(&[&[3, 6], &[3, 2]], 13, |t, p| {
        let a = t.slice_cols(p[0], 2, 3).unwrap();
        let b = t.concat_cols(&[p[1], a]).unwrap();
        reduce(t, b)
    });
}

#[test]
fn windowed_attention() {
    let mut global = vec![false; 7];
    global[0] = true;
    let pattern = Arc::new(AttentionPattern::new(7, 2, &global).unwrap());
    check(&[&[7, 4], &[7, 4], &[7, 4]], 14, move |t, p| {
        let y = t.attention(p[0], p[1], p[2], 2, pattern.clone()).unwrap();
        reduce(t, y)
    });
}
