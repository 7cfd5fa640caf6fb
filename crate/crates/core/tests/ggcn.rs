//! Gated graph convolution against loop-based oracles, plus the scoring head.

use cmrin::cross_modal::{label_one_hot, EdgeDescriptor};
use cmrin::model::{edge_operators, final_context, fuse_multimodal, ggcn_layer, matching_scores, EdgeBiasParams, LayerParams};
use cmrin::tensor::{Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn t(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

/// x (1 x n) times w (n x m).
fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    (0..w[0].len()).map(|c| x.iter().zip(w).map(|(a, row)| a * row[c]).sum()).collect()
}

struct Graph {
    k: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    labels: Vec<u8>,
}

fn random_graph(rng: &mut ChaCha8Rng, k: usize, types: u8) -> Graph {
    let (mut src, mut dst, mut labels) = (vec![], vec![], vec![]);
    for i in 0..k {
        for j in 0..k {
            if i != j && rng.random_bool(0.5) {
                src.push(i);
                dst.push(j);
                labels.push(rng.random_range(1..=types));
            }
        }
    }
    Graph { k, src, dst, labels }
}

struct Layer {
    w_out: Mat,
    w_in: Mat,
    w_self: Mat,
    b_self: Vec<f64>,
    bias: Mat,
}

fn random_layer(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, types: usize) -> Layer {
    Layer {
        w_out: rand_mat(rng, d_in, d_out),
        w_in: rand_mat(rng, d_in, d_out),
        w_self: rand_mat(rng, d_in, d_out),
        b_self: rand_mat(rng, 1, d_out).remove(0),
        bias: rand_mat(rng, types, d_out),
    }
}

/// Runs the library layer with per-edge gates and per-vertex gates.
fn library(g: &Graph, x: &Mat, layer: &Layer, edge_gates: &[f64], vertex_gates: &[f64], types: usize) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let xv = tape.constant(t(x));
    let lp = LayerParams {
        w_out: tape.constant(t(&layer.w_out)),
        w_in: tape.constant(t(&layer.w_in)),
        w_self: tape.constant(t(&layer.w_self)),
        b_self: tape.constant(Tensor::row(&layer.b_self)),
        bias: EdgeBiasParams::Typed(tape.constant(t(&layer.bias))),
    };
    let onehot = tape.constant(label_one_hot(&g.labels, types)?);
    let desc = EdgeDescriptor::Typed(onehot);
    let gates = tape.constant(Tensor::column(edge_gates));
    let vg = tape.constant(Tensor::column(vertex_gates));
    let ops = edge_operators(&mut tape, g.k, &g.src, &g.dst, Some(gates), Some(&desc), vg)?;
    let y = ggcn_layer(&mut tape, xv, ops.as_ref(), &lp)?;
    Ok(tape.value(y).clone())
}

/// Sum over neighbours, written vertex by vertex.
fn gated_oracle(g: &Graph, x: &Mat, layer: &Layer, edge_gates: &[f64], vertex_gates: &[f64]) -> Mat {
    (0..g.k)
        .map(|i| {
            let mut acc: Vec<f64> = vecmat(&x[i], &layer.w_self).iter().zip(&layer.b_self).map(|(a, b)| a + b).collect();
            for e in 0..g.src.len() {
                let (s, d, p) = (g.src[e], g.dst[e], edge_gates[e]);
                let bias = &layer.bias[g.labels[e] as usize - 1];
                let msg = if s == i {
                    Some(vecmat(&x[d], &layer.w_out).iter().map(|v| v * vertex_gates[d]).collect::<Vec<_>>())
                } else if d == i {
                    Some(vecmat(&x[s], &layer.w_in).iter().map(|v| v * vertex_gates[s]).collect::<Vec<_>>())
                } else {
                    None
                };
                if let Some(msg) = msg {
                    for c in 0..acc.len() {
                        acc[c] += p * (msg[c] + bias[c]);
                    }
                }
            }
            acc.iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

fn max_diff(a: &Tensor, b: &Mat) -> f64 {
    a.max_abs_diff(&t(b))
}

#[test]
fn reduces_to_plain_graph_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let k = rng.random_range(2..8);
        let (d_in, d_out) = (rng.random_range(1..6), rng.random_range(1..6));
        let g = random_graph(&mut rng, k, 1);
        if g.src.is_empty() {
            continue;
        }
        let x = rand_mat(&mut rng, k, d_in);
        let mut layer = random_layer(&mut rng, d_in, d_out, 1);
        layer.bias = vec![vec![0.0; d_out]];
        let got = library(&g, &x, &layer, &vec![1.0; g.src.len()], &vec![1.0; k], 1).unwrap();
        // plain directed GCN: self + sum over successors (W_out) + predecessors (W_in)
        let mut adj = vec![vec![false; k]; k];
        for (&s, &d) in g.src.iter().zip(&g.dst) {
            adj[s][d] = true;
        }
        let expected: Mat = (0..k)
            .map(|i| {
                let mut z: Vec<f64> = vecmat(&x[i], &layer.w_self);
                for c in 0..d_out {
                    z[c] += layer.b_self[c];
                }
                for j in 0..k {
                    if adj[i][j] {
                        for (c, v) in vecmat(&x[j], &layer.w_out).into_iter().enumerate() {
                            z[c] += v;
                        }
                    }
                    if adj[j][i] {
                        for (c, v) in vecmat(&x[j], &layer.w_in).into_iter().enumerate() {
                            z[c] += v;
                        }
                    }
                }
                z.into_iter().map(|v| v.max(0.0)).collect()
            })
            .collect();
        assert!(max_diff(&got, &expected) <= 1e-12);
    }
}

#[test]
fn gated_layer_matches_vertexwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let k = rng.random_range(2..8);
        let types = rng.random_range(1..12usize);
        let g = random_graph(&mut rng, k, types as u8);
        if g.src.is_empty() {
            continue;
        }
        let x = rand_mat(&mut rng, k, 4);
        let layer = random_layer(&mut rng, 4, 3, types);
        let pe: Vec<f64> = (0..g.src.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let pv: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let got = library(&g, &x, &layer, &pe, &pv, types).unwrap();
        assert!(max_diff(&got, &gated_oracle(&g, &x, &layer, &pe, &pv)) <= 1e-12);
    }
}

#[test]
fn closed_edge_gates_equal_the_edgeless_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let k = rng.random_range(2..7);
        let g = random_graph(&mut rng, k, 11);
        if g.src.is_empty() {
            continue;
        }
        let x = rand_mat(&mut rng, k, 4);
        let layer = random_layer(&mut rng, 4, 3, 11);
        let pv: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let silenced = library(&g, &x, &layer, &vec![0.0; g.src.len()], &pv, 11).unwrap();
        let empty = Graph { k, src: vec![], dst: vec![], labels: vec![] };
        let alone = library(&empty, &x, &layer, &[], &pv, 11).unwrap();
        assert_eq!(silenced, alone);
        // and the edgeless layer is a pure self-update
        let selfonly: Mat = (0..k)
            .map(|i| vecmat(&x[i], &layer.w_self).iter().zip(&layer.b_self).map(|(a, b)| (a + b).max(0.0)).collect())
            .collect();
        assert!(max_diff(&alone, &selfonly) <= 1e-15);
    }
}

#[test]
fn zero_vertex_gate_removes_influence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let k = rng.random_range(3..7);
        let g = random_graph(&mut rng, k, 5);
        let x = rand_mat(&mut rng, k, 4);
        let layer = random_layer(&mut rng, 4, 3, 5);
        let pe: Vec<f64> = (0..g.src.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let silent = rng.random_range(0..k);
        let mut pv: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..2.0)).collect();
        pv[silent] = 0.0;
        let a = library(&g, &x, &layer, &pe, &pv, 5).unwrap();
        let mut x2 = x.clone();
        x2[silent] = rand_mat(&mut rng, 1, 4).remove(0);
        let b = library(&g, &x2, &layer, &pe, &pv, 5).unwrap();
        for i in (0..k).filter(|&i| i != silent) {
            assert_eq!(a.row_slice(i), b.row_slice(i));
        }
    }
}

#[test]
fn fusion_and_final_context_layout() {
    let mut tape = Tape::new();
    let xs = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let h = tape.constant(Tensor::zeros(&[2, 3]));
    let xm = fuse_multimodal(&mut tape, xs, h).unwrap();
    assert_eq!(tape.shape(xm), &[2, 5]);
    assert_eq!(tape.value(xm).row_slice(1), &[3.0, 4.0, 0.0, 0.0, 0.0]);

    let p = tape.constant(Tensor::from_rows(&[vec![0.5, 0.5, 0.2, 0.2, 0.04], vec![0.1, 0.2, 0.3, 0.4, 0.12]]).unwrap());
    let wp = tape.constant(Tensor::zeros(&[5, 4]));
    let xc = tape.constant(Tensor::from_rows(&[vec![7.0, 8.0, 9.0], vec![1.0, 1.0, 1.0]]).unwrap());
    let x = final_context(&mut tape, p, wp, xc).unwrap();
    assert_eq!(tape.shape(x), &[2, 7]);
    let spatial = tape.slice(x, 1, 0, 4).unwrap();
    let ctx = tape.slice(x, 1, 4, 7).unwrap();
    assert!(tape.value(spatial).data().iter().all(|&v| v == 0.0));
    assert_eq!(tape.value(ctx).row_slice(0), &[7.0, 8.0, 9.0]);
}

#[test]
fn cosine_scores() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let x = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![-3.0, 0.0], vec![0.0, 5.0]]).unwrap());
    let hg = tape.constant(Tensor::row(&[0.7, 0.0]));
    let s = matching_scores(&mut tape, x, hg, eye, eye).unwrap();
    assert_eq!(tape.value(s).data(), &[1.0, -1.0, 0.0]);

    let zero = tape.constant(Tensor::row(&[0.0, 0.0]));
    let err = matching_scores(&mut tape, x, zero, eye, eye).unwrap_err();
    assert!(matches!(err, TensorError::DegenerateNorm { .. }));
}

#[test]
fn scores_ignore_positive_row_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let k = rng.random_range(1..6);
        let x = rand_mat(&mut rng, k, 5);
        let scaled: Mat = x.iter().map(|r| {
            let c = rng.random_range(1e-3..1e3);
            r.iter().map(|v| v * c).collect()
        }).collect();
        let w0 = rand_mat(&mut rng, 5, 4);
        let w1 = rand_mat(&mut rng, 3, 4);
        let hg = rand_mat(&mut rng, 1, 3);
        let run = |x: &Mat| {
            let mut tape = Tape::new();
            let (xv, h, a, b) = (tape.constant(t(x)), tape.constant(t(&hg)), tape.constant(t(&w0)), tape.constant(t(&w1)));
            let s = matching_scores(&mut tape, xv, h, a, b).unwrap();
            tape.value(s).clone()
        };
        let (a, b) = (run(&x), run(&scaled));
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!(a.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }
}
