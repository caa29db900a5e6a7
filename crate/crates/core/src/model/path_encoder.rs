//! Gene embeddings to path embeddings: scatter, positional and pair-edge
//! encodings, in-path node scoring, weighted pooling and cross-attention
//! against path sentence embeddings.

use super::forward::Bound;
use super::gene_encoder::{attend, split_heads};
use super::{ModelConfig, ModelError};
use crate::graph::ScatterIndex;
use crate::numerics::{Tape, Var};

/// Tape handles for one path-encoder layer.
#[derive(Clone, Copy, Debug)]
pub struct PathLayer {
    pub wu: Var,
    pub bu: Var,
    pub pos: Var,
    pub pair: Var,
    pub ws1: Var,
    pub bs1: Var,
    pub ws2: Var,
    pub bs2: Var,
    pub cq: Var,
    pub ck: Var,
    pub cv: Var,
    pub co: Var,
}

impl PathLayer {
    pub fn bind(b: &Bound, l: usize) -> Result<Self, ModelError> {
        let v = |s: &str| b.var(&format!("path.{l}.{s}"));
        Ok(Self {
            wu: v("wu")?,
            bu: v("bu")?,
            pos: v("pos")?,
            pair: v("pair")?,
            ws1: v("ws1")?,
            bs1: v("bs1")?,
            ws2: v("ws2")?,
            bs2: v("bs2")?,
            cq: v("cq")?,
            ck: v("ck")?,
            cv: v("cv")?,
            co: v("co")?,
        })
    }
}

/// `U = scatter(H)·W_u + b_u`.
pub fn path_specific_embedding(
    tape: &mut Tape,
    h: Var,
    index: &ScatterIndex,
    layer: &PathLayer,
) -> Result<Var, ModelError> {
    let g = tape.gather_rows(h, index.flat_nodes.clone())?;
    let u = tape.matmul(g, layer.wu)?;
    Ok(tape.add_row(u, layer.bu)?)
}

/// `p[position] + e[pair type]` per flat row. Independent of the cell.
pub fn path_encodings(
    tape: &mut Tape,
    index: &ScatterIndex,
    layer: &PathLayer,
) -> Result<Var, ModelError> {
    let table = tape.value(layer.pos).rows();
    if let Some(&p) = index.positions.iter().find(|&&p| p >= table) {
        return Err(ModelError::Structure(format!(
            "path position {p} exceeds the positional table of {table} rows"
        )));
    }
    let pos = tape.gather_rows(layer.pos, index.positions.clone())?;
    let pair = tape.gather_rows(layer.pair, index.pair_edge_types.clone())?;
    Ok(tape.add(pos, pair)?)
}

/// `Ū = U + encodings`.
pub fn apply_path_encodings(tape: &mut Tape, u: Var, encodings: Var) -> Result<Var, ModelError> {
    Ok(tape.add(u, encodings)?)
}

/// `S̄ = ScatterSoftmax(tanh(Ū·W_s1 + b_s1)·W_s2 + b_s2)`.
pub fn node_scores(
    tape: &mut Tape,
    ubar: Var,
    index: &ScatterIndex,
    layer: &PathLayer,
) -> Result<Var, ModelError> {
    let s = tape.matmul(ubar, layer.ws1)?;
    let s = tape.add_row(s, layer.bs1)?;
    let s = tape.tanh(s)?;
    let s = tape.matmul(s, layer.ws2)?;
    let s = tape.add_row(s, layer.bs2)?;
    Ok(tape.scatter_softmax(s, index.segment_ids.clone(), index.num_paths)?)
}

/// Concatenation over score sets `j` of `ScatterSum(S̄[:, j] ⊙ Ū)`.
pub fn aggregate_path_embedding(
    tape: &mut Tape,
    sbar: Var,
    ubar: Var,
    index: &ScatterIndex,
) -> Result<Var, ModelError> {
    let r = tape.value(sbar).cols();
    let mut parts = Vec::with_capacity(r);
    for j in 0..r {
        let col = tape.slice_cols(sbar, j, j + 1)?;
        let weighted = tape.mul_col(ubar, col)?;
        parts.push(tape.scatter_sum(weighted, index.segment_ids.clone(), index.num_paths)?);
    }
    Ok(tape.concat_cols(&parts)?)
}

/// Per-head keys and values from the `p × d_llm` path sentence matrix.
pub fn cross_projections(
    tape: &mut Tape,
    path_text: Var,
    layer: &PathLayer,
    cfg: &ModelConfig,
) -> Result<(Vec<Var>, Vec<Var>), ModelError> {
    let k = tape.matmul(path_text, layer.ck)?;
    let v = tape.matmul(path_text, layer.cv)?;
    Ok((
        split_heads(tape, k, cfg.heads, cfg.d_k)?,
        split_heads(tape, v, cfg.heads, cfg.d_k)?,
    ))
}

/// `P = P_raw + Concat(heads)·W_O` with queries from `P_raw`.
pub fn cross_attend(
    tape: &mut Tape,
    p_raw: Var,
    keys: &[Var],
    values: &[Var],
    layer: &PathLayer,
    cfg: &ModelConfig,
) -> Result<Var, ModelError> {
    let q = tape.matmul(p_raw, layer.cq)?;
    let (cat, _) = attend(tape, q, keys, values, None, cfg.d_k)?;
    let o = tape.matmul(cat, layer.co)?;
    Ok(tape.add(p_raw, o)?)
}

/// A full path-encoder layer given precomputed encodings and projections.
#[allow(clippy::too_many_arguments)]
pub fn path_layer_forward(
    tape: &mut Tape,
    h: Var,
    index: &ScatterIndex,
    layer: &PathLayer,
    encodings: Var,
    keys: &[Var],
    values: &[Var],
    cfg: &ModelConfig,
) -> Result<Var, ModelError> {
    let u = path_specific_embedding(tape, h, index, layer)?;
    let ubar = apply_path_encodings(tape, u, encodings)?;
    let sbar = node_scores(tape, ubar, index, layer)?;
    let p_raw = aggregate_path_embedding(tape, sbar, ubar, index)?;
    cross_attend(tape, p_raw, keys, values, layer, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_scatter_index, Path, PathList};
    use crate::model::testutil;
    use crate::numerics::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    struct Dims {
        h: usize,
        u: usize,
        r: usize,
        hk: usize,
        d_llm: usize,
        max_len: usize,
        pair_types: usize,
    }

    fn layer(tape: &mut Tape, rng: &mut ChaCha8Rng, d: &Dims, zero: bool) -> PathLayer {
        let mut p = |r: usize, c: usize| {
            let t = if zero { Tensor::zeros(&[r, c]) } else { random(rng, r, c) };
            tape.param("p", t).unwrap()
        };
        PathLayer {
            wu: p(d.h, d.u),
            bu: p(1, d.u),
            pos: p(d.max_len, d.u),
            pair: p(d.pair_types, d.u),
            ws1: p(d.u, d.r),
            bs1: p(1, d.r),
            ws2: p(d.r, d.r),
            bs2: p(1, d.r),
            cq: p(d.h, d.hk),
            ck: p(d.d_llm, d.hk),
            cv: p(d.d_llm, d.hk),
            co: p(d.hk, d.h),
        }
    }

    fn dims() -> Dims {
        Dims { h: 8, u: 4, r: 2, hk: 8, d_llm: 5, max_len: 4, pair_types: 3 }
    }

    #[test]
    fn worked_example_row_three_is_gene_four() {
        let toy = testutil::worked_example();
        let idx = build_scatter_index(&toy.1, &toy.0);
        let mut tape = Tape::new();
        let h_val = Tensor::from_rows(&(0..5).map(|i| vec![i as f64; 3]).collect::<Vec<_>>()).unwrap();
        let h = tape.constant(h_val).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.set(i, i, 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dims { h: 3, u: 3, r: 1, hk: 2, d_llm: 2, max_len: 4, pair_types: 2 };
        let mut l = layer(&mut tape, &mut rng, &d, true);
        l.wu = tape.param("wu", eye).unwrap();
        let u = path_specific_embedding(&mut tape, h, &idx, &l).unwrap();
        assert_eq!(tape.value(u).row(2), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn shared_node_gets_identical_rows_before_encoding() {
        let (graph, _) = testutil::worked_example();
        // gene index 2 sits at position 1 in the first path and 0 in the second
        let paths = PathList::new(vec![
            Path { id: "a".into(), nodes: vec![0, 2, 3] },
            Path { id: "b".into(), nodes: vec![2, 3, 4] },
        ]);
        let idx = build_scatter_index(&paths, &graph);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let d = Dims { h: 3, u: 2, r: 1, hk: 2, d_llm: 2, max_len: 4, pair_types: 2 };
        let l = layer(&mut tape, &mut rng, &d, false);
        let h = tape.constant(random(&mut rng, 5, 3)).unwrap();
        let u = path_specific_embedding(&mut tape, h, &idx, &l).unwrap();
        let enc = path_encodings(&mut tape, &idx, &l).unwrap();
        let ubar = apply_path_encodings(&mut tape, u, enc).unwrap();
        let (a, b) = (1, 3);
        assert_eq!(idx.flat_nodes[a], 2);
        assert_eq!(idx.flat_nodes[b], 2);
        assert_eq!(tape.value(u).row(a), tape.value(u).row(b));
        let pos = tape.value(l.pos);
        for c in 0..2 {
            let delta = tape.value(ubar).get(a, c) - tape.value(ubar).get(b, c);
            assert!((delta - (pos.get(1, c) - pos.get(0, c))).abs() < 1e-12);
        }
    }

    #[test]
    fn position_overflow_is_an_error() {
        let (graph, paths) = testutil::worked_example();
        let idx = build_scatter_index(&paths, &graph);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let d = Dims { h: 3, u: 2, r: 1, hk: 2, d_llm: 2, max_len: 2, pair_types: 2 };
        let l = layer(&mut tape, &mut rng, &d, false);
        assert!(matches!(path_encodings(&mut tape, &idx, &l), Err(ModelError::Structure(_))));
    }

    #[test]
    fn zero_scoring_weights_give_uniform_scores() {
        let (graph, paths) = testutil::worked_example();
        let idx = build_scatter_index(&paths, &graph);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let d = Dims { h: 3, u: 2, r: 2, hk: 2, d_llm: 2, max_len: 4, pair_types: 2 };
        let l = layer(&mut tape, &mut rng, &d, true);
        let ubar = tape.constant(random(&mut rng, idx.k(), 2)).unwrap();
        let s = node_scores(&mut tape, ubar, &idx, &l).unwrap();
        let lens = paths.lengths();
        for j in 0..idx.k() {
            let want = 1.0 / lens[idx.segment_ids[j]] as f64;
            assert!(tape.value(s).row(j).iter().all(|&v| (v - want).abs() < 1e-15));
        }
    }

    fn random_index(rng: &mut ChaCha8Rng) -> ScatterIndex {
        let p = rng.gen_range(1..6);
        let mut flat = Vec::new();
        let mut seg = Vec::new();
        let mut pos = Vec::new();
        for m in 0..p {
            let len = rng.gen_range(2..8);
            for i in 0..len {
                flat.push(rng.gen_range(0..6));
                seg.push(m);
                pos.push(i);
            }
        }
        let k = flat.len();
        ScatterIndex {
            flat_nodes: flat.into(),
            segment_ids: seg.into(),
            positions: pos.into(),
            pair_edge_types: vec![0; k].into(),
            num_paths: p,
            terminal_type: 1,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn scores_normalize_and_pooling_matches_loops(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = random_index(&mut rng);
            let d = dims();
            let mut tape = Tape::new();
            let l = layer(&mut tape, &mut rng, &d, false);
            let ubar_v = random(&mut rng, idx.k(), d.u).map(|v| 3.0 * v);
            let ubar = tape.constant(ubar_v.clone()).unwrap();
            let s = node_scores(&mut tape, ubar, &idx, &l).unwrap();
            let p = aggregate_path_embedding(&mut tape, s, ubar, &idx).unwrap();
            let s = tape.value(s);
            for m in 0..idx.num_paths {
                for j in 0..d.r {
                    let total: f64 = (0..idx.k()).filter(|&i| idx.segment_ids[i] == m).map(|i| s.get(i, j)).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
            let p = tape.value(p);
            prop_assert_eq!(p.shape(), &[idx.num_paths, d.r * d.u]);
            for m in 0..idx.num_paths {
                for j in 0..d.r {
                    for c in 0..d.u {
                        let mut acc = 0.0;
                        for i in 0..idx.k() {
                            if idx.segment_ids[i] == m {
                                acc += s.get(i, j) * ubar_v.get(i, c);
                            }
                        }
                        prop_assert!((p.get(m, j * d.u + c) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn node_scores_match_dense_per_path_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let idx = random_index(&mut rng);
        let d = dims();
        let mut tape = Tape::new();
        let l = layer(&mut tape, &mut rng, &d, false);
        let ubar_v = random(&mut rng, idx.k(), d.u);
        let ubar = tape.constant(ubar_v.clone()).unwrap();
        let s = node_scores(&mut tape, ubar, &idx, &l).unwrap();
        let pre = {
            let a = ubar_v.matmul(tape.value(l.ws1)).unwrap();
            let b1 = tape.value(l.bs1);
            let mut a = a;
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    a.set(i, j, (a.get(i, j) + b1.get(0, j)).tanh());
                }
            }
            let mut z = a.matmul(tape.value(l.ws2)).unwrap();
            let b2 = tape.value(l.bs2);
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    z.set(i, j, z.get(i, j) + b2.get(0, j));
                }
            }
            z
        };
        for m in 0..idx.num_paths {
            let rows: Vec<usize> = (0..idx.k()).filter(|&i| idx.segment_ids[i] == m).collect();
            for j in 0..d.r {
                let denom: f64 = rows.iter().map(|&i| pre.get(i, j).exp()).sum();
                for &i in &rows {
                    let want = pre.get(i, j).exp() / denom;
                    assert!((tape.value(s).get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_hot_and_uniform_weights() {
        let idx = ScatterIndex {
            flat_nodes: vec![0, 1, 2].into(),
            segment_ids: vec![0, 0, 0].into(),
            positions: vec![0, 1, 2].into(),
            pair_edge_types: vec![0, 0, 1].into(),
            num_paths: 1,
            terminal_type: 1,
        };
        let mut tape = Tape::new();
        let ubar = tape
            .constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]).unwrap())
            .unwrap();
        let hot = tape.constant(Tensor::new(vec![3, 1], vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
        let p = aggregate_path_embedding(&mut tape, hot, ubar, &idx).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0, 4.0]);
        let uni = tape.constant(Tensor::filled(&[3, 1], 1.0 / 3.0)).unwrap();
        let p = aggregate_path_embedding(&mut tape, uni, ubar, &idx).unwrap();
        assert!((tape.value(p).get(0, 0) - 3.0).abs() < 1e-12);
        assert!((tape.value(p).get(0, 1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cross_output_is_residual_identity() {
        let cfg = testutil::tiny_config();
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let mut l = layer(&mut tape, &mut rng, &d, false);
        l.co = tape.param("co", Tensor::zeros(&[d.hk, d.h])).unwrap();
        let p_raw_v = random(&mut rng, 3, d.h);
        let p_raw = tape.constant(p_raw_v.clone()).unwrap();
        let text = tape.constant(random(&mut rng, 3, d.d_llm)).unwrap();
        let (k, v) = cross_projections(&mut tape, text, &l, &cfg).unwrap();
        let p = cross_attend(&mut tape, p_raw, &k, &v, &l, &cfg).unwrap();
        assert_eq!(tape.value(p), &p_raw_v);
    }

    #[test]
    fn zero_key_value_projections_give_constant_update() {
        let cfg = testutil::tiny_config();
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let mut l = layer(&mut tape, &mut rng, &d, false);
        l.ck = tape.param("ck", Tensor::zeros(&[d.d_llm, d.hk])).unwrap();
        l.cv = tape.param("cv", Tensor::zeros(&[d.d_llm, d.hk])).unwrap();
        let p_raw_v = random(&mut rng, 3, d.h);
        let p_raw = tape.constant(p_raw_v.clone()).unwrap();
        let text = tape.constant(random(&mut rng, 3, d.d_llm)).unwrap();
        let (k, v) = cross_projections(&mut tape, text, &l, &cfg).unwrap();
        let p = cross_attend(&mut tape, p_raw, &k, &v, &l, &cfg).unwrap();
        assert_eq!(tape.value(p), &p_raw_v);
    }

    #[test]
    fn single_path_attends_with_weight_one() {
        let cfg = testutil::tiny_config();
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let l = layer(&mut tape, &mut rng, &d, false);
        let text_v = random(&mut rng, 1, d.d_llm);
        let p_raw_v = random(&mut rng, 1, d.h);
        let p_raw = tape.constant(p_raw_v.clone()).unwrap();
        let text = tape.constant(text_v.clone()).unwrap();
        let (k, v) = cross_projections(&mut tape, text, &l, &cfg).unwrap();
        let p = cross_attend(&mut tape, p_raw, &k, &v, &l, &cfg).unwrap();
        // weight 1 means the update is exactly (text·W_V)·W_O
        let want = text_v
            .matmul(tape.value(l.cv))
            .unwrap()
            .matmul(tape.value(l.co))
            .unwrap();
        for c in 0..d.h {
            let got = tape.value(p).get(0, c) - p_raw_v.get(0, c);
            assert!((got - want.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn reordering_paths_permutes_output_rows() {
        let (graph, paths) = testutil::worked_example();
        let mut rev = paths.paths.clone();
        rev.reverse();
        let rev = PathList::new(rev.into_iter().map(|p| Path { id: p.id, nodes: p.nodes }).collect());
        let cfg = ModelConfig { d_llm: 2, ..testutil::tiny_config() };
        let d = Dims { h: 8, u: 4, r: 2, hk: 8, d_llm: 2, max_len: 4, pair_types: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let l = layer(&mut tape, &mut rng, &d, false);
        let h = tape.constant(random(&mut rng, 5, d.h)).unwrap();
        let text_v = random(&mut rng, 2, d.d_llm);
        let text_rev = Tensor::from_rows(&[text_v.row(1).to_vec(), text_v.row(0).to_vec()]).unwrap();
        let mut run = |paths: &PathList, text: Tensor| {
            let idx = build_scatter_index(paths, &graph);
            let enc = path_encodings(&mut tape, &idx, &l).unwrap();
            let text = tape.constant(text).unwrap();
            let (k, v) = cross_projections(&mut tape, text, &l, &cfg).unwrap();
            let p = path_layer_forward(&mut tape, h, &idx, &l, enc, &k, &v, &cfg).unwrap();
            tape.value(p).clone()
        };
        let a = run(&paths, text_v);
        let b = run(&rev, text_rev);
        for c in 0..d.h {
            assert!((a.get(0, c) - b.get(1, c)).abs() < 1e-12);
            assert!((a.get(1, c) - b.get(0, c)).abs() < 1e-12);
        }
    }
}
