//! Expression/text fusion, centrality encoding and biased self-attention.

use super::forward::Bound;
use super::{ModelConfig, ModelError, Structure};
use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Tape handles for one gene-encoder layer.
#[derive(Clone, Copy, Debug)]
pub struct GeneLayer {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

impl GeneLayer {
    pub fn bind(b: &Bound, l: usize) -> Result<Self, ModelError> {
        let v = |s: &str| b.var(&format!("gene.{l}.{s}"));
        Ok(Self {
            wq: v("wq")?,
            wk: v("wk")?,
            wv: v("wv")?,
            wo: v("wo")?,
            ffn_w1: v("ffn_w1")?,
            ffn_b1: v("ffn_b1")?,
            ffn_w2: v("ffn_w2")?,
            ffn_b2: v("ffn_b2")?,
        })
    }
}

/// The fusion MLP split by input block: `[se, e]·W = se·W_text + e·W_expr`.
/// The text product is cell independent and computed once per tape.
#[derive(Clone, Copy, Debug)]
pub struct Expander {
    pub expr_w: Var,
    pub expr_b: Var,
    pub text_part: Var,
    pub fuse_expr: Var,
    pub fuse_b: Var,
}

impl Expander {
    pub fn bind(
        tape: &mut Tape,
        b: &Bound,
        gene_text: &Tensor,
        cfg: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let fuse_w = b.var("expander.fuse_w")?;
        let fuse_text = tape.slice_rows(fuse_w, 0, cfg.d_llm)?;
        let fuse_expr = tape.slice_rows(fuse_w, cfg.d_llm, cfg.fusion_input_width())?;
        let se = tape.constant(gene_text.clone())?;
        let text_part = tape.matmul(se, fuse_text)?;
        Ok(Self {
            expr_w: b.var("expander.expr_w")?,
            expr_b: b.var("expander.expr_b")?,
            text_part,
            fuse_expr,
            fuse_b: b.var("expander.fuse_b")?,
        })
    }
}

/// `X_v = MLP(Concat(se_v, MLP(ge_v)))`, inner MLP tanh-activated, outer
/// linear.
pub fn expand_input(tape: &mut Tape, ex: &Expander, ge: &[f64]) -> Result<Var, ModelError> {
    let n = tape.value(ex.text_part).rows();
    if ge.len() != n {
        return Err(ModelError::Structure(format!(
            "expression vector has {} values for {n} genes",
            ge.len()
        )));
    }
    if let Some(i) = ge.iter().position(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite(format!("expression value for gene {i}")).into());
    }
    let col = tape.constant(Tensor::new(vec![n, 1], ge.to_vec())?)?;
    let e = tape.matmul(col, ex.expr_w)?;
    let e = tape.add_row(e, ex.expr_b)?;
    let e = tape.tanh(e)?;
    let x = tape.matmul(e, ex.fuse_expr)?;
    let x = tape.add(x, ex.text_part)?;
    Ok(tape.add_row(x, ex.fuse_b)?)
}

/// `Z_in[min(in_deg, D_max)] + Z_out[min(out_deg, D_max)]` per gene.
pub fn centrality_table(tape: &mut Tape, b: &Bound, s: &Structure) -> Result<Var, ModelError> {
    let zin = tape.gather_rows(b.var("centrality.z_in")?, s.in_degree.clone())?;
    let zout = tape.gather_rows(b.var("centrality.z_out")?, s.out_degree.clone())?;
    Ok(tape.add(zin, zout)?)
}

pub fn centrality_encode(tape: &mut Tape, x: Var, table: Var) -> Result<Var, ModelError> {
    Ok(tape.add(x, table)?)
}

/// One `n × n` bias per head: `β_i·(N·Nᵀ)/√h_emb + c_i[type(u, v)]`.
pub fn build_attention_bias(
    tape: &mut Tape,
    b: &Bound,
    s: &Structure,
    cfg: &ModelConfig,
) -> Result<Vec<Var>, ModelError> {
    let n = s.shape.n_genes;
    let ids = b.var("spatial.node_id")?;
    let idt = tape.transpose(ids)?;
    let gram = tape.matmul(ids, idt)?;
    let gram = tape.scale(gram, 1.0 / (cfg.h_emb as f64).sqrt())?;
    let scale = b.var("spatial.scale")?;
    let per_pair = tape.gather_rows(b.var("edge.scalar")?, s.pair_types.clone())?;
    let mut out = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let beta = tape.slice_cols(scale, i, i + 1)?;
        let spatial = tape.scale_by(gram, beta)?;
        let edge = tape.slice_cols(per_pair, i, i + 1)?;
        let edge = tape.reshape(edge, &[n, n])?;
        out.push(tape.add(spatial, edge)?);
    }
    Ok(out)
}

/// Bias values outside of any training tape.
pub fn attention_bias_values(
    model: &super::Model,
    s: &Structure,
) -> Result<Vec<Tensor>, ModelError> {
    let mut tape = Tape::new();
    let b = Bound::bind(&mut tape, &model.params)?;
    let bias = build_attention_bias(&mut tape, &b, s, &model.config)?;
    Ok(bias.iter().map(|&v| tape.value(v).clone()).collect())
}

/// `softmax(Q_i K_iᵀ/√d_k + bias_i) V_i` for every head, concatenated.
/// `q` holds all heads side by side; `keys` and `values` are per head.
pub(crate) fn attend(
    tape: &mut Tape,
    q: Var,
    keys: &[Var],
    values: &[Var],
    bias: Option<&[Var]>,
    d_k: usize,
) -> Result<(Var, Vec<Var>), ModelError> {
    let mut heads = Vec::with_capacity(keys.len());
    let mut weights = Vec::with_capacity(keys.len());
    for (i, (&k, &v)) in keys.iter().zip(values).enumerate() {
        let qi = tape.slice_cols(q, i * d_k, (i + 1) * d_k)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(qi, kt)?;
        let mut logits = tape.scale(logits, 1.0 / (d_k as f64).sqrt())?;
        if let Some(bias) = bias {
            logits = tape.add(logits, bias[i])?;
        }
        let w = tape.softmax_rows(logits)?;
        heads.push(tape.matmul(w, v)?);
        weights.push(w);
    }
    Ok((tape.concat_cols(&heads)?, weights))
}

pub(crate) fn split_heads(
    tape: &mut Tape,
    x: Var,
    heads: usize,
    d_k: usize,
) -> Result<Vec<Var>, NumericsError> {
    (0..heads)
        .map(|i| tape.slice_cols(x, i * d_k, (i + 1) * d_k))
        .collect()
}

/// Layer output together with the per-head attention weights.
#[derive(Clone, Debug)]
pub struct GeneLayerOutput {
    pub h: Var,
    pub attention: Vec<Var>,
}

/// `A = H + Concat(heads)·W_O`, then `H' = A + ReLU(A·W₁ + b₁)·W₂ + b₂`.
pub fn gene_layer_forward(
    tape: &mut Tape,
    h: Var,
    bias: &[Var],
    layer: &GeneLayer,
    cfg: &ModelConfig,
) -> Result<GeneLayerOutput, ModelError> {
    let q = tape.matmul(h, layer.wq)?;
    let k = tape.matmul(h, layer.wk)?;
    let v = tape.matmul(h, layer.wv)?;
    let keys = split_heads(tape, k, cfg.heads, cfg.d_k)?;
    let values = split_heads(tape, v, cfg.heads, cfg.d_k)?;
    let (cat, attention) = attend(tape, q, &keys, &values, Some(bias), cfg.d_k)?;
    let o = tape.matmul(cat, layer.wo)?;
    let a = tape.add(h, o)?;
    let f = tape.matmul(a, layer.ffn_w1)?;
    let f = tape.add_row(f, layer.ffn_b1)?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, layer.ffn_w2)?;
    let f = tape.add_row(f, layer.ffn_b2)?;
    Ok(GeneLayerOutput {
        h: tape.add(a, f)?,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{self, Toy};
    use crate::model::Model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn layer_params(tape: &mut Tape, rng: &mut ChaCha8Rng, cfg: &ModelConfig, zero: bool) -> GeneLayer {
        let h = cfg.h_emb;
        let hk = cfg.heads * cfg.d_k;
        let mut p = |name: &str, r: usize, c: usize| {
            let t = if zero { Tensor::zeros(&[r, c]) } else { random(rng, r, c) };
            tape.param(name, t).unwrap()
        };
        GeneLayer {
            wq: p("wq", h, hk),
            wk: p("wk", h, hk),
            wv: p("wv", h, hk),
            wo: p("wo", hk, h),
            ffn_w1: p("w1", h, h),
            ffn_b1: p("b1", 1, h),
            ffn_w2: p("w2", h, h),
            ffn_b2: p("b2", 1, h),
        }
    }

    fn small_cfg() -> ModelConfig {
        testutil::tiny_config()
    }

    fn zero_bias(tape: &mut Tape, n: usize, heads: usize) -> Vec<Var> {
        (0..heads).map(|_| tape.constant(Tensor::zeros(&[n, n])).unwrap()).collect()
    }

    #[test]
    fn zero_weights_pass_through() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let layer = layer_params(&mut tape, &mut rng, &cfg, true);
        let x = random(&mut rng, 5, cfg.h_emb);
        let h = tape.constant(x.clone()).unwrap();
        let bias = zero_bias(&mut tape, 5, cfg.heads);
        let out = gene_layer_forward(&mut tape, h, &bias, &layer, &cfg).unwrap();
        assert_eq!(tape.value(out.h), &x);
    }

    #[test]
    fn single_gene_attends_to_itself() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let layer = layer_params(&mut tape, &mut rng, &cfg, false);
        let h = tape.constant(random(&mut rng, 1, cfg.h_emb)).unwrap();
        let bias = vec![tape.constant(Tensor::filled(&[1, 1], 3.0)).unwrap(); cfg.heads];
        let out = gene_layer_forward(&mut tape, h, &bias, &layer, &cfg).unwrap();
        for w in out.attention {
            assert_eq!(tape.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let layer = layer_params(&mut tape, &mut rng, &cfg, false);
        let h = tape.constant(random(&mut rng, 6, cfg.h_emb).map(|v| 4.0 * v)).unwrap();
        let bias: Vec<Var> = (0..cfg.heads)
            .map(|_| tape.constant(random(&mut rng, 6, 6)).unwrap())
            .collect();
        let out = gene_layer_forward(&mut tape, h, &bias, &layer, &cfg).unwrap();
        for w in out.attention {
            let w = tape.value(w);
            for r in 0..w.rows() {
                assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn vanilla_attention_is_permutation_equivariant(seed in any::<u64>()) {
            let cfg = small_cfg();
            let n = 5;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let layer = layer_params(&mut tape, &mut rng, &cfg, false);
            let x = random(&mut rng, n, cfg.h_emb);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let bias = zero_bias(&mut tape, n, cfg.heads);
            let h = tape.constant(x).unwrap();
            let hp = tape.constant(xp).unwrap();
            let a = gene_layer_forward(&mut tape, h, &bias, &layer, &cfg).unwrap().h;
            let b = gene_layer_forward(&mut tape, hp, &bias, &layer, &cfg).unwrap().h;
            let (a, b) = (tape.value(a), tape.value(b));
            for (row, &src) in perm.iter().enumerate() {
                for c in 0..cfg.h_emb {
                    prop_assert!((b.get(row, c) - a.get(src, c)).abs() < 1e-10);
                }
            }
        }
    }

    fn encoded(model: &Model, toy: &Toy, ge: &[f64]) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, &model.params).unwrap();
        let ex = Expander::bind(&mut tape, &b, &toy.structure.gene_text, &model.config).unwrap();
        let x = expand_input(&mut tape, &ex, ge).unwrap();
        let table = centrality_table(&mut tape, &b, &toy.structure).unwrap();
        let h0 = centrality_encode(&mut tape, x, table).unwrap();
        (tape.value(x).clone(), tape.value(h0).clone())
    }

    #[test]
    fn zero_centrality_tables_are_additive_identity() {
        let toy = testutil::toy();
        let mut model = toy.model.clone();
        for name in ["centrality.z_in", "centrality.z_out"] {
            let t = model.params.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let (x, h0) = encoded(&model, &toy, &[0.5; 6]);
        assert_eq!(x, h0);
    }

    #[test]
    fn zero_expander_gives_zero_input() {
        let toy = testutil::toy();
        let mut model = toy.model.clone();
        for name in ["expander.expr_w", "expander.expr_b", "expander.fuse_w", "expander.fuse_b"] {
            let t = model.params.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let (x, _) = encoded(&model, &toy, &[1.0, -2.0, 3.0, 0.0, 5.0, 6.0]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_fusion_matches_explicit_concat() {
        let toy = testutil::toy();
        let cfg = &toy.model.config;
        let ge = [0.3, -1.0, 2.0, 0.0, 0.7, 1.5];
        let (x, _) = encoded(&toy.model, &toy, &ge);
        let p = &toy.model.params;
        let (ew, eb) = (p.get("expander.expr_w").unwrap(), p.get("expander.expr_b").unwrap());
        let (fw, fb) = (p.get("expander.fuse_w").unwrap(), p.get("expander.fuse_b").unwrap());
        for v in 0..6 {
            let mut input = toy.structure.gene_text.row(v).to_vec();
            input.extend((0..cfg.d_expand).map(|j| (ge[v] * ew.get(0, j) + eb.get(0, j)).tanh()));
            for c in 0..cfg.h_emb {
                let mut acc = fb.get(0, c);
                for (i, &val) in input.iter().enumerate() {
                    acc += val * fw.get(i, c);
                }
                assert!((acc - x.get(v, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_expression_is_rejected() {
        let toy = testutil::toy();
        let mut tape = Tape::new();
        let b = Bound::bind(&mut tape, &toy.model.params).unwrap();
        let ex = Expander::bind(&mut tape, &b, &toy.structure.gene_text, &toy.model.config).unwrap();
        let mut ge = vec![0.0; 6];
        ge[2] = f64::NAN;
        assert!(expand_input(&mut tape, &ex, &ge).is_err());
    }

    #[test]
    fn bias_ablation_and_single_edge() {
        let toy = testutil::toy();
        let mut model = toy.model.clone();
        *model.params.get_mut("spatial.scale").unwrap() = Tensor::zeros(&[1, model.config.heads]);
        let bias = attention_bias_values(&model, &toy.structure).unwrap();
        assert!(bias.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));

        // edge 0 -> 1 has type 0 in the toy graph
        let es = model.params.get_mut("edge.scalar").unwrap();
        es.set(0, 0, 5.0);
        let bias = attention_bias_values(&model, &toy.structure).unwrap();
        let b0 = &bias[0];
        let nonzero: Vec<(usize, usize)> = (0..6)
            .flat_map(|u| (0..6).map(move |v| (u, v)))
            .filter(|&(u, v)| b0.get(u, v) != 0.0)
            .collect();
        let type0: Vec<(usize, usize)> = toy.graph.edges().iter().filter(|e| e.edge_type == 0).map(|e| (e.src, e.dst)).collect();
        assert_eq!(nonzero, type0);
        assert!(bias[1].data().iter().all(|&v| v == 0.0));
        assert_eq!(bias, attention_bias_values(&model, &toy.structure).unwrap());
    }

    #[test]
    fn spatial_term_is_scaled_gram() {
        let toy = testutil::toy();
        let cfg = &toy.model.config;
        let bias = attention_bias_values(&toy.model, &toy.structure).unwrap();
        let ids = toy.model.params.get("spatial.node_id").unwrap();
        let gram = ids.matmul(&ids.transpose().unwrap()).unwrap();
        for b in &bias {
            for u in 0..6 {
                for v in 0..6 {
                    let want = gram.get(u, v) / (cfg.h_emb as f64).sqrt();
                    assert!((b.get(u, v) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn node_ids_break_symmetry() {
        // Two genes with identical inputs and identical structure roles only
        // differ through their node-id rows.
        let toy = testutil::symmetric_toy();
        let mut model = toy.model.clone();
        let sym = |t: &Tensor| t.row(1) == t.row(2);
        let ge = [1.0, 0.5, 0.5];
        let run = |model: &Model| {
            let mut tape = Tape::new();
            let b = Bound::bind(&mut tape, &model.params).unwrap();
            let ex = Expander::bind(&mut tape, &b, &toy.structure.gene_text, &model.config).unwrap();
            let x = expand_input(&mut tape, &ex, &ge).unwrap();
            let table = centrality_table(&mut tape, &b, &toy.structure).unwrap();
            let h = centrality_encode(&mut tape, x, table).unwrap();
            let bias = build_attention_bias(&mut tape, &b, &toy.structure, &model.config).unwrap();
            let layer = GeneLayer::bind(&b, 0).unwrap();
            let out = gene_layer_forward(&mut tape, h, &bias, &layer, &model.config).unwrap();
            tape.value(out.h).clone()
        };
        let ids = model.params.get_mut("spatial.node_id").unwrap();
        let row1 = ids.row(1).to_vec();
        for (c, v) in row1.into_iter().enumerate() {
            ids.set(2, c, v);
        }
        assert!(sym(&run(&model)));
        let ids = model.params.get_mut("spatial.node_id").unwrap();
        ids.set(2, 0, ids.get(2, 0) + 1.0);
        assert!(!sym(&run(&model)));
    }
}
