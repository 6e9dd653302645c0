//! Convolutional encoder-decoder with a separate attention step in every
//! decoder layer.
//!
//! Encoder block: dropout, same-padded conv to `2d`, GLU, residual add
//! scaled by `sqrt(0.5)`. Decoder block: dropout, causal conv to `2d`, GLU,
//! then attention over the encoder output; the context is added to the
//! block state before the scaled residual. The attention of layer `l`:
//!
//! ```text
//! d_i  = W_d h_i + b_d + g_i
//! a_ij = softmax_j(d_i . z_j)
//! c_i  = sum_j a_ij (z_j + e_j)
//! ```
//!
//! where `e` is the projected source plus position embedding, `z` the last
//! encoder block output and `g_i` the embedding (token + position) of the
//! decoder input at step `i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::tensor::{Graph, Padding, ParamId, ParamStore, Scalar, Tensor, Var};

const RESIDUAL_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;
const EMBED_BOUND: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModelConfig {
    pub d_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    pub dropout_p: f64,
    pub max_source_positions: usize,
    pub max_target_positions: usize,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        SeqModelConfig {
            d_hidden: 256,
            enc_layers: 3,
            dec_layers: 2,
            enc_kernel: 5,
            dec_kernel: 7,
            dropout_p: 0.5,
            max_source_positions: 64,
            max_target_positions: 32,
        }
    }
}

impl SeqModelConfig {
    /// Narrower state for CPU-scale training; depths and kernels unchanged.
    pub fn desk() -> Self {
        SeqModelConfig {
            d_hidden: 128,
            dropout_p: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(ScanError::InvalidArgument(format!("{why}: {self:?}")));
        if self.d_hidden == 0 {
            return bad("d_hidden must be positive");
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("need at least one encoder and one decoder layer");
        }
        if self.enc_kernel % 2 == 0 || self.dec_kernel == 0 {
            return bad("encoder kernel must be odd, decoder kernel positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout outside [0, 1)");
        }
        if self.max_source_positions == 0 || self.max_target_positions == 0 {
            return bad("position tables must be nonempty");
        }
        Ok(())
    }
}

/// Source-side graph values shared by every decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct SourceVars {
    /// Projected features plus positions, `[m, d]`.
    pub e: Var,
    /// Last encoder block output, `[m, d]`.
    pub z: Var,
    /// `z + e`, the attention values.
    pub values: Var,
}

/// Detached source representation, reusable across decoding graphs.
#[derive(Clone, Debug)]
pub struct SourceRepresentation<T> {
    pub e: Tensor<T>,
    pub z: Tensor<T>,
}

impl<T: Scalar> SourceRepresentation<T> {
    pub fn len(&self) -> usize {
        self.e.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Re-enter the representation into `g` as constants.
    pub fn attach(&self, g: &mut Graph<'_, T>) -> Result<SourceVars> {
        let e = g.constant(self.e.clone())?;
        let z = g.constant(self.z.clone())?;
        let values = g.add(z, e)?;
        Ok(SourceVars { e, z, values })
    }
}

/// Attention weights `[layer][step][window]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    layers: usize,
    steps: usize,
    windows: usize,
    weights: Vec<f64>,
}

impl AttentionMap {
    pub fn new(layers: usize, steps: usize, windows: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != layers * steps * windows {
            return Err(ScanError::shape(
                "attention map",
                format!("{layers}x{steps}x{windows} from {} weights", weights.len()),
            ));
        }
        Ok(AttentionMap {
            layers,
            steps,
            windows,
            weights,
        })
    }

    pub fn from_graph<T: Scalar>(g: &Graph<'_, T>, per_layer: &[Var]) -> Result<Self> {
        let first = g.shape(*per_layer.first().ok_or(ScanError::Empty("attention layers"))?);
        let (steps, windows) = (first[0], first[1]);
        let weights = per_layer
            .iter()
            .flat_map(|&v| g.value(v).data().iter().map(|x| x.f64()))
            .collect();
        Self::new(per_layer.len(), steps, windows, weights)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn row(&self, layer: usize, step: usize) -> &[f64] {
        let start = (layer * self.steps + step) * self.windows;
        &self.weights[start..start + self.windows]
    }

    /// Index of the most attended window for each step of `layer`.
    pub fn argmax_windows(&self, layer: usize) -> Vec<usize> {
        (0..self.steps)
            .map(|s| {
                self.row(layer, s)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
                    .0
            })
            .collect()
    }
}

/// Output of a teacher-forced decoder pass.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// `[n, |V|]`; row `i` scores the token following input `i`.
    pub logits: Var,
    /// One `[n, m]` weight matrix per decoder layer.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    conv: (ParamId, ParamId),
    attn: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct ConvSeq2Seq {
    cfg: SeqModelConfig,
    vocab_size: usize,
    src_proj: (ParamId, ParamId),
    src_pos: ParamId,
    tgt_embed: ParamId,
    tgt_pos: ParamId,
    encoder: Vec<(ParamId, ParamId)>,
    decoder: Vec<DecoderLayer>,
    out: (ParamId, ParamId),
}

impl ConvSeq2Seq {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: SeqModelConfig,
        feature_dim: usize,
        vocab_size: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_hidden;
        let src_proj = (
            store.insert_glorot("source.proj.weight", &[d, feature_dim], feature_dim, d, rng)?,
            store.insert_zeros("source.proj.bias", &[d])?,
        );
        let src_pos = store.insert_uniform("source.position", &[cfg.max_source_positions, d], EMBED_BOUND, rng)?;
        let tgt_embed = store.insert_uniform("target.embed", &[vocab_size, d], EMBED_BOUND, rng)?;
        let tgt_pos = store.insert_uniform("target.position", &[cfg.max_target_positions, d], EMBED_BOUND, rng)?;
        let conv = |store: &mut ParamStore<T>, rng: &mut R, prefix: String, k: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                store.insert_glorot(format!("{prefix}.conv.weight"), &[k, d, 2 * d], k * d, k * 2 * d, rng)?,
                store.insert_zeros(format!("{prefix}.conv.bias"), &[2 * d])?,
            ))
        };
        let mut encoder = Vec::with_capacity(cfg.enc_layers);
        for l in 0..cfg.enc_layers {
            encoder.push(conv(store, rng, format!("encoder.layer{l}"), cfg.enc_kernel)?);
        }
        let mut decoder = Vec::with_capacity(cfg.dec_layers);
        for l in 0..cfg.dec_layers {
            let conv = conv(store, rng, format!("decoder.layer{l}"), cfg.dec_kernel)?;
            let attn = (
                store.insert_glorot(format!("decoder.layer{l}.attn.weight"), &[d, d], d, d, rng)?,
                store.insert_zeros(format!("decoder.layer{l}.attn.bias"), &[d])?,
            );
            decoder.push(DecoderLayer { conv, attn });
        }
        let out = (
            store.insert_glorot("output.weight", &[vocab_size, d], d, vocab_size, rng)?,
            store.insert_zeros("output.bias", &[vocab_size])?,
        );
        Ok(ConvSeq2Seq {
            cfg,
            vocab_size,
            src_proj,
            src_pos,
            tgt_embed,
            tgt_pos,
            encoder,
            decoder,
            out,
        })
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.cfg.dropout_p = p;
    }

    /// Parameters of decoder layer `l`'s attention projection.
    pub fn attention_params(&self, l: usize) -> (ParamId, ParamId) {
        self.decoder[l].attn
    }

    /// `e_j = W s_j + b + p_j`.
    pub fn embed_source<T: Scalar>(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 2 {
            return Err(ScanError::shape("embed_source", format!("features {shape:?}")));
        }
        let m = shape[0];
        if m > self.cfg.max_source_positions {
            return Err(ScanError::TooLong {
                len: m,
                max: self.cfg.max_source_positions,
            });
        }
        let (w, b) = (g.param(self.src_proj.0), g.param(self.src_proj.1));
        let proj = g.linear(features, w, b)?;
        let table = g.param(self.src_pos);
        let positions: Vec<usize> = (0..m).collect();
        let pos = g.gather(table, &positions)?;
        g.add(proj, pos)
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, e: Var) -> Result<Var> {
        let mut x = e;
        for &(w, b) in &self.encoder {
            let h = g.dropout(x, self.cfg.dropout_p)?;
            let (w, b) = (g.param(w), g.param(b));
            let h = g.conv1d(h, w, b, Padding::Same)?;
            let h = g.glu(h)?;
            x = g.residual(h, x, RESIDUAL_SCALE)?;
        }
        Ok(x)
    }

    pub fn source<T: Scalar>(&self, g: &mut Graph<'_, T>, features: Var) -> Result<SourceVars> {
        let e = self.embed_source(g, features)?;
        let z = self.encode(g, e)?;
        let values = g.add(z, e)?;
        Ok(SourceVars { e, z, values })
    }

    /// Attention of decoder layer `layer`; returns the context and the weights.
    pub fn attention<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        target_embedding: Var,
        src: &SourceVars,
        layer: usize,
    ) -> Result<(Var, Var)> {
        let (w, b) = self.decoder[layer].attn;
        let (w, b) = (g.param(w), g.param(b));
        let d = g.linear(h, w, b)?;
        let d = g.add(d, target_embedding)?;
        let scores = g.matmul_nt(d, src.z)?;
        let a = g.softmax(scores)?;
        let c = g.matmul(a, src.values)?;
        Ok((c, a))
    }

    /// Token plus position embeddings of the decoder inputs, `[n, d]`.
    pub fn embed_target<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[usize]) -> Result<Var> {
        let n = inputs.len();
        if n == 0 {
            return Err(ScanError::Empty("decoder inputs"));
        }
        if n > self.cfg.max_target_positions {
            return Err(ScanError::TooLong {
                len: n,
                max: self.cfg.max_target_positions,
            });
        }
        if let Some(&bad) = inputs.iter().find(|&&t| t >= self.vocab_size) {
            return Err(ScanError::UnknownToken(bad));
        }
        let table = g.param(self.tgt_embed);
        let tok = g.gather(table, inputs)?;
        let table = g.param(self.tgt_pos);
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather(table, &positions)?;
        g.add(tok, pos)
    }

    /// Teacher-forced decoding: `inputs` starts with `<s>` and row `i` of the
    /// logits predicts the token after `inputs[i]`.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[usize], src: &SourceVars) -> Result<Decoded> {
        let emb = self.embed_target(g, inputs)?;
        let mut x = emb;
        let mut attention = Vec::with_capacity(self.decoder.len());
        for (l, layer) in self.decoder.iter().enumerate() {
            let h = g.dropout(x, self.cfg.dropout_p)?;
            let (w, b) = (g.param(layer.conv.0), g.param(layer.conv.1));
            let h = g.conv1d(h, w, b, Padding::Causal)?;
            let h = g.glu(h)?;
            let (c, a) = self.attention(g, h, emb, src, l)?;
            attention.push(a);
            let h = g.add(h, c)?;
            x = g.residual(h, x, RESIDUAL_SCALE)?;
        }
        let (w, b) = (g.param(self.out.0), g.param(self.out.1));
        let logits = g.linear(x, w, b)?;
        Ok(Decoded { logits, attention })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{finite_diff_check, kernels, Probes};

    fn tiny() -> SeqModelConfig {
        SeqModelConfig {
            d_hidden: 8,
            enc_layers: 2,
            dec_layers: 2,
            enc_kernel: 3,
            dec_kernel: 3,
            dropout_p: 0.0,
            max_source_positions: 16,
            max_target_positions: 8,
        }
    }

    /// Model with every parameter (biases included) drawn at random.
    fn random_model(cfg: SeqModelConfig, feat: usize, vocab: usize, seed: u64) -> (ConvSeq2Seq, ParamStore<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = ConvSeq2Seq::new(cfg, feat, vocab, &mut store, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        (m, store)
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn source_embedding_is_additive() {
        let (model, mut store) = random_model(tiny(), 5, 6, 0);
        let (_, b) = model.src_proj;
        store.tensor_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new(&store);
        let f = g.constant(Tensor::zeros(&[4, 5])).unwrap();
        let e = model.embed_source(&mut g, f).unwrap();
        let pos = store.tensor(model.src_pos);
        assert_eq!(g.value(e).data(), &pos.data()[..4 * 8]);

        let row = random_tensor(&[1, 5], 3);
        let mut twice = row.data().to_vec();
        twice.extend_from_slice(row.data());
        let f = g.constant(Tensor::new(&[2, 5], twice).unwrap()).unwrap();
        let e = model.embed_source(&mut g, f).unwrap();
        let ev = g.value(e);
        let diff: Vec<f64> = ev.row(0).iter().zip(ev.row(1)).map(|(a, b)| a - b).collect();
        let pdiff: Vec<f64> = pos.row(0).iter().zip(pos.row(1)).map(|(a, b)| a - b).collect();
        assert!(diff.iter().zip(&pdiff).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn embed_source_shape_and_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let model = ConvSeq2Seq::new(SeqModelConfig::default(), 200, 39, &mut store, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let f = g.constant(Tensor::zeros(&[57, 200])).unwrap();
        let e = model.embed_source(&mut g, f).unwrap();
        assert_eq!(g.shape(e), &[57, 256]);
        let z = model.encode(&mut g, e).unwrap();
        assert_eq!(g.shape(z), &[57, 256]);
        let f = g.constant(Tensor::zeros(&[65, 200])).unwrap();
        assert!(matches!(model.embed_source(&mut g, f), Err(ScanError::TooLong { .. })));
    }

    #[test]
    fn zero_encoder_maps_zero_to_zero() {
        let (model, mut store) = random_model(tiny(), 5, 6, 2);
        for &(w, b) in &model.encoder {
            store.tensor_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
            store.tensor_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&store);
        let e = g.constant(Tensor::zeros(&[5, 8])).unwrap();
        let z = model.encode(&mut g, e).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_not_permutation_equivariant() {
        let (model, store) = random_model(tiny(), 5, 6, 3);
        let e = random_tensor(&[5, 8], 4);
        let perm = [3, 0, 4, 1, 2];
        let mut permuted = Vec::new();
        for &i in &perm {
            permuted.extend_from_slice(e.row(i));
        }
        let mut g = Graph::new(&store);
        let a = g.constant(e).unwrap();
        let za = model.encode(&mut g, a).unwrap();
        let b = g.constant(Tensor::new(&[5, 8], permuted).unwrap()).unwrap();
        let zb = model.encode(&mut g, b).unwrap();
        let mut max_diff: f64 = 0.0;
        for (r, &i) in perm.iter().enumerate() {
            for (x, y) in g.value(zb).row(r).iter().zip(g.value(za).row(i)) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
        assert!(max_diff > 1e-3, "encoder behaved permutation-equivariantly");
    }

    #[test]
    fn attention_single_source() {
        let (model, store) = random_model(tiny(), 5, 6, 5);
        let mut g = Graph::new(&store);
        let f = g.constant(random_tensor(&[1, 5], 6)).unwrap();
        let src = model.source(&mut g, f).unwrap();
        let h = g.constant(random_tensor(&[3, 8], 7)).unwrap();
        let emb = g.constant(random_tensor(&[3, 8], 8)).unwrap();
        let (c, a) = model.attention(&mut g, h, emb, &src, 0).unwrap();
        assert!(g.value(a).data().iter().all(|&w| w == 1.0));
        let values = g.value(src.values).row(0).to_vec();
        for i in 0..3 {
            assert_eq!(g.value(c).row(i), &values[..]);
        }
    }

    #[test]
    fn attention_uniform_and_weighted() {
        let (model, mut store) = random_model(tiny(), 5, 6, 9);
        let (w, b) = model.attention_params(0);
        store.tensor_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.tensor_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new(&store);
        let h = g.constant(random_tensor(&[1, 8], 1)).unwrap();

        // d = g_i = 0 makes every score equal.
        let z = g.constant(random_tensor(&[3, 8], 2)).unwrap();
        let e = g.constant(random_tensor(&[3, 8], 3)).unwrap();
        let values = g.add(z, e).unwrap();
        let src = SourceVars { e, z, values };
        let zero = g.constant(Tensor::zeros(&[1, 8])).unwrap();
        let (c, a) = model.attention(&mut g, h, zero, &src, 0).unwrap();
        assert!(g.value(a).data().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        let vt = g.value(values);
        for k in 0..8 {
            let mean = (vt.row(0)[k] + vt.row(1)[k] + vt.row(2)[k]) / 3.0;
            assert!((g.value(c).data()[k] - mean).abs() < 1e-14);
        }

        // d = e_0 direction with scores (0, ln 3): z_0 orthogonal to d, z_1 . d = ln 3.
        let mut dvec = vec![0.0; 8];
        dvec[0] = 1.0;
        let mut zt = vec![0.0; 16];
        zt[1] = 0.7; // z_0 . d = 0
        zt[8] = 3f64.ln();
        zt[9] = -0.2;
        let z = g.constant(Tensor::new(&[2, 8], zt.clone()).unwrap()).unwrap();
        let et = random_tensor(&[2, 8], 4);
        let e = g.constant(et.clone()).unwrap();
        let values = g.add(z, e).unwrap();
        let src = SourceVars { e, z, values };
        let emb = g.constant(Tensor::new(&[1, 8], dvec).unwrap()).unwrap();
        let (c, a) = model.attention(&mut g, h, emb, &src, 0).unwrap();
        let aw = g.value(a).data();
        assert!((aw[0] - 0.25).abs() < 1e-15 && (aw[1] - 0.75).abs() < 1e-15);
        for k in 0..8 {
            let want = 0.25 * (zt[k] + et.data()[k]) + 0.75 * (zt[8 + k] + et.data()[8 + k]);
            assert!((g.value(c).data()[k] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn decoder_rows_are_distributions_and_causal() {
        let (model, store) = random_model(tiny(), 5, 6, 11);
        let feats = random_tensor(&[5, 5], 12);
        let run = |inputs: &[usize]| {
            let mut g = Graph::new(&store);
            let f = g.constant(feats.clone()).unwrap();
            let src = model.source(&mut g, f).unwrap();
            let d = model.decode(&mut g, inputs, &src).unwrap();
            let logits = g.value(d.logits).clone();
            let att: Vec<Tensor<f64>> = d.attention.iter().map(|&a| g.value(a).clone()).collect();
            (logits, att)
        };
        let (base, att) = run(&[1, 3, 4, 5]);
        assert_eq!(base.shape(), &[4, 6]);
        for r in 0..4 {
            let p = kernels::softmax(&Tensor::new(&[6], base.row(r).to_vec()).unwrap()).unwrap();
            assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for a in &att {
            for r in 0..4 {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let (changed, _) = run(&[1, 3, 0, 5]);
        for r in 0..2 {
            assert_eq!(base.row(r), changed.row(r), "row {r} saw the future");
        }
        assert_ne!(base.row(2), changed.row(2));

        let (single, _) = run(&[1]);
        assert_eq!(single.shape(), &[1, 6]);
    }

    #[test]
    fn decoder_rejects_bad_inputs() {
        let (model, store) = random_model(tiny(), 5, 6, 13);
        let mut g = Graph::new(&store);
        let f = g.constant(random_tensor(&[5, 5], 1)).unwrap();
        let src = model.source(&mut g, f).unwrap();
        assert!(matches!(model.decode(&mut g, &[1, 6], &src), Err(ScanError::UnknownToken(6))));
        assert!(matches!(model.decode(&mut g, &[1; 9], &src), Err(ScanError::TooLong { .. })));
    }

    #[test]
    fn second_layer_attention_does_not_touch_first() {
        let (model, mut store) = random_model(tiny(), 5, 6, 14);
        let feats = random_tensor(&[5, 5], 15);
        let run = |store: &ParamStore<f64>| {
            let mut g = Graph::new(store);
            let f = g.constant(feats.clone()).unwrap();
            let src = model.source(&mut g, f).unwrap();
            let d = model.decode(&mut g, &[1, 3, 4], &src).unwrap();
            (g.value(d.logits).clone(), g.value(d.attention[0]).clone())
        };
        let (logits, att0) = run(&store);
        let (w, b) = model.attention_params(1);
        store.tensor_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.tensor_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let (logits2, att0b) = run(&store);
        assert_eq!(att0, att0b);
        assert!(logits.max_abs_diff(&logits2) > 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let (m1, s1) = random_model(tiny(), 5, 6, 21);
        let (m2, s2) = random_model(tiny(), 5, 6, 21);
        let feats = random_tensor(&[5, 5], 22);
        let logits = |m: &ConvSeq2Seq, s: &ParamStore<f64>| {
            let mut g = Graph::new(s);
            let f = g.constant(feats.clone()).unwrap();
            let src = m.source(&mut g, f).unwrap();
            let d = m.decode(&mut g, &[1, 4], &src).unwrap();
            g.value(d.logits).clone()
        };
        assert_eq!(logits(&m1, &s1), logits(&m2, &s2));
    }

    #[test]
    fn whole_module_gradient_check() {
        let (model, mut store) = random_model(tiny(), 5, 6, 31);
        let feats = random_tensor(&[5, 5], 32);
        let report = finite_diff_check(&mut store, Probes::All, 1e-5, |g| {
            let f = g.constant(feats.clone())?;
            let src = model.source(g, f)?;
            let d = model.decode(g, &[1, 3, 4, 5], &src)?;
            g.nll(d.logits, &[Some(3), Some(4), Some(5), Some(2)])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
