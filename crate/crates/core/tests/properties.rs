use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scan_core::data::checkpoint;
use scan_core::data::{gen_dataset, DatasetSpec};
use scan_core::decoding::{beam_search, BeamConfig, StepScorer};
use scan_core::model::{ScanConfig, ScanModel};
use scan_core::seq2seq::{ConvSeq2Seq, SeqModelConfig};
use scan_core::tensor::{kernels, Graph, ParamStore, Tensor};
use scan_core::vocab::{DIGITS, END};
use scan_core::windowing::{extract_windows, normalize_image, RawImage, WindowConfig};

fn seq_model(seed: u64, d: usize, vocab: usize, feat: usize) -> (ConvSeq2Seq, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SeqModelConfig {
        d_hidden: d,
        dropout_p: 0.0,
        enc_kernel: 3,
        dec_kernel: 3,
        ..SeqModelConfig::default()
    };
    let mut store = ParamStore::new();
    let m = ConvSeq2Seq::new(cfg, feat, vocab, &mut store, &mut rng).unwrap();
    (m, store)
}

fn features(values: &[f64], m: usize, feat: usize) -> Tensor<f64> {
    Tensor::new(&[m, feat], values.iter().cycle().take(m * feat).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions(
        seed in 0u64..1000,
        m in 1usize..40,
        inputs in prop::collection::vec(0usize..8, 1..20),
        values in prop::collection::vec(-4.0f64..4.0, 1..50),
    ) {
        let (model, store) = seq_model(seed, 8, 8, 5);
        let mut g = Graph::new(&store);
        let f = g.constant(features(&values, m, 5)).unwrap();
        let src = model.source(&mut g, f).unwrap();
        let d = model.decode(&mut g, &inputs, &src).unwrap();
        for &a in &d.attention {
            let t = g.value(a);
            prop_assert_eq!(t.shape(), &[inputs.len(), m]);
            for r in 0..t.rows() {
                prop_assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(t.row(r).iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
        }
    }

    #[test]
    fn decoder_is_causal(
        seed in 0u64..1000,
        inputs in prop::collection::vec(0usize..8, 2..20),
        pick in any::<prop::sample::Index>(),
        replacement in 0usize..8,
    ) {
        let (model, store) = seq_model(seed, 8, 8, 4);
        let j = 1 + pick.index(inputs.len() - 1);
        let mut other = inputs.clone();
        other[j] = replacement;
        let feats = features(&[0.3, -1.2, 0.7, 2.0, -0.4], 9, 4);
        let run = |x: &[usize]| {
            let mut g = Graph::new(&store);
            let f = g.constant(feats.clone()).unwrap();
            let src = model.source(&mut g, f).unwrap();
            let d = model.decode(&mut g, x, &src).unwrap();
            g.value(d.logits).clone()
        };
        let (a, b) = (run(&inputs), run(&other));
        for r in 0..j {
            prop_assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn window_counts_follow_stride(stride in 1usize..64, width in 8usize..600, scales in prop::collection::vec(8usize..64, 1..4)) {
        let img = RawImage::new(32, width, vec![0.25; 32 * width]).unwrap();
        let cfg = WindowConfig { scales: scales.clone(), stride };
        let ws = extract_windows(&normalize_image(&img).unwrap(), &cfg).unwrap();
        prop_assert_eq!(ws.len(), (256 - 32) / stride + 1);
        prop_assert_eq!(ws.channels(), scales.len());
        prop_assert!(ws.centers().windows(2).all(|c| c[1] - c[0] == stride));
        prop_assert!(ws.to_tensor::<f32>().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generated_labels_respect_bounds(seed in 0u64..500, min in 1usize..4, extra in 0usize..4, count in 10usize..40) {
        let spec = DatasetSpec::new("0123456789ABC", count, min, min + extra, seed);
        let ds = gen_dataset(&spec).unwrap();
        prop_assert_eq!(ds.len(), count);
        prop_assert_eq!(ds.dev.len(), count / 10);
        for s in ds.train.iter().chain(&ds.dev) {
            prop_assert!((min..=min + extra).contains(&s.label.len()));
            prop_assert_eq!(s.image.height(), 32);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), d in 4usize..24) {
        let mut cfg = ScanConfig::desk(DIGITS, WindowConfig::single_scale());
        cfg.seq.d_hidden = d;
        let model = ScanModel::<f32>::new(cfg, seed).unwrap();
        let bytes = checkpoint::encode(&model).unwrap();
        let back: ScanModel<f32> = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
    }
}

/// Softmax over raw decoder logits for a fixed random source.
struct Scorer {
    model: ConvSeq2Seq,
    store: ParamStore<f64>,
    feats: Tensor<f64>,
}

impl StepScorer for Scorer {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn log_probs(&mut self, prefix: &[usize]) -> scan_core::Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let f = g.constant(self.feats.clone())?;
        let src = self.model.source(&mut g, f)?;
        let inputs: Vec<usize> = std::iter::once(scan_core::vocab::START).chain(prefix.iter().copied()).collect();
        let d = self.model.decode(&mut g, &inputs, &src)?;
        let l = g.value(d.logits);
        let last = Tensor::new(&[l.cols()], l.row(l.rows() - 1).to_vec())?;
        Ok(kernels::softmax(&last)?.data().iter().map(|p| p.ln()).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn beam_scores_are_finite_and_nonpositive(seed in 0u64..1000, width in 1usize..6) {
        let (model, store) = seq_model(seed, 8, 7, 3);
        let feats = features(&[0.5, -0.25, 1.5], 6, 3);
        let mut scorer = Scorer { model, store, feats };
        let hyps = beam_search(&mut scorer, BeamConfig { width, max_len: 5 }).unwrap();
        prop_assert!(!hyps.is_empty() && hyps.len() <= width);
        for h in &hyps {
            prop_assert!(h.finished && h.tokens.last() == Some(&END));
            prop_assert!(h.logprob <= 0.0);
            prop_assert!(h.normalized_score().is_finite() && h.normalized_score() <= 0.0);
        }
    }
}
