//! The full recognizer: windows, per-window features, seq2seq, decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{beam_search, BeamConfig, Hypothesis, StepScorer};
use crate::error::{Result, ScanError};
use crate::extractor::{ExtractorConfig, FeatureExtractor, Preset};
use crate::seq2seq::{AttentionMap, ConvSeq2Seq, SeqModelConfig, SourceRepresentation, SourceVars};
use crate::tensor::{kernels, Graph, ParamStore, Scalar, Tensor, Var};
use crate::vocab::{Vocabulary, ALPHANUMERIC, END, START};
use crate::windowing::{windows_for, RawImage, WindowConfig, WindowSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub charset: String,
    pub windows: WindowConfig,
    pub extractor: ExtractorConfig,
    pub seq: SeqModelConfig,
}

impl ScanConfig {
    pub fn new(preset: Preset, charset: &str, windows: WindowConfig) -> Self {
        let extractor = ExtractorConfig::for_preset(preset, windows.channels());
        let seq = match preset {
            Preset::Paper => SeqModelConfig::default(),
            Preset::Desk => SeqModelConfig::desk(),
        };
        ScanConfig {
            charset: charset.to_string(),
            windows,
            extractor,
            seq,
        }
    }

    pub fn paper() -> Self {
        Self::new(Preset::Paper, ALPHANUMERIC, WindowConfig::multi_scale())
    }

    pub fn desk(charset: &str, windows: WindowConfig) -> Self {
        Self::new(Preset::Desk, charset, windows)
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        self.extractor.validate()?;
        self.seq.validate()?;
        Vocabulary::new(&self.charset)?;
        if self.extractor.input_channels != self.windows.channels() {
            return Err(ScanError::ConfigMismatch(format!(
                "{} window scales but extractor takes {} channels",
                self.windows.channels(),
                self.extractor.input_channels
            )));
        }
        if self.windows.window_count() > self.seq.max_source_positions {
            return Err(ScanError::TooLong {
                len: self.windows.window_count(),
                max: self.seq.max_source_positions,
            });
        }
        Ok(())
    }

    /// Same parameter layout; dropout may differ.
    pub fn compatible_with(&self, other: &ScanConfig) -> bool {
        let mut a = self.clone();
        a.seq.dropout_p = other.seq.dropout_p;
        a == *other
    }

    /// Longest label the target position table can hold with `<s>` prepended.
    pub fn max_label_len(&self) -> usize {
        self.seq.max_target_positions - 1
    }
}

/// Best hypothesis plus the full ranked beam.
#[derive(Clone, Debug)]
pub struct Recognition {
    pub text: String,
    pub score: f64,
    pub hypotheses: Vec<(String, f64)>,
    pub best: Hypothesis,
}

pub struct ScanModel<T: Scalar> {
    config: ScanConfig,
    vocab: Vocabulary,
    extractor: FeatureExtractor,
    seq: ConvSeq2Seq,
    params: ParamStore<T>,
}

impl<T: Scalar> ScanModel<T> {
    pub fn new(config: ScanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::new(&config.charset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let extractor = FeatureExtractor::new(config.extractor.clone(), &mut params, &mut rng)?;
        let seq = ConvSeq2Seq::new(config.seq.clone(), config.extractor.feature_dim, vocab.len(), &mut params, &mut rng)?;
        Ok(ScanModel {
            config,
            vocab,
            extractor,
            seq,
            params,
        })
    }

    pub fn config(&self) -> &ScanConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn seq2seq(&self) -> &ConvSeq2Seq {
        &self.seq
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Dropout is not part of the parameter layout and can change between runs.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        let mut cfg = self.config.seq.clone();
        cfg.dropout_p = p;
        cfg.validate()?;
        self.seq.set_dropout(p);
        self.config.seq = cfg;
        Ok(())
    }

    pub fn windows(&self, img: &RawImage) -> Result<WindowSequence> {
        windows_for(img, &self.config.windows)
    }

    /// Label to token ids, checked against the charset and the length limit.
    pub fn encode_label(&self, label: &str) -> Result<Vec<usize>> {
        let tokens = self.vocab.encode(label)?;
        if tokens.is_empty() {
            return Err(ScanError::Empty("label"));
        }
        if tokens.len() > self.config.max_label_len() {
            return Err(ScanError::TooLong {
                len: tokens.len(),
                max: self.config.max_label_len(),
            });
        }
        Ok(tokens)
    }

    pub fn source(&self, g: &mut Graph<'_, T>, ws: &WindowSequence) -> Result<SourceVars> {
        let x = g.constant(ws.to_tensor())?;
        let features = self.extractor.forward(g, x)?;
        self.seq.source(g, features)
    }

    /// Summed token NLL of `tokens` (without specials) under teacher forcing.
    pub fn sample_loss(&self, g: &mut Graph<'_, T>, ws: &WindowSequence, tokens: &[usize]) -> Result<Var> {
        let src = self.source(g, ws)?;
        let inputs = teacher_inputs(tokens);
        let targets: Vec<Option<usize>> = tokens.iter().chain(std::iter::once(&END)).map(|&t| Some(t)).collect();
        let decoded = self.seq.decode(g, &inputs, &src)?;
        g.nll(decoded.logits, &targets)
    }

    /// Frozen source representation for repeated decoding calls.
    pub fn encode(&self, ws: &WindowSequence) -> Result<SourceRepresentation<T>> {
        let mut g = Graph::new(&self.params);
        let src = self.source(&mut g, ws)?;
        Ok(SourceRepresentation {
            e: g.value(src.e).clone(),
            z: g.value(src.z).clone(),
        })
    }

    /// Logits `[n+1, |V|]` and attention for `<s> tokens` under teacher forcing.
    pub fn teacher_forced(&self, src: &SourceRepresentation<T>, tokens: &[usize]) -> Result<(Tensor<T>, AttentionMap)> {
        let mut g = Graph::new(&self.params);
        let vars = src.attach(&mut g)?;
        let decoded = self.seq.decode(&mut g, &teacher_inputs(tokens), &vars)?;
        let map = AttentionMap::from_graph(&g, &decoded.attention)?;
        Ok((g.value(decoded.logits).clone(), map))
    }

    pub fn beam(&self, ws: &WindowSequence, beam: BeamConfig) -> Result<Vec<Hypothesis>> {
        let src = self.encode(ws)?;
        let mut scorer = SourceScorer { model: self, src: &src };
        let max_len = beam.max_len.min(self.config.seq.max_target_positions);
        beam_search(&mut scorer, BeamConfig { max_len, ..beam })
    }

    pub fn recognize_windows(&self, ws: &WindowSequence, beam: BeamConfig) -> Result<Recognition> {
        let hyps = self.beam(ws, beam)?;
        let best = hyps.first().cloned().ok_or(ScanError::Empty("beam output"))?;
        Ok(Recognition {
            text: self.vocab.decode(best.body()),
            score: best.normalized_score(),
            hypotheses: hyps
                .iter()
                .map(|h| (self.vocab.decode(h.body()), h.normalized_score()))
                .collect(),
            best,
        })
    }

    pub fn recognize(&self, img: &RawImage, beam: BeamConfig) -> Result<Recognition> {
        self.recognize_windows(&self.windows(img)?, beam)
    }
}

fn teacher_inputs(tokens: &[usize]) -> Vec<usize> {
    std::iter::once(START).chain(tokens.iter().copied()).collect()
}

/// Recomputes the decoder over the whole prefix at every step.
pub struct SourceScorer<'m, T: Scalar> {
    model: &'m ScanModel<T>,
    src: &'m SourceRepresentation<T>,
}

impl<T: Scalar> StepScorer for SourceScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let (logits, _) = self.model.teacher_forced(self.src, prefix)?;
        let last: Vec<f64> = logits.row(logits.rows() - 1).iter().map(|v| v.f64()).collect();
        Ok(kernels::log_softmax_row(&last))
    }
}
