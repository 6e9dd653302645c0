//! Beam search with length normalization and lexicon-constrained selection.

use std::cmp::Ordering;
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::vocab::{END, PAD, START};

/// Next-token log-probabilities given the tokens emitted so far.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;

    /// `prefix` excludes `<s>`. Returns one log-probability per vocabulary entry.
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens without `<s>`; ends with `</s>` when finished.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability divided by the token count (at least 1).
    pub fn normalized_score(&self) -> f64 {
        self.logprob / self.tokens.len().max(1) as f64
    }

    /// Tokens with the trailing `</s>` removed.
    pub fn body(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&END) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum hypothesis length in tokens, `</s>` included.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 5, max_len: 25 }
    }
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Beam search returning at most `width` finished hypotheses, best
/// normalized score first.
///
/// Every step expands each live hypothesis over all emittable tokens and
/// keeps the best `width - finished` candidates by accumulated
/// log-probability; candidates ending in `</s>` are moved to the finished
/// set. At `max_len` only `</s>` may be emitted.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &mut S, cfg: BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(ScanError::InvalidArgument(format!("beam {cfg:?}")));
    }
    let vocab = scorer.vocab_size();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 1..=cfg.max_len {
        let mut candidates = Vec::new();
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            if lp.len() != vocab {
                return Err(ScanError::shape("beam_search", format!("{} scores for {vocab} tokens", lp.len())));
            }
            if lp.iter().any(|v| v.is_nan() || *v > 1e-9) {
                return Err(ScanError::NonFinite { op: "beam_search" });
            }
            for (t, &l) in lp.iter().enumerate() {
                if t == START || t == PAD || (step == cfg.max_len && t != END) {
                    continue;
                }
                let logprob = h.logprob + l.min(0.0);
                if logprob.is_finite() {
                    candidates.push((h, t, logprob));
                }
            }
        }
        // Stable sort keeps expansion order among equal scores.
        candidates.sort_by(|a, b| by_score_desc(a.2, b.2));
        candidates.truncate(cfg.width - done.len());
        let mut next = Vec::new();
        for (h, t, logprob) in candidates {
            let mut tokens = h.tokens.clone();
            tokens.push(t);
            let finished = t == END;
            let hyp = Hypothesis {
                tokens,
                logprob,
                finished,
            };
            if finished {
                done.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if done.len() >= cfg.width || live.is_empty() {
            break;
        }
    }
    done.sort_by(|a, b| by_score_desc(a.normalized_score(), b.normalized_score()));
    Ok(done)
}

/// Unit-cost edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Candidate words, uppercased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_uppercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(ScanError::Empty("lexicon"));
        }
        Ok(Lexicon { words })
    }

    /// One word per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Word minimizing edit distance over all (hypothesis, word) pairs.
///
/// `hyps` holds `(text, normalized score)`. Ties go to the higher score,
/// then to the lexicographically smaller word.
pub fn lexicon_select(hyps: &[(String, f64)], lexicon: &Lexicon) -> Result<String> {
    if hyps.is_empty() {
        return Err(ScanError::Empty("hypotheses"));
    }
    let mut best: Option<(usize, f64, &str)> = None;
    for (text, score) in hyps {
        let text = text.to_uppercase();
        for word in &lexicon.words {
            let d = levenshtein(&text, word);
            let better = match best {
                None => true,
                Some((bd, bs, bw)) => {
                    d < bd || (d == bd && (*score > bs || (*score == bs && word.as_str() < bw)))
                }
            };
            if better {
                best = Some((d, *score, word));
            }
        }
    }
    Ok(best.map(|b| b.2.to_string()).expect("nonempty inputs"))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Scores that depend on the whole prefix through a seeded hash.
    struct TableScorer {
        vocab: usize,
        seed: u64,
        sharpness: f64,
    }

    impl StepScorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
            let key = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let logits: Vec<f64> = (0..self.vocab)
                .map(|t| if t == START || t == PAD { f64::NEG_INFINITY } else { self.sharpness * rng.random_range(-1.0..1.0) })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
            Ok(logits.iter().map(|l| l - z).collect())
        }
    }

    /// Best normalized score over every `c1..ck </s>` with `k < max_len`.
    fn exhaustive(scorer: &mut TableScorer, max_len: usize) -> (Vec<usize>, f64) {
        let chars: Vec<usize> = (0..scorer.vocab).filter(|&t| t != START && t != PAD && t != END).collect();
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut frontier = vec![(Vec::new(), 0.0)];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (prefix, lp) in frontier {
                let scores = scorer.log_probs(&prefix).unwrap();
                let mut full: Vec<usize> = prefix.clone();
                full.push(END);
                let s = (lp + scores[END]) / full.len() as f64;
                if s > best.1 {
                    best = (full, s);
                }
                for &c in &chars {
                    let mut p = prefix.clone();
                    p.push(c);
                    next.push((p, lp + scores[c]));
                }
            }
            frontier = next;
        }
        best
    }

    #[test]
    fn matches_exhaustive_search() {
        // Specials plus three characters: four emittable tokens.
        for seed in 0..100 {
            let mut s = TableScorer { vocab: 6, seed, sharpness: 3.0 };
            let beam = beam_search(&mut s, BeamConfig { width: 64, max_len: 3 }).unwrap();
            let (tokens, score) = exhaustive(&mut s, 3);
            assert_eq!(beam[0].tokens, tokens, "seed {seed}");
            assert!((beam[0].normalized_score() - score).abs() < 1e-12);
            assert_eq!(beam.len(), 13);
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..20 {
            let mut s = TableScorer { vocab: 8, seed, sharpness: 2.0 };
            let beam = beam_search(&mut s, BeamConfig { width: 1, max_len: 6 }).unwrap();
            let mut prefix = Vec::new();
            loop {
                let lp = s.log_probs(&prefix).unwrap();
                let mut best = if prefix.len() + 1 == 6 { END } else { 0 };
                if prefix.len() + 1 < 6 {
                    for t in 0..8 {
                        if lp[t] > lp[best] {
                            best = t;
                        }
                    }
                }
                prefix.push(best);
                if best == END {
                    break;
                }
            }
            assert_eq!(beam.len(), 1);
            assert_eq!(beam[0].tokens, prefix);
        }
    }

    struct Forced;

    impl StepScorer for Forced {
        fn vocab_size(&self) -> usize {
            5
        }

        fn log_probs(&mut self, _: &[usize]) -> Result<Vec<f64>> {
            let mut v = vec![f64::NEG_INFINITY; 5];
            v[END] = 0.0;
            Ok(v)
        }
    }

    #[test]
    fn certain_end_gives_empty_string() {
        let beam = beam_search(&mut Forced, BeamConfig::default()).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].tokens, vec![END]);
        assert!(beam[0].body().is_empty());
        assert_eq!(beam[0].normalized_score(), 0.0);
    }

    #[test]
    fn scores_are_finite_and_nonpositive() {
        for seed in 0..20 {
            let mut s = TableScorer { vocab: 10, seed, sharpness: 4.0 };
            let beam = beam_search(&mut s, BeamConfig { width: 5, max_len: 8 }).unwrap();
            assert!(!beam.is_empty() && beam.len() <= 5);
            for h in &beam {
                assert!(h.finished && h.tokens.last() == Some(&END));
                assert!(h.normalized_score().is_finite() && h.normalized_score() <= 0.0);
            }
            assert!(beam.windows(2).all(|w| w[0].normalized_score() >= w[1].normalized_score()));
        }
    }

    #[test]
    fn rejects_zero_width() {
        assert!(beam_search(&mut Forced, BeamConfig { width: 0, max_len: 3 }).is_err());
    }

    fn recursive(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let cost = usize::from(a[0] != b[0]);
        let v = (recursive(&a[1..], &b[1..], memo) + cost)
            .min(recursive(&a[1..], b, memo) + 1)
            .min(recursive(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }

    fn lev_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        recursive(&a, &b, &mut HashMap::new())
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(lev_oracle("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("HORTON", "HORTON"), 0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursion(a in "[A-D]{0,12}", b in "[A-D]{0,12}") {
            prop_assert_eq!(levenshtein(&a, &b), lev_oracle(&a, &b));
        }

        #[test]
        fn levenshtein_is_a_metric(a in "[A-C]{0,12}", b in "[A-C]{0,12}", c in "[A-C]{0,12}") {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        }

        #[test]
        fn selection_is_a_member(
            hyps in prop::collection::vec(("[A-Z0-9]{0,8}", -5.0..0.0f64), 1..5),
            words in prop::collection::vec("[A-Z0-9]{1,8}", 1..10),
        ) {
            let lex = Lexicon::new(&words).unwrap();
            let chosen = lexicon_select(&hyps, &lex).unwrap();
            prop_assert!(lex.words().contains(&chosen));
        }
    }

    #[test]
    fn lexicon_rules() {
        let lex = Lexicon::parse("horton\nHOUSE\n\n").unwrap();
        assert_eq!(lex.words(), ["HORTON", "HOUSE"]);
        let pick = |h: &[(&str, f64)], l: &Lexicon| {
            let h: Vec<(String, f64)> = h.iter().map(|(t, s)| (t.to_string(), *s)).collect();
            lexicon_select(&h, l).unwrap()
        };
        assert_eq!(pick(&[("HOUSE", -0.1), ("HORTON", -0.5)], &lex), "HOUSE");
        let single = Lexicon::new(["HORTON"]).unwrap();
        assert_eq!(pick(&[("H0RTON", -0.2)], &single), "HORTON");

        // CAT and BAT are both one edit from HAT.
        let tie = Lexicon::new(["CAT", "BAT"]).unwrap();
        assert_eq!(pick(&[("HAT", -0.3)], &tie), "BAT");
        // Equal distance from different hypotheses: the higher score wins.
        let split = Lexicon::new(["AAX", "BBX"]).unwrap();
        assert_eq!(pick(&[("AAY", -0.9), ("BBY", -0.1)], &split), "BBX");

        assert!(Lexicon::new(Vec::<String>::new()).is_err());
        assert!(lexicon_select(&[], &lex).is_err());
    }
}
