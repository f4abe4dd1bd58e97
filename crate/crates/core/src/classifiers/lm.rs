//! Per-dialect trigram language models with interpolated Kneser-Ney smoothing.
//!
//! Sequences are padded as `* * w_1 ... w_n </s>`. A single absolute discount
//! is used at every order; the unigram level interpolates with a uniform
//! distribution over the known types plus one reserved `<unk>` slot, so every
//! event, including out-of-vocabulary tokens, has positive probability.

use std::collections::{BTreeSet, HashMap};

use crate::container::{Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};
use crate::par;

use super::{read_classes, write_classes, Prediction};

pub const START: &str = "*";
pub const STOP: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const DEFAULT_DISCOUNT: f64 = 0.75;

const START_ID: u32 = 0;
const STOP_ID: u32 = 1;
const UNK_ID: u32 = 2;
const FIRST_WORD_ID: u32 = 3;

/// Anything that assigns `P(w | w2, w1)` over string tokens.
pub trait TrigramScorer {
    fn cond_prob(&self, w2: &str, w1: &str, w: &str) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Context {
    total: f64,
    distinct: f64,
}

#[derive(Debug, Clone)]
pub struct TrigramLm {
    discount: f64,
    /// Word tokens in id order, starting at `FIRST_WORD_ID`.
    words: Vec<String>,
    ids: HashMap<String, u32>,
    trigrams: HashMap<(u32, u32, u32), u64>,
    tri_ctx: HashMap<(u32, u32), Context>,
    bi_cont: HashMap<(u32, u32), u64>,
    bi_ctx: HashMap<u32, Context>,
    uni_cont: Vec<u64>,
    uni_total: f64,
    uni_types: f64,
}

impl PartialEq for TrigramLm {
    fn eq(&self, other: &Self) -> bool {
        self.discount == other.discount && self.words == other.words && self.trigrams == other.trigrams
    }
}

pub fn train_trigram_lm(sequences: &[Vec<String>], discount: f64) -> Result<TrigramLm> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
    }
    if sequences.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("language model corpus is empty".into()));
    }
    let vocab: BTreeSet<&str> = sequences.iter().flatten().map(String::as_str).collect();
    if let Some(bad) = vocab.iter().find(|t| [START, STOP, UNK].contains(t)) {
        return Err(Error::InvalidArgument(format!("reserved token {bad:?} in corpus")));
    }
    let words: Vec<String> = vocab.into_iter().map(String::from).collect();
    let ids: HashMap<String, u32> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), FIRST_WORD_ID + i as u32))
        .collect();
    let mut trigrams = HashMap::new();
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let mut h = (START_ID, START_ID);
        for w in seq.iter().map(|t| ids[t]).chain(std::iter::once(STOP_ID)) {
            *trigrams.entry((h.0, h.1, w)).or_insert(0u64) += 1;
            h = (h.1, w);
        }
    }
    Ok(TrigramLm::from_counts(discount, words, trigrams))
}

impl TrigramLm {
    fn from_counts(discount: f64, words: Vec<String>, trigrams: HashMap<(u32, u32, u32), u64>) -> Self {
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), FIRST_WORD_ID + i as u32))
            .collect();
        let mut tri_ctx: HashMap<(u32, u32), Context> = HashMap::new();
        let mut bi_cont: HashMap<(u32, u32), u64> = HashMap::new();
        for (&(u, v, w), &c) in &trigrams {
            let ctx = tri_ctx.entry((u, v)).or_default();
            ctx.total += c as f64;
            ctx.distinct += 1.0;
            *bi_cont.entry((v, w)).or_default() += 1;
        }
        let n_ids = FIRST_WORD_ID as usize + words.len();
        let mut bi_ctx: HashMap<u32, Context> = HashMap::new();
        let mut uni_cont = vec![0u64; n_ids];
        for (&(v, w), &c) in &bi_cont {
            let ctx = bi_ctx.entry(v).or_default();
            ctx.total += c as f64;
            ctx.distinct += 1.0;
            uni_cont[w as usize] += 1;
        }
        let uni_total = uni_cont.iter().sum::<u64>() as f64;
        let uni_types = uni_cont.iter().filter(|&&c| c > 0).count() as f64;
        TrigramLm {
            discount,
            words,
            ids,
            trigrams,
            tri_ctx,
            bi_cont,
            bi_ctx,
            uni_cont,
            uni_total,
            uni_types,
        }
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Number of predictable known types: word tokens plus `</s>`.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 1
    }

    /// Word tokens known to the model.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn id(&self, token: &str) -> u32 {
        match token {
            START => START_ID,
            STOP => STOP_ID,
            _ => self.ids.get(token).copied().unwrap_or(UNK_ID),
        }
    }

    fn unigram(&self, w: u32) -> f64 {
        let d = self.discount;
        let c = self.uni_cont.get(w as usize).copied().unwrap_or(0) as f64;
        let uniform = 1.0 / (self.vocab_size() as f64 + 1.0);
        (c - d).max(0.0) / self.uni_total + d * self.uni_types / self.uni_total * uniform
    }

    fn bigram(&self, v: u32, w: u32) -> f64 {
        let lower = self.unigram(w);
        match self.bi_ctx.get(&v) {
            Some(ctx) if ctx.total > 0.0 => {
                let c = self.bi_cont.get(&(v, w)).copied().unwrap_or(0) as f64;
                (c - self.discount).max(0.0) / ctx.total + self.discount * ctx.distinct / ctx.total * lower
            }
            _ => lower,
        }
    }

    fn trigram(&self, u: u32, v: u32, w: u32) -> f64 {
        let lower = self.bigram(v, w);
        match self.tri_ctx.get(&(u, v)) {
            Some(ctx) if ctx.total > 0.0 => {
                let c = self.trigrams.get(&(u, v, w)).copied().unwrap_or(0) as f64;
                (c - self.discount).max(0.0) / ctx.total + self.discount * ctx.distinct / ctx.total * lower
            }
            _ => lower,
        }
    }

    /// Every event the model can predict: known words, `</s>` and `<unk>`.
    pub fn event_space(&self) -> Vec<String> {
        let mut out = self.words.clone();
        out.push(STOP.into());
        out.push(UNK.into());
        out
    }

    /// Histories `(w2, w1)` observed in training.
    pub fn observed_histories(&self) -> Vec<(String, String)> {
        let mut h: Vec<(u32, u32)> = self.tri_ctx.keys().copied().collect();
        h.sort_unstable();
        h.into_iter().map(|(u, v)| (self.token(u), self.token(v))).collect()
    }

    fn token(&self, id: u32) -> String {
        match id {
            START_ID => START.into(),
            STOP_ID => STOP.into(),
            UNK_ID => UNK.into(),
            _ => self.words[(id - FIRST_WORD_ID) as usize].clone(),
        }
    }

    /// Perplexity over the padded events of `tokens`; unknown tokens map to `<unk>`.
    pub fn perplexity(&self, tokens: &[String]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty token sequence".into()));
        }
        let mut h = (START_ID, START_ID);
        let mut log_sum = 0.0;
        for w in tokens.iter().map(|t| self.id(t)).chain(std::iter::once(STOP_ID)) {
            log_sum += self.trigram(h.0, h.1, w).ln();
            h = (h.1, w);
        }
        Ok((-log_sum / (tokens.len() + 1) as f64).exp())
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64(self.discount).strs(&self.words);
        let mut tri: Vec<_> = self.trigrams.iter().map(|(&k, &c)| (k, c)).collect();
        tri.sort_unstable();
        w.len(tri.len());
        for ((a, b, c), n) in tri {
            w.u32(a).u32(b).u32(c).u64(n);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let discount = r.f64()?;
        let words = r.strs()?;
        let n = r.read_len()?;
        let max_id = FIRST_WORD_ID + words.len() as u32;
        let mut trigrams = HashMap::with_capacity(n);
        for _ in 0..n {
            let key = (r.u32()?, r.u32()?, r.u32()?);
            if key.0 >= max_id || key.1 >= max_id || key.2 >= max_id {
                return Err(Error::Container("trigram id out of range".into()));
            }
            trigrams.insert(key, r.u64()?);
        }
        Ok(TrigramLm::from_counts(discount, words, trigrams))
    }
}

impl TrigramScorer for TrigramLm {
    fn cond_prob(&self, w2: &str, w1: &str, w: &str) -> f64 {
        self.trigram(self.id(w2), self.id(w1), self.id(w))
    }
}

/// `exp(-(1/M) sum ln P(w_i | w_{i-2}, w_{i-1}))` over the `M = len + 1`
/// padded events of `tokens`, for any scorer.
pub fn perplexity<M: TrigramScorer + ?Sized>(lm: &M, tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty token sequence".into()));
    }
    let mut h = (START, START);
    let mut log_sum = 0.0;
    for w in tokens.iter().map(String::as_str).chain(std::iter::once(STOP)) {
        log_sum += lm.cond_prob(h.0, h.1, w).ln();
        h = (h.1, w);
    }
    Ok((-log_sum / (tokens.len() + 1) as f64).exp())
}

/// One language model per dialect, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct LmSet {
    classes: Vec<DialectLabel>,
    models: Vec<TrigramLm>,
}

impl LmSet {
    pub fn new(classes: Vec<DialectLabel>, models: Vec<TrigramLm>) -> Result<Self> {
        if classes.is_empty() || classes.len() != models.len() {
            return Err(Error::InvalidArgument("need one language model per class".into()));
        }
        Ok(LmSet { classes, models })
    }

    /// Trains one model per class from `(sequence, class index)` pairs.
    pub fn train(classes: Vec<DialectLabel>, sequences: &[Vec<String>], labels: &[usize], discount: f64) -> Result<Self> {
        super::check_labels(labels, &classes, sequences.len())?;
        let per_class: Vec<Vec<Vec<String>>> = (0..classes.len())
            .map(|c| {
                sequences
                    .iter()
                    .zip(labels)
                    .filter(|(_, &y)| y == c)
                    .map(|(s, _)| s.clone())
                    .collect()
            })
            .collect();
        let models = par::map(&per_class, |seqs| train_trigram_lm(seqs, discount))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        LmSet::new(classes, models)
    }

    pub fn classes(&self) -> &[DialectLabel] {
        &self.classes
    }

    pub fn models(&self) -> &[TrigramLm] {
        &self.models
    }

    pub fn discount(&self) -> f64 {
        self.models[0].discount
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        write_classes(w, &self.classes);
        for m in &self.models {
            m.write(w);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let classes = read_classes(r)?;
        let models = (0..classes.len()).map(|_| TrigramLm::read(r)).collect::<Result<_>>()?;
        LmSet::new(classes, models)
    }
}

/// Scores each dialect by `-ln(perplexity)`; the lowest perplexity wins.
pub fn classify_by_perplexity(lms: &LmSet, id: &str, tokens: &[String]) -> Result<Prediction> {
    let scores = lms
        .models
        .iter()
        .map(|m| m.perplexity(tokens).map(|p| -p.ln()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction::from_scores(id, &lms.classes, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn seqs(docs: &[&str]) -> Vec<Vec<String>> {
        docs.iter().map(|d| toks(d)).collect()
    }

    /// Brute-force interpolated Kneser-Ney evaluated by rescanning the raw
    /// list of padded trigram events for every query.
    struct NaiveKn {
        events: Vec<[String; 3]>,
        vocab_size: usize,
        d: f64,
    }

    impl NaiveKn {
        fn new(corpus: &[Vec<String>], d: f64) -> Self {
            let mut events = Vec::new();
            let mut vocab = BTreeSet::new();
            for s in corpus {
                let padded: Vec<String> = [START, START]
                    .iter()
                    .map(|s| s.to_string())
                    .chain(s.iter().cloned())
                    .chain(std::iter::once(STOP.to_string()))
                    .collect();
                for w in padded.windows(3) {
                    events.push([w[0].clone(), w[1].clone(), w[2].clone()]);
                    vocab.insert(w[2].clone());
                }
            }
            NaiveKn {
                events,
                vocab_size: vocab.len(),
                d,
            }
        }

        fn distinct<T: Ord>(it: impl Iterator<Item = T>) -> f64 {
            it.collect::<BTreeSet<_>>().len() as f64
        }

        // N1+(. v w)
        fn bi_cont(&self, v: &str, w: &str) -> f64 {
            Self::distinct(self.events.iter().filter(|e| e[1] == v && e[2] == w).map(|e| &e[0]))
        }

        fn p1(&self, w: &str) -> f64 {
            let bigram_types: BTreeSet<(&String, &String)> = self.events.iter().map(|e| (&e[1], &e[2])).collect();
            let total = bigram_types.len() as f64;
            let types = Self::distinct(bigram_types.iter().map(|b| b.1));
            let c = bigram_types.iter().filter(|b| b.1 == w).count() as f64;
            (c - self.d).max(0.0) / total + self.d * types / total / (self.vocab_size as f64 + 1.0)
        }

        fn p2(&self, v: &str, w: &str) -> f64 {
            let following: BTreeSet<&String> = self.events.iter().filter(|e| e[1] == v).map(|e| &e[2]).collect();
            let total: f64 = following.iter().map(|x| self.bi_cont(v, x)).sum();
            if total == 0.0 {
                return self.p1(w);
            }
            (self.bi_cont(v, w) - self.d).max(0.0) / total
                + self.d * following.len() as f64 / total * self.p1(w)
        }

        fn p3(&self, u: &str, v: &str, w: &str) -> f64 {
            let ctx: Vec<&[String; 3]> = self.events.iter().filter(|e| e[0] == u && e[1] == v).collect();
            if ctx.is_empty() {
                return self.p2(v, w);
            }
            let total = ctx.len() as f64;
            let c = ctx.iter().filter(|e| e[2] == w).count() as f64;
            let distinct = Self::distinct(ctx.iter().map(|e| &e[2]));
            (c - self.d).max(0.0) / total + self.d * distinct / total * self.p2(v, w)
        }
    }

    #[test]
    fn normalizes_on_tiny_corpus() {
        for d in [0.1, 0.5, 0.75, 0.99] {
            let lm = train_trigram_lm(&seqs(&["a b"]), d).unwrap();
            let sum: f64 = lm.event_space().iter().map(|w| lm.cond_prob(START, START, w)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
        }
    }

    #[test]
    fn matches_brute_force_kn_oracle() {
        let corpus = seqs(&["a b c", "a b d"]);
        let lm = train_trigram_lm(&corpus, 0.5).unwrap();
        let oracle = NaiveKn::new(&corpus, 0.5);
        let tokens = ["*", "a", "b", "c", "d", "</s>", "zzz"];
        for u in tokens {
            for v in tokens {
                for w in tokens.iter().filter(|&&w| w != "*") {
                    let got = lm.cond_prob(u, v, w);
                    let want = oracle.p3(u, v, if *w == "zzz" { "<unk>" } else { w });
                    assert!((got - want).abs() < 1e-12, "P({w}|{u},{v}) {got} vs {want}");
                }
            }
        }
        // hand evaluation: P1(a) = 11/72, P2(a|*) = 83/144, P3(a|*,*) = 515/576
        assert!((lm.cond_prob(START, START, "a") - 515.0 / 576.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_two_event_case() {
        let lm = train_trigram_lm(&seqs(&["a"]), 0.75).unwrap();
        let p_a = lm.cond_prob(START, START, "a");
        let p_stop = lm.cond_prob(START, "a", STOP);
        let expected = (-(p_a.ln() + p_stop.ln()) / 2.0).exp();
        let got = perplexity(&lm, &toks("a")).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((lm.perplexity(&toks("a")).unwrap() - got).abs() < 1e-12);
    }

    struct Uniform(f64);
    impl TrigramScorer for Uniform {
        fn cond_prob(&self, _: &str, _: &str, _: &str) -> f64 {
            1.0 / self.0
        }
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let p = perplexity(&Uniform(37.0), &toks("x y z w")).unwrap();
        assert!((p - 37.0).abs() < 1e-9);
        assert!(perplexity(&Uniform(2.0), &[]).is_err());
    }

    #[test]
    fn oov_only_sequence_is_finite() {
        let lm = train_trigram_lm(&seqs(&["a b", "b a"]), 0.75).unwrap();
        let p = lm.perplexity(&toks("q r s")).unwrap();
        assert!(p.is_finite() && p > 0.0);
    }

    #[test]
    fn repeated_sequence_has_minimal_perplexity() {
        let lm = train_trigram_lm(&seqs(&["a b c"; 5]), 0.75).unwrap();
        let best = lm.perplexity(&toks("a b c")).unwrap();
        let vocab = ["a", "b", "c"];
        for x in vocab {
            for y in vocab {
                for z in vocab {
                    let s = vec![x.to_string(), y.to_string(), z.to_string()];
                    if s != toks("a b c") {
                        assert!(lm.perplexity(&s).unwrap() > best);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(train_trigram_lm(&[], 0.5).is_err());
        assert!(train_trigram_lm(&[vec![]], 0.5).is_err());
        assert!(train_trigram_lm(&seqs(&["a"]), 1.0).is_err());
        assert!(train_trigram_lm(&seqs(&["a </s>"]), 0.5).is_err());
    }

    fn labels(names: &[&str]) -> Vec<DialectLabel> {
        names.iter().map(|n| DialectLabel::new(n).unwrap()).collect()
    }

    #[test]
    fn classification_examples() {
        let set = LmSet::train(labels(&["A"]), &seqs(&["x y"]), &[0], 0.75).unwrap();
        assert_eq!(classify_by_perplexity(&set, "t", &toks("q")).unwrap().index, 0);

        let corpus = seqs(&["a b a c", "c a b", "x y z", "z x y x"]);
        let set = LmSet::train(labels(&["A", "B"]), &corpus, &[0, 0, 1, 1], 0.75).unwrap();
        assert_eq!(classify_by_perplexity(&set, "t", &toks("c a b")).unwrap().label.as_str(), "A");
        assert_eq!(classify_by_perplexity(&set, "t", &toks("x y z")).unwrap().label.as_str(), "B");

        // identical models tie; lowest index wins
        let set = LmSet::train(labels(&["A", "B"]), &seqs(&["a b", "a b"]), &[0, 1], 0.75).unwrap();
        assert_eq!(classify_by_perplexity(&set, "t", &toks("a")).unwrap().index, 0);
    }

    #[test]
    fn random_histories_normalize_and_order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let corpus: Vec<Vec<String>> = (0..60)
            .map(|_| (0..rng.random_range(1..10)).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect())
            .collect();
        let lm = train_trigram_lm(&corpus, 0.75).unwrap();
        let events = lm.event_space();
        for (u, v) in lm.observed_histories() {
            let sum: f64 = events.iter().map(|w| lm.cond_prob(&u, &v, w)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let mut reversed = corpus.clone();
        reversed.reverse();
        let lm2 = train_trigram_lm(&reversed, 0.75).unwrap();
        let probe = toks("w1 w3 w3 w7 w0");
        assert_eq!(lm.perplexity(&probe).unwrap(), lm2.perplexity(&probe).unwrap());
    }
}
