//! Caption metrics: BLEU-4, ROUGE-L, a dictionary-free METEOR and CIDEr-D.
//!
//! All metrics work on tokens from [`tokenize`]. METEOR aligns exact and
//! stemmed unigrams only (no synonym tables), so absolute values sit below
//! the reference toolkit's.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Substitute for zero clipped n-gram counts.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;
/// Recall weight in the METEOR harmonic mean.
pub const METEOR_ALPHA: f64 = 0.9;
pub const CIDER_SIGMA: f64 = 6.0;

static STEMMER: LazyLock<Stemmer> = LazyLock::new(|| Stemmer::create(Algorithm::English));

/// Lowercases, turns punctuation into spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Sentence BLEU-4 with brevity penalty against the closest reference length.
pub fn bleu4(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        // Smoothing only rescues higher orders; no shared word at all scores 0.
        if n == 1 && clipped == 0 {
            return 0.0;
        }
        let p = if total == 0 {
            BLEU_EPSILON
        } else if clipped == 0 {
            BLEU_EPSILON / total as f64
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|len| (len.abs_diff(c), *len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure, best over references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let lcs = lcs_len(candidate, r) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / candidate.len() as f64;
            let rec = lcs / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Unigram alignment in two stages (exact, then stem); returns `(matches, chunks)`.
fn meteor_align(cand: &[String], refr: &[String]) -> (usize, usize) {
    let mut link: Vec<Option<usize>> = vec![None; cand.len()];
    let mut used = vec![false; refr.len()];
    let stems = |t: &[String]| -> Vec<String> { t.iter().map(|w| STEMMER.stem(w).into_owned()).collect() };
    let stages: [(Vec<String>, Vec<String>); 2] = [(cand.to_vec(), refr.to_vec()), (stems(cand), stems(refr))];
    for (ck, rk) in &stages {
        for i in 0..cand.len() {
            if link[i].is_some() {
                continue;
            }
            let after_prev = i.checked_sub(1).and_then(|p| link[p]).map(|j| j + 1);
            let pick = after_prev
                .filter(|&j| j < refr.len() && !used[j] && rk[j] == ck[i])
                .or_else(|| (0..refr.len()).find(|&j| !used[j] && rk[j] == ck[i]));
            if let Some(j) = pick {
                link[i] = Some(j);
                used[j] = true;
            }
        }
    }
    let mut matches = 0;
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, l) in link.iter().enumerate() {
        if let Some(j) = *l {
            matches += 1;
            if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                chunks += 1;
            }
            prev = Some((i, j));
        } else {
            prev = None;
        }
    }
    (matches, chunks)
}

/// METEOR without synonym matching; best over references.
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let (m, chunks) = meteor_align(candidate, r);
            if m == 0 {
                return 0.0;
            }
            let p = m as f64 / candidate.len() as f64;
            let rec = m as f64 / r.len() as f64;
            let fmean = p * rec / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * rec);
            let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
            fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

/// Document frequencies over an evaluation set's references.
#[derive(Debug, Clone)]
pub struct CiderCorpus {
    df: HashMap<Vec<String>, f64>,
    log_images: f64,
}

struct TfIdf {
    vecs: [HashMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    length: f64,
}

impl CiderCorpus {
    /// `references[i]` holds all reference captions (tokenized) of item `i`.
    pub fn new(references: &[Vec<Vec<String>>]) -> Result<Self, MetricsError> {
        if references.is_empty() || references.iter().all(|r| r.is_empty()) {
            return Err(MetricsError::EmptyCorpus);
        }
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for refs in references {
            let mut seen: HashSet<&[String]> = HashSet::new();
            for r in refs {
                for n in 1..=4 {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        Ok(Self { df, log_images: (references.len() as f64).ln() })
    }

    fn tfidf(&self, tokens: &[String]) -> TfIdf {
        let mut vecs: [HashMap<Vec<String>, f64>; 4] = Default::default();
        let mut norms = [0.0f64; 4];
        for n in 1..=4 {
            for (g, tf) in ngram_counts(tokens, n) {
                let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                let v = tf as f64 * (self.log_images - df.ln());
                norms[n - 1] += v * v;
                vecs[n - 1].insert(g.to_vec(), v);
            }
        }
        // length in bigrams, matching the reference scorer
        let length = tokens.len().saturating_sub(1) as f64;
        TfIdf { vecs, norms: norms.map(f64::sqrt), length }
    }

    /// CIDEr-D of one candidate against its references, in `[0, 10]`.
    pub fn cider_d(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let hyp = self.tfidf(candidate);
        let mut total = 0.0;
        for r in references {
            let refv = self.tfidf(r);
            let delta = hyp.length - refv.length;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..4 {
                let mut val: f64 = hyp.vecs[n]
                    .iter()
                    .map(|(g, h)| {
                        let r = refv.vecs[n].get(g).copied().unwrap_or(0.0);
                        h.min(r) * r
                    })
                    .sum();
                if hyp.norms[n] != 0.0 && refv.norms[n] != 0.0 {
                    val /= hyp.norms[n] * refv.norms[n];
                }
                total += val * penalty;
            }
        }
        10.0 * total / 4.0 / references.len() as f64
    }
}

/// Caption scores for one item or averaged over a set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_d: f64,
}

/// A predicted caption and its references, as raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub candidate: String,
    pub references: Vec<String>,
}

/// Per-pair scores plus their mean. The CIDEr-D corpus is built from all
/// references in `pairs`.
pub fn caption_scores(pairs: &[CaptionPair]) -> Result<(Vec<CaptionScores>, CaptionScores), MetricsError> {
    let toks: Vec<(Vec<String>, Vec<Vec<String>>)> = pairs
        .iter()
        .map(|p| (tokenize(&p.candidate), p.references.iter().map(|r| tokenize(r)).collect()))
        .collect();
    let corpus = CiderCorpus::new(&toks.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
    let per: Vec<CaptionScores> = toks
        .iter()
        .map(|(c, r)| CaptionScores {
            bleu4: bleu4(c, r),
            rouge_l: rouge_l(c, r),
            meteor: meteor_lite(c, r),
            cider_d: corpus.cider_d(c, r),
        })
        .collect();
    let n = per.len().max(1) as f64;
    let mean = CaptionScores {
        bleu4: per.iter().map(|s| s.bleu4).sum::<f64>() / n,
        rouge_l: per.iter().map(|s| s.rouge_l).sum::<f64>() / n,
        meteor: per.iter().map(|s| s.meteor).sum::<f64>() / n,
        cider_d: per.iter().map(|s| s.cider_d).sum::<f64>() / n,
    };
    Ok((per, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer() {
        assert_eq!(t("A man, riding; a BIKE!"), vec!["a", "man", "riding", "a", "bike"]);
        assert!(t("  ...  ").is_empty());
    }

    #[test]
    fn bleu_cases() {
        let r = t("the quick brown fox jumps over the lazy dog");
        assert!((bleu4(&r, &[r.clone()]) - 1.0).abs() < 1e-12);
        // no shared bigrams or longer: p2..p4 collapse to epsilon
        let c = t("dog lazy the over jumps fox brown quick the");
        assert!(bleu4(&c, &[r.clone()]) < 1e-2);
        // first half of an 8-token reference: all precisions 1, BP = e^(1-2)
        let r8 = t("a b c d e f g h");
        let half = t("a b c d");
        assert!((bleu4(&half, &[r8]) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(bleu4(&[], &[r]), 0.0);
    }

    #[test]
    fn rouge_cases() {
        let c = t("a b c d");
        assert!((rouge_l(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&c, &[t("x y z")]), 0.0);
        // LCS 3, P = R = 3/4 gives F = 3/4 for any beta
        assert!((rouge_l(&c, &[t("a c d e")]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn meteor_cases() {
        for m in 1..6usize {
            let s: Vec<String> = (0..m).map(|i| format!("w{i}")).collect();
            let expected = 1.0 - 0.5 * (1.0 / m as f64).powi(3);
            assert!((meteor_lite(&s, &[s.clone()]) - expected).abs() < 1e-12);
        }
        assert_eq!(meteor_lite(&t("a b"), &[t("c d")]), 0.0);
        // "running" only matches "run" through stemming
        assert_eq!(STEMMER.stem("running"), STEMMER.stem("run"));
        let s = meteor_lite(&t("running"), &[t("run")]);
        assert!((s - 0.5).abs() < 1e-12, "{s}");
    }

    #[test]
    fn cider_cases() {
        let refs = vec![vec![t("a man rides a horse")], vec![t("two cats sleep on a sofa")]];
        let corpus = CiderCorpus::new(&refs).unwrap();
        let self_score = corpus.cider_d(&refs[0][0], &refs[0]);
        assert!((self_score - 10.0).abs() < 1e-9, "{self_score}");
        assert_eq!(corpus.cider_d(&t("zebra"), &refs[0]), 0.0);
        assert!(matches!(CiderCorpus::new(&[]), Err(MetricsError::EmptyCorpus)));
    }
}
