//! Evaluation measures: classification accuracy, coarse-from-fine mapping,
//! Exact-Match, BLEU@4, ROUGE-L, a resource-free METEOR-style score, and the
//! two caption baselines.
//!
//! The METEOR variant here aligns unigrams by exact match and by a fixed
//! suffix-stripping stemmer only — no synonym or paraphrase resources — so
//! its scores are comparable within this artifact and are labeled
//! "meteor_lite" in every report.

use crate::corpus::LabelHierarchy;
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Prediction/reference token lists for one video (single reference).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionPair {
    pub prediction: Vec<String>,
    pub reference: Vec<String>,
}

impl CaptionPair {
    pub fn new(prediction: Vec<String>, reference: Vec<String>) -> Self {
        CaptionPair { prediction, reference }
    }
}

const STRIPPED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

fn strip_specials(tokens: &[String]) -> Vec<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| !STRIPPED.contains(t))
        .collect()
}

/// Top-1 accuracy over paired id lists.
pub fn classification_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "prediction/label length mismatch: {} vs {}",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metric("empty prediction list".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Sums fine-category probabilities per action group.
pub fn group_probs_from_fine(fine_probs: &[f64], hierarchy: &LabelHierarchy) -> Result<Vec<f64>> {
    if fine_probs.len() != hierarchy.category_count() {
        return Err(Error::Metric(format!(
            "probability vector has {} entries, hierarchy covers {} categories",
            fine_probs.len(),
            hierarchy.category_count()
        )));
    }
    let mut out = vec![0.0; hierarchy.group_count()];
    for (cat, &p) in fine_probs.iter().enumerate() {
        out[hierarchy.group_of(cat)?] += p;
    }
    Ok(out)
}

/// Fraction of predictions identical to their reference word by word,
/// after stripping BOS/EOS/PAD markers.
pub fn exact_match_accuracy(pairs: &[CaptionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("exact_match over an empty pair list".into()));
    }
    let hits = pairs
        .iter()
        .filter(|p| strip_specials(&p.prediction) == strip_specials(&p.reference))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut map: HashMap<Vec<&'a str>, usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    map
}

/// Corpus-level BLEU@4: clipped modified n-gram precisions pooled over the
/// corpus, uniform-weight geometric mean, brevity penalty, no smoothing.
pub fn bleu4(pairs: &[CaptionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("bleu4 over an empty pair list".into()));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut pred_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        let pred = strip_specials(&pair.prediction);
        let reference = strip_specials(&pair.reference);
        pred_len += pred.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let pc = ngram_counts(&pred, n);
            let rc = ngram_counts(&reference, n);
            for (gram, &count) in &pc {
                let cap = rc.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(cap);
            }
            total[n - 1] += pred.len().saturating_sub(n - 1);
        }
    }
    if pred_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        if total[n] == 0 || matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += 0.25 * ((matched[n] as f64 / total[n] as f64).ln());
    }
    let bp = if pred_len < ref_len {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_sum.exp())
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for ai in a {
        let mut prev = 0usize; // dp[i-1][j-1]
        for (j, bj) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if ai == bj { prev + 1 } else { dp[j + 1].max(dp[j]) };
            prev = cur;
        }
    }
    dp[b.len()]
}

/// ROUGE-L: per-pair LCS F-measure with recall weight beta = 1.2, averaged
/// over the corpus.
pub fn rouge_l(pairs: &[CaptionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("rouge_l over an empty pair list".into()));
    }
    const BETA: f64 = 1.2;
    let mut sum = 0.0;
    for pair in pairs {
        let pred = strip_specials(&pair.prediction);
        let reference = strip_specials(&pair.reference);
        if pred.is_empty() || reference.is_empty() {
            continue; // pair score 0
        }
        let l = lcs_len(&pred, &reference) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / pred.len() as f64;
        let r = l / reference.len() as f64;
        sum += (1.0 + BETA * BETA) * p * r / (r + BETA * BETA * p);
    }
    Ok(sum / pairs.len() as f64)
}

/// Fixed English suffix stripper used by the METEOR-style aligner.
pub fn stem(word: &str) -> String {
    let w = word;
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 4 && w.ends_with("sses") {
        return w[..n - 2].to_string();
    }
    if n > 5 && w.ends_with("ing") {
        return w[..n - 3].to_string();
    }
    if n > 4 && w.ends_with("ed") {
        return w[..n - 2].to_string();
    }
    if n > 4 && w.ends_with("es") {
        return w[..n - 2].to_string();
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..n - 1].to_string();
    }
    if n > 4 && w.ends_with("ly") {
        return w[..n - 2].to_string();
    }
    w.to_string()
}

/// True when two tokens align under the lite matcher.
fn tokens_align(a: &str, b: &str) -> bool {
    a == b || stem(a) == stem(b)
}

/// Match count by staged counting: exact token counts first, then stem
/// counts on the residual multiset.
fn staged_match_count(pred: &[&str], reference: &[&str]) -> usize {
    let mut pc: HashMap<&str, usize> = HashMap::new();
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for t in pred {
        *pc.entry(t).or_insert(0) += 1;
    }
    for t in reference {
        *rc.entry(t).or_insert(0) += 1;
    }
    let mut exact = 0usize;
    let mut pred_residual: HashMap<String, usize> = HashMap::new();
    let mut ref_residual: HashMap<String, usize> = HashMap::new();
    for (t, &cp) in &pc {
        let cr = rc.get(t).copied().unwrap_or(0);
        exact += cp.min(cr);
        if cp > cr {
            *pred_residual.entry(stem(t)).or_insert(0) += cp - cr;
        }
    }
    for (t, &cr) in &rc {
        let cp = pc.get(t).copied().unwrap_or(0);
        if cr > cp {
            *ref_residual.entry(stem(t)).or_insert(0) += cr - cp;
        }
    }
    let mut stemmed = 0usize;
    for (s, &cp) in &pred_residual {
        let cr = ref_residual.get(s).copied().unwrap_or(0);
        stemmed += cp.min(cr);
    }
    exact + stemmed
}

/// Minimum chunk count over all alignments of exactly `m` aligned pairs,
/// where a pair is admissible when the tokens align exactly or by stem.
/// Search is exponential in the worst case but caption-scale inputs keep it
/// tiny; memoization covers the repetitive cases.
fn min_chunks(pred: &[&str], reference: &[&str], m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    // candidate ref positions per pred position
    let cands: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| {
            reference
                .iter()
                .enumerate()
                .filter(|(_, r)| tokens_align(p, r))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        used: u64,
        prev: Option<usize>,
        remaining: usize,
        pred_len: usize,
        cands: &[Vec<usize>],
        memo: &mut HashMap<(usize, u64, usize), Option<usize>>,
    ) -> Option<usize> {
        if remaining == 0 {
            return Some(0);
        }
        if pred_len - i < remaining {
            return None;
        }
        let key = (i, used, prev.map_or(usize::MAX, |p| p));
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best: Option<usize> = None;
        // skip pred[i]
        if let Some(v) = go(i + 1, used, None, remaining, pred_len, cands, memo) {
            best = Some(best.map_or(v, |b: usize| b.min(v)));
        }
        // match pred[i] to an unused candidate
        for &j in &cands[i] {
            if used & (1 << j) != 0 {
                continue;
            }
            let contiguous = matches!(prev, Some(pj) if pj + 1 == j);
            let cost = usize::from(!contiguous);
            if let Some(v) = go(i + 1, used | (1 << j), Some(j), remaining - 1, pred_len, cands, memo) {
                let total = v + cost;
                best = Some(best.map_or(total, |b: usize| b.min(total)));
            }
        }
        memo.insert(key, best);
        best
    }

    let mut memo = HashMap::new();
    go(0, 0, None, m, pred.len(), &cands, &mut memo).unwrap_or(m)
}

/// Resource-free METEOR-style score: staged exact/stem alignment,
/// `Fmean = 10PR / (R + 9P)`, fragmentation penalty `0.5 (chunks/m)^3`.
pub fn meteor_lite(pairs: &[CaptionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("meteor_lite over an empty pair list".into()));
    }
    let mut sum = 0.0;
    for pair in pairs {
        sum += meteor_lite_pair(&pair.prediction, &pair.reference);
    }
    Ok(sum / pairs.len() as f64)
}

pub(crate) fn meteor_lite_pair(prediction: &[String], reference: &[String]) -> f64 {
    let pred = strip_specials_owned(prediction);
    let refr = strip_specials_owned(reference);
    let pred: Vec<&str> = pred.iter().map(|s| s.as_str()).collect();
    let refr: Vec<&str> = refr.iter().map(|s| s.as_str()).collect();
    if pred.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let m = staged_match_count(&pred, &refr);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / pred.len() as f64;
    let r = m as f64 / refr.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = min_chunks(&pred, &refr, m) as f64;
    let penalty = 0.5 * (chunks / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

fn strip_specials_owned(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !STRIPPED.contains(&t.as_str()))
        .cloned()
        .collect()
}

/// Most frequent fine category within each predicted group, from training
/// counts. Ties break to the lowest id.
pub fn baseline_frequent_fine(
    coarse_predictions: &[usize],
    train_counts: &[usize],
    hierarchy: &LabelHierarchy,
) -> Result<Vec<usize>> {
    if train_counts.len() != hierarchy.category_count() {
        return Err(Error::Metric(format!(
            "counts cover {} categories, hierarchy has {}",
            train_counts.len(),
            hierarchy.category_count()
        )));
    }
    let mut modal = vec![None::<usize>; hierarchy.group_count()];
    for g in 0..hierarchy.group_count() {
        let cats = hierarchy.categories_in(g);
        modal[g] = cats
            .iter()
            .copied()
            .max_by(|&a, &b| train_counts[a].cmp(&train_counts[b]).then(b.cmp(&a)))
    }
    coarse_predictions
        .iter()
        .map(|&g| {
            modal
                .get(g)
                .and_then(|m| *m)
                .ok_or_else(|| Error::Metric(format!("group id {g} has no categories")))
        })
        .collect()
}

/// Fills every slot of a template with the modal object string (ties break
/// lexicographically); no observed objects falls back to the literal slot.
pub fn baseline_template_fill(template: &str, object_counts: &HashMap<String, usize>) -> String {
    let modal = object_counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(s, _)| s.clone())
        .unwrap_or_else(|| crate::corpus::SOMETHING_TEXT.to_string());
    let slots = template.to_lowercase().matches(crate::corpus::SOMETHING_TEXT).count();
    crate::corpus::expand_template(template, &vec![modal; slots]).expect("slot count computed from template")
}

/// The 20-pair fixture used to pin the metric kernels against brute-force
/// oracles; also hashed into metric reports for provenance.
pub fn fixture_pairs() -> Vec<CaptionPair> {
    let mk = |p: &str, r: &str| CaptionPair {
        prediction: p.split_whitespace().map(str::to_string).collect(),
        reference: r.split_whitespace().map(str::to_string).collect(),
    };
    vec![
        mk("moving square from left to right", "moving square from left to right"),
        mk("a b c d e", "a b c d f"),
        mk("lifting circle up then down", "lifting circle up then letting it drop"),
        mk("pushing box", "pulling box"),
        mk("stacking coins", "stacked coins"),
        mk("holding cap in front of shirt", "holding cap in front of shirt"),
        mk("pretending to move triangle", "pretending to move a triangle"),
        mk("x y z", "p q r"),
        mk("moving cup closer to camera", "moving mug closer to camera"),
        mk("a a b b", "b b a a"),
        mk("putting pen on table", "putting pen on the table"),
        mk("one", "one"),
        mk("tearing paper into two pieces", "tearing napkin into two pieces"),
        mk("rolls rolling rolled", "roll roll roll"),
        mk("showing circle behind square", "showing circle behind square"),
        mk("red square moves", "red squares move"),
        mk("lifting box up completely", "lifting box up completely then dropping it"),
        mk("spinning diamond", "spinning diamond slowly"),
        mk("a b a b a", "b a b a b"),
        mk("pouring water into glass until it overflows", "pouring water into glass"),
    ]
}

/// SHA-256 over the canonical rendering of the fixture, recorded in metric
/// reports.
pub fn fixture_hash() -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for pair in fixture_pairs() {
        h.update(pair.prediction.join(" ").as_bytes());
        h.update([0u8]);
        h.update(pair.reference.join(" ").as_bytes());
        h.update([1u8]);
    }
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p: &str, r: &str) -> CaptionPair {
        CaptionPair {
            prediction: p.split_whitespace().map(str::to_string).collect(),
            reference: r.split_whitespace().map(str::to_string).collect(),
        }
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(classification_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(classification_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(classification_accuracy(&[1], &[1, 2]).is_err());
        assert!(classification_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn group_probs_identity_and_sums() {
        let ident = LabelHierarchy::identity(4);
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(group_probs_from_fine(&p, &ident).unwrap(), p.to_vec());

        let h = LabelHierarchy::new(vec![0, 0, 1, 1], 2).unwrap();
        let uniform = [0.25; 4];
        let g = group_probs_from_fine(&uniform, &h).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.5).abs() < 1e-12);

        let onehot = [0.0, 0.0, 1.0, 0.0];
        let g = group_probs_from_fine(&onehot, &h).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn exact_match_strips_specials() {
        let mut p1 = pair("moving square", "moving square");
        p1.prediction.push("<pad>".into());
        let p2 = pair("moving circle", "moving square");
        assert_eq!(exact_match_accuracy(&[p1.clone()]).unwrap(), 1.0);
        assert_eq!(exact_match_accuracy(&[p1, p2]).unwrap(), 0.5);
        assert!(exact_match_accuracy(&[]).is_err());
    }

    #[test]
    fn bleu_identical_is_one_and_no_overlap_zero() {
        let pairs = vec![pair("a b c d e", "a b c d e")];
        assert!((bleu4(&pairs).unwrap() - 1.0).abs() < 1e-12);
        let pairs = vec![pair("a b c d e", "f g h i j")];
        assert_eq!(bleu4(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn bleu_single_pair_hand_value() {
        // p1=4/5, p2=3/4, p3=2/3, p4=1/2, BP=1 => (0.2)^(1/4)
        let pairs = vec![pair("a b c d e", "a b c d f")];
        let expect = (4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0f64).powf(0.25);
        assert!((bleu4(&pairs).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rouge_hand_values() {
        assert!((rouge_l(&[pair("a b c", "a b c")]).unwrap() - 1.0).abs() < 1e-12);
        // LCS(a b c d / a c b d) = 3, P=R=0.75 -> F=0.75
        assert!((rouge_l(&[pair("a b c d", "a c b d")]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&[pair("a b", "c d")]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_identical_four_tokens() {
        let score = meteor_lite(&[pair("a b c d", "a b c d")]).unwrap();
        assert!((score - 0.9921875).abs() < 1e-12);
        assert_eq!(meteor_lite(&[pair("a b", "c d")]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_stems_align() {
        assert_eq!(stem("stacking"), "stack");
        assert_eq!(stem("stacked"), "stack");
        let score = meteor_lite(&[pair("stacking coins", "stacked coins")]).unwrap();
        assert!(score > 0.9, "stem alignment should give full match count, got {score}");
    }

    #[test]
    fn frequent_fine_baseline() {
        let h = LabelHierarchy::new(vec![0, 0, 1], 2).unwrap();
        let counts = vec![5, 10, 2];
        assert_eq!(baseline_frequent_fine(&[0, 1, 0], &counts, &h).unwrap(), vec![1, 2, 1]);
        // uniform counts -> lowest id
        let counts = vec![3, 3, 3];
        assert_eq!(baseline_frequent_fine(&[0], &counts, &h).unwrap(), vec![0]);
        assert!(baseline_frequent_fine(&[5], &counts, &h).is_err());
    }

    #[test]
    fn template_fill_baseline() {
        let mut counts = HashMap::new();
        counts.insert("cup".to_string(), 7usize);
        counts.insert("box".to_string(), 3usize);
        assert_eq!(
            baseline_template_fill("Putting [something] on [something]", &counts),
            "Putting cup on cup"
        );
        assert_eq!(baseline_template_fill("Doing nothing", &counts), "Doing nothing");
        let empty = HashMap::new();
        assert_eq!(
            baseline_template_fill("Holding [something]", &empty),
            "Holding [something]"
        );
        // tie -> lexicographic
        let mut tie = HashMap::new();
        tie.insert("zebra".to_string(), 4usize);
        tie.insert("apple".to_string(), 4usize);
        assert_eq!(baseline_template_fill("Holding [something]", &tie), "Holding apple");
    }

    #[test]
    fn fixture_has_twenty_pairs_and_stable_hash() {
        assert_eq!(fixture_pairs().len(), 20);
        assert_eq!(fixture_hash(), fixture_hash());
    }

    #[test]
    fn metrics_bounded_and_permutation_invariant() {
        let pairs = fixture_pairs();
        let mut rev = pairs.clone();
        rev.reverse();
        for f in [bleu4, rouge_l, meteor_lite, exact_match_accuracy] {
            let a = f(&pairs).unwrap();
            let b = f(&rev).unwrap();
            assert!((a - b).abs() < 1e-12, "permutation changed a corpus metric");
            assert!((0.0..=1.0).contains(&a));
        }
    }
}
