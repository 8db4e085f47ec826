//! Narration metrics and the intra- versus inter-category score ablation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::verifier::{parse, BehaviorFeatures, Narration};
use crate::{math, Error, Result};

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over lowercased whitespace tokens. Empty inputs score 0.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c = tokens(candidate);
    let r = tokens(reference);
    if c.is_empty() || r.is_empty() {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let l = lcs_len(&c, &r) as f64;
    let precision = l / c.len() as f64;
    let recall = l / r.len() as f64;
    let f1 = if l == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// Inverse document frequencies over a corpus: `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    idf: BTreeMap<String, f64>,
    default_idf: f64,
}

impl TfIdf {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in corpus {
            n += 1;
            let mut seen = tokens(doc);
            seen.sort();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, math::ln((1.0 + n as f64) / (1.0 + d as f64)) + 1.0))
            .collect();
        TfIdf {
            idf,
            default_idf: math::ln(1.0 + n as f64) + 1.0,
        }
    }

    fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut v: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens(text) {
            *v.entry(t).or_insert(0.0) += 1.0;
        }
        for (t, x) in v.iter_mut() {
            *x *= self.idf.get(t).copied().unwrap_or(self.default_idf);
        }
        v
    }

    /// Cosine of the TF-IDF vectors; 0 when either vector is zero.
    pub fn cosine(&self, candidate: &str, reference: &str) -> f64 {
        let a = self.vector(candidate);
        let b = self.vector(reference);
        let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
        let na = math::sqrt(a.values().map(|x| x * x).sum());
        let nb = math::sqrt(b.values().map(|x| x * x).sum());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        math::clamp(dot / (na * nb), 0.0, 1.0)
    }
}

/// TF-IDF cosine with the two texts as the corpus.
pub fn cosine_similarity(candidate: &str, reference: &str) -> f64 {
    TfIdf::fit([candidate, reference]).cosine(candidate, reference)
}

/// 1 when the narration text parses to exactly `reference`.
pub fn gt_accuracy(predicted: &Narration, reference: &BehaviorFeatures) -> core::result::Result<u8, String> {
    match parse(&predicted.text) {
        Ok(f) => Ok(u8::from(f == *reference)),
        Err(e) => Err(format!("unparseable narration {:?}: {e}", predicted.text)),
    }
}

/// Mean of `gt_accuracy`, counting unparseable narrations as 0.
pub fn mean_gt_accuracy(predicted: &[Narration], reference: &[BehaviorFeatures]) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::shape("gt accuracy needs equal, nonempty lists"));
    }
    let hits: usize = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| gt_accuracy(p, r).unwrap_or(0) as usize)
        .sum();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMetric {
    RougeL,
    Cosine,
    /// 1 when both texts parse to the same category, else 0.
    CategoryMatch,
}

impl TextMetric {
    pub const ALL: [TextMetric; 3] = [TextMetric::RougeL, TextMetric::Cosine, TextMetric::CategoryMatch];

    pub fn name(self) -> &'static str {
        match self {
            TextMetric::RougeL => "rouge_l",
            TextMetric::Cosine => "tfidf_cosine",
            TextMetric::CategoryMatch => "category_match",
        }
    }
}

/// A narration with the behavior category it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledNarration {
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistributionReport {
    pub metric: String,
    pub intra_scores: Vec<f64>,
    pub inter_scores: Vec<f64>,
    /// Probability that a random intra pair outscores a random inter pair,
    /// ties counting half.
    pub separation_auc: f64,
}

/// Rank-statistic AUC of `pos` over `neg`.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Category of a template narration: its contact region and grasp outcome.
pub fn category_of(text: &str) -> Option<String> {
    parse(text).ok().map(|f| {
        if f.grasp_succeeded {
            f.first_contact_region.to_string()
        } else {
            String::from("failure")
        }
    })
}

/// All pairwise scores within and across categories.
pub fn ablation_report(corpus: &[LabeledNarration], metric: TextMetric) -> Result<ScoreDistributionReport> {
    let mut cats: Vec<&str> = corpus.iter().map(|c| c.category.as_str()).collect();
    cats.sort();
    cats.dedup();
    if cats.len() < 2 {
        return Err(Error::config("ablation needs at least two categories"));
    }
    for c in &cats {
        if corpus.iter().filter(|x| x.category == *c).count() < 2 {
            return Err(Error::config(format!("category {c:?} needs at least two narrations")));
        }
    }
    let tfidf = TfIdf::fit(corpus.iter().map(|c| c.text.as_str()));
    let score = |a: &str, b: &str| match metric {
        TextMetric::RougeL => rouge_l(a, b).f1,
        TextMetric::Cosine => tfidf.cosine(a, b),
        TextMetric::CategoryMatch => match (category_of(a), category_of(b)) {
            (Some(x), Some(y)) if x == y => 1.0,
            _ => 0.0,
        },
    };
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            let s = score(&corpus[i].text, &corpus[j].text);
            if corpus[i].category == corpus[j].category {
                intra.push(s);
            } else {
                inter.push(s);
            }
        }
    }
    Ok(ScoreDistributionReport {
        metric: metric.name().to_string(),
        separation_auc: auc(&intra, &inter),
        intra_scores: intra,
        inter_scores: inter,
    })
}

/// Template-grammar corpus of three behaviors (handle grasp, rim grasp,
/// grasp failure), `per_category` narrations each, varied in the secondary
/// slots.
pub fn default_ablation_corpus(per_category: usize) -> Vec<LabeledNarration> {
    use crate::env::Region;
    use crate::verifier::render;
    let mut out = Vec::new();
    let grasps: Vec<BehaviorFeatures> = BehaviorFeatures::enumerate_all()
        .filter(|f| f.grasp_succeeded)
        .collect();
    for region in [Region::Handle, Region::Rim] {
        let variants: Vec<&BehaviorFeatures> = grasps.iter().filter(|f| f.first_contact_region == region).collect();
        for i in 0..per_category {
            let f = variants[i % variants.len()];
            out.push(LabeledNarration {
                category: region.to_string(),
                text: render(f),
            });
        }
    }
    let failures: Vec<BehaviorFeatures> = BehaviorFeatures::enumerate_all()
        .filter(|f| !f.grasp_succeeded && f.first_contact_region.family() != Some(crate::env::TaskId::Bag))
        .collect();
    for i in 0..per_category {
        let f = &failures[i % failures.len()];
        out.push(LabeledNarration {
            category: String::from("failure"),
            text: render(f),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// LCS by checking every subsequence of the shorter sequence.
    fn brute_lcs(a: &[&str], b: &[&str]) -> usize {
        let (s, l) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for mask in 0u32..(1 << s.len()) {
            let sub: Vec<&str> = (0..s.len()).filter(|i| mask & (1 << i) != 0).map(|i| s[i]).collect();
            let mut it = l.iter();
            if sub.iter().all(|w| it.any(|x| x == w)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c", "a b c").f1, 1.0);
        assert_eq!(brute_lcs(&["the", "cat", "sat"], &["the", "cat"]), 2);
        let r = rouge_l("the cat sat", "the cat");
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert_eq!(rouge_l("x y", "p q").f1, 0.0);
        assert_eq!(rouge_l("", "").f1, 0.0);
        assert_eq!(rouge_l("The Cat", "the cat").f1, 1.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity("a b c", "a b c") - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity("a b", "c d"), 0.0);
        assert!((cosine_similarity("a b c", "c a b") - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity("", "a"), 0.0);
    }

    #[test]
    fn gt_accuracy_exact_match() {
        use crate::env::Region;
        use crate::verifier::LiftHeight;
        let f = BehaviorFeatures::clean_grasp(Region::Handle);
        let n = Narration::from_features(f);
        assert_eq!(gt_accuracy(&n, &f), Ok(1));
        let mut g = f;
        g.lift_height = LiftHeight::Low;
        assert_eq!(gt_accuracy(&n, &g), Ok(0));
        let junk = Narration {
            features: f,
            text: String::from("it went fine"),
        };
        assert!(gt_accuracy(&junk, &f).is_err());
        assert_eq!(mean_gt_accuracy(&[junk, n], &[f, f]).unwrap(), 0.5);
    }

    #[test]
    fn ablation_pair_counts_and_auc() {
        let corpus = default_ablation_corpus(16);
        assert_eq!(corpus.len(), 48);
        let cat = ablation_report(&corpus, TextMetric::CategoryMatch).unwrap();
        assert_eq!(cat.intra_scores.len(), 360);
        assert_eq!(cat.inter_scores.len(), 768);
        assert_eq!(cat.separation_auc, 1.0);
        let rouge = ablation_report(&corpus, TextMetric::RougeL).unwrap();
        assert!(rouge.separation_auc < cat.separation_auc);
    }

    #[test]
    fn ablation_rejects_single_category() {
        let corpus: Vec<LabeledNarration> = default_ablation_corpus(4).into_iter().take(4).collect();
        assert!(ablation_report(&corpus, TextMetric::RougeL).is_err());
    }

    #[test]
    fn auc_ties_count_half() {
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        assert_eq!(auc(&[2.0, 3.0], &[1.0]), 1.0);
    }

    fn words() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..8)
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force_and_is_symmetric(a in words(), b in words()) {
            let l = lcs_len(&a, &b);
            prop_assert_eq!(l, lcs_len(&b, &a));
            prop_assert_eq!(l, brute_lcs(&a, &b));
        }

        #[test]
        fn rouge_self_is_one(a in words()) {
            prop_assume!(!a.is_empty());
            let s = a.join(" ");
            prop_assert_eq!(rouge_l(&s, &s).f1, 1.0);
        }

        #[test]
        fn cosine_bounded_and_order_invariant(a in words(), b in words()) {
            let (sa, sb) = (a.join(" "), b.join(" "));
            let tf = TfIdf::fit([sa.as_str(), sb.as_str()]);
            let c = tf.cosine(&sa, &sb);
            prop_assert!((0.0..=1.0).contains(&c));
            let mut rev = a.clone();
            rev.reverse();
            prop_assert!((tf.cosine(&rev.join(" "), &sb) - c).abs() < 1e-12);
        }

        #[test]
        fn pair_counts_cover_all_pairs(sizes in prop::collection::vec(2usize..6, 2..4)) {
            let corpus: Vec<LabeledNarration> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| (0..n).map(move |i| LabeledNarration {
                    category: format!("c{c}"),
                    text: format!("w{c} x{i}"),
                }))
                .collect();
            let r = ablation_report(&corpus, TextMetric::RougeL).unwrap();
            let total: usize = sizes.iter().sum();
            prop_assert_eq!(r.intra_scores.len() + r.inter_scores.len(), total * (total - 1) / 2);
        }
    }
}
