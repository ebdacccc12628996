//! Retrieval metrics (CMC, mAP) under cross-camera exclusion, and
//! attribute recognition accuracy.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attkg::AttributeSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Cosine,
    Euclidean,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Cosine => {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Distance::Cosine),
            "euclidean" => Ok(Distance::Euclidean),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

/// A query or gallery image with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub image_id: u32,
    pub identity: u32,
    pub camera: u32,
    pub distractor: bool,
    pub descriptor: Vec<f64>,
}

impl Entry {
    fn is_match(&self, query: &Entry) -> bool {
        !self.distractor && self.identity == query.identity
    }

    /// Same identity seen by the same camera as the query.
    fn is_excluded_for(&self, query: &Entry) -> bool {
        !self.distractor && self.identity == query.identity && self.camera == query.camera
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query_id: u32,
    /// Gallery image ids by ascending distance, ties by ascending id.
    pub ranked: Vec<u32>,
    pub matches: Vec<bool>,
}

impl RankingResult {
    pub fn first_match(&self) -> Option<usize> {
        self.matches.iter().position(|&m| m)
    }

    pub fn num_matches(&self) -> usize {
        self.matches.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    /// Nothing remains after exclusion.
    EmptyGallery,
    /// No cross-camera image of the query identity.
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedQuery {
    pub query_id: u32,
    pub reason: SkipReason,
}

/// Ranks the valid gallery for one query.
pub fn rank(query: &Entry, gallery: &[Entry], distance: Distance) -> Result<RankingResult> {
    let mut scored: Vec<(f64, u32, bool)> = Vec::with_capacity(gallery.len());
    for g in gallery {
        if g.descriptor.len() != query.descriptor.len() {
            return Err(Error::shape(
                "rank descriptors",
                (query.descriptor.len(), 1),
                (g.descriptor.len(), 1),
            ));
        }
        if g.is_excluded_for(query) {
            continue;
        }
        scored.push((distance.between(&query.descriptor, &g.descriptor), g.image_id, g.is_match(query)));
    }
    if scored.is_empty() {
        return Err(Error::Protocol(format!(
            "query {} has an empty gallery after same-camera exclusion",
            query.image_id
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(RankingResult {
        query_id: query.image_id,
        ranked: scored.iter().map(|s| s.1).collect(),
        matches: scored.iter().map(|s| s.2).collect(),
    })
}

/// Rank-k accuracy for each `k`. Queries without any match count as misses.
pub fn cmc(results: &[RankingResult], ks: &[usize]) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::Contract("cmc over zero queries".into()));
    }
    let firsts: Vec<Option<usize>> = results.iter().map(RankingResult::first_match).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = firsts.iter().filter(|f| matches!(f, Some(p) if *p < k)).count();
            hits as f64 / results.len() as f64
        })
        .collect())
}

pub fn average_precision(result: &RankingResult) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, &m) in result.matches.iter().enumerate() {
        if m {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Contract(format!(
            "query {} has no valid match",
            result.query_id
        )));
    }
    Ok(total / hits as f64)
}

pub fn mean_ap(results: &[RankingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Contract("mAP over zero queries".into()));
    }
    let mut sum = 0.0;
    for r in results {
        sum += average_precision(r)?;
    }
    Ok(sum / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub queries_evaluated: usize,
    pub skipped: Vec<SkippedQuery>,
}

/// Ranks every query and reports CMC and mAP over queries that have at least
/// one valid match. `threads = 0` uses the global pool.
pub fn evaluate_retrieval(
    queries: &[Entry],
    gallery: &[Entry],
    distance: Distance,
    threads: usize,
) -> Result<(RetrievalMetrics, Vec<RankingResult>)> {
    let run = || -> Vec<Result<RankingResult>> {
        queries.par_iter().map(|q| rank(q, gallery, distance)).collect()
    };
    let ranked = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (q, r) in queries.iter().zip(ranked) {
        match r {
            Ok(r) if r.num_matches() > 0 => results.push(r),
            Ok(_) => skipped.push(SkippedQuery {
                query_id: q.image_id,
                reason: SkipReason::NoMatch,
            }),
            Err(Error::Protocol(_)) => skipped.push(SkippedQuery {
                query_id: q.image_id,
                reason: SkipReason::EmptyGallery,
            }),
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        return Err(Error::Protocol("no query has a valid cross-camera match".into()));
    }
    let c = cmc(&results, &[1, 5, 10])?;
    let metrics = RetrievalMetrics {
        rank1: c[0],
        rank5: c[1],
        rank10: c[2],
        map: mean_ap(&results)?,
        queries_evaluated: results.len(),
        skipped,
    };
    Ok((metrics, results))
}

/// Binarization of attribute scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRule {
    /// Threshold for attributes outside any exclusive group.
    pub threshold: f64,
}

impl DecisionRule {
    /// 0.5 for sigmoid scores, `1/c` for softmax scores.
    pub fn for_head(head: crate::gcn::AttributeHead, c: usize) -> Self {
        match head {
            crate::gcn::AttributeHead::Sigmoid => Self { threshold: 0.5 },
            crate::gcn::AttributeHead::Softmax => Self {
                threshold: 1.0 / c as f64,
            },
        }
    }
}

/// Argmax within each exclusive group, threshold elsewhere. Ties inside a
/// group go to the lowest index.
pub fn decide(scores: &[f64], schema: &AttributeSchema, rule: DecisionRule) -> Vec<u8> {
    let mut out: Vec<u8> = scores.iter().map(|&s| u8::from(s >= rule.threshold)).collect();
    for g in schema.groups() {
        let mut best: Option<usize> = None;
        for &i in &g.members {
            if best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        for &i in &g.members {
            out[i] = u8::from(Some(i) == best);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeAccuracy {
    pub per_attribute: Vec<f64>,
    pub mean: f64,
}

pub fn attribute_accuracy(
    predictions: &[Vec<f64>],
    targets: &[Vec<u8>],
    schema: &AttributeSchema,
    rule: DecisionRule,
) -> Result<AttributeAccuracy> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "attribute_accuracy",
            (predictions.len(), 1),
            (targets.len(), 1),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("attribute accuracy over zero images".into()));
    }
    let c = schema.len();
    let mut correct = vec![0usize; c];
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != c || t.len() != c {
            return Err(Error::shape("attribute_accuracy row", (c, 1), (p.len(), t.len())));
        }
        for (i, (a, b)) in decide(p, schema, rule).iter().zip(t).enumerate() {
            if a == b {
                correct[i] += 1;
            }
        }
    }
    let n = predictions.len() as f64;
    let per_attribute: Vec<f64> = correct.iter().map(|&k| k as f64 / n).collect();
    let mean = per_attribute.iter().sum::<f64>() / c as f64;
    Ok(AttributeAccuracy {
        per_attribute,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub variant: String,
    pub descriptor: String,
    pub distance: Distance,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
    pub attribute_names: Vec<String>,
    pub attribute_accuracy: Vec<f64>,
    #[serde(rename = "attribute_avg")]
    pub attribute_mean: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "variant: {}  descriptor: {}  distance: {:?}",
            self.variant, self.descriptor, self.distance
        );
        let _ = writeln!(out, "{:<10} {:>8}", "metric", "value");
        for (k, v) in [
            ("rank-1", self.rank1),
            ("rank-5", self.rank5),
            ("rank-10", self.rank10),
            ("mAP", self.map),
        ] {
            let _ = writeln!(out, "{k:<10} {:>8.2}", v * 100.0);
        }
        let _ = writeln!(
            out,
            "queries: {} evaluated, {} skipped",
            self.queries_evaluated, self.queries_skipped
        );
        if let Some(mean) = self.attribute_mean {
            let width = self.attribute_names.iter().map(String::len).max().unwrap_or(4).max(4);
            let _ = writeln!(out, "{:<width$} {:>8}", "attribute", "acc");
            for (n, a) in self.attribute_names.iter().zip(&self.attribute_accuracy) {
                let _ = writeln!(out, "{n:<width$} {:>8.2}", a * 100.0);
            }
            let _ = writeln!(out, "{:<width$} {:>8.2}", "Avg", mean * 100.0);
        }
        out
    }
}

/// From-definition reference implementations, kept separate from the
/// sort-based path above.
pub mod oracle {
    use super::{Distance, Entry};

    /// Position of each valid gallery item: the number of valid items that
    /// precede it (strictly closer, or equally close with a smaller id).
    pub fn positions(query: &Entry, gallery: &[Entry], distance: Distance) -> Vec<(u32, usize, bool)> {
        let valid: Vec<&Entry> = gallery
            .iter()
            .filter(|g| {
                g.distractor || !(g.identity == query.identity && g.camera == query.camera)
            })
            .collect();
        let dist: Vec<f64> = valid
            .iter()
            .map(|g| distance.between(&query.descriptor, &g.descriptor))
            .collect();
        (0..valid.len())
            .map(|i| {
                let before = (0..valid.len())
                    .filter(|&j| {
                        dist[j] < dist[i] || (dist[j] == dist[i] && valid[j].image_id < valid[i].image_id)
                    })
                    .count();
                let is_match = !valid[i].distractor && valid[i].identity == query.identity;
                (valid[i].image_id, before, is_match)
            })
            .collect()
    }

    /// Ranked gallery ids derived from [`positions`].
    pub fn ranking(query: &Entry, gallery: &[Entry], distance: Distance) -> Vec<u32> {
        let pos = positions(query, gallery, distance);
        let mut out = vec![0u32; pos.len()];
        for (id, p, _) in pos {
            out[p] = id;
        }
        out
    }

    /// Rank-k hit for one query.
    pub fn hit_at(query: &Entry, gallery: &[Entry], distance: Distance, k: usize) -> bool {
        positions(query, gallery, distance)
            .iter()
            .any(|&(_, p, m)| m && p < k)
    }

    /// AP as the mean, over each correct item, of precision at its position.
    pub fn average_precision(query: &Entry, gallery: &[Entry], distance: Distance) -> Option<f64> {
        let pos = positions(query, gallery, distance);
        let matches: Vec<usize> = pos.iter().filter(|x| x.2).map(|x| x.1).collect();
        if matches.is_empty() {
            return None;
        }
        let sum: f64 = matches
            .iter()
            .map(|&p| {
                let correct_within = matches.iter().filter(|&&q| q <= p).count();
                correct_within as f64 / (p + 1) as f64
            })
            .sum();
        Some(sum / matches.len() as f64)
    }

    /// `(rank1, rank5, rank10, mAP, evaluated)` over queries with a match.
    pub fn evaluate(queries: &[Entry], gallery: &[Entry], distance: Distance) -> (f64, f64, f64, f64, usize) {
        let mut n = 0usize;
        let mut hits = [0usize; 3];
        let mut ap = 0.0;
        for q in queries {
            let Some(a) = average_precision(q, gallery, distance) else {
                continue;
            };
            n += 1;
            ap += a;
            for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
                if hit_at(q, gallery, distance, k) {
                    *h += 1;
                }
            }
        }
        let f = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
        (f(hits[0]), f(hits[1]), f(hits[2]), if n == 0 { 0.0 } else { ap / n as f64 }, n)
    }
}
