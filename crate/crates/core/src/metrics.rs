//! Retrieval evaluation: mAP, mINP and CMC over per-query rankings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CharacterId, Dataset};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry<T: Real = f64> {
    pub scene_id: u64,
    pub detection_id: u64,
    pub score: T,
}

/// Ranked gallery list for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking<T: Real = f64> {
    pub query: CharacterId,
    pub entries: Vec<RankedEntry<T>>,
}

/// Descending score, then ascending `(scene_id, detection_id)`.
pub fn ranking_order<T: Real>(a: &RankedEntry<T>, b: &RankedEntry<T>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.scene_id.cmp(&b.scene_id))
        .then(a.detection_id.cmp(&b.detection_id))
}

impl<T: Real> QueryRanking<T> {
    /// Sorts entries into the canonical deterministic order.
    pub fn sorted(query: CharacterId, mut entries: Vec<RankedEntry<T>>) -> Self {
        entries.sort_by(ranking_order);
        Self { query, entries }
    }
}

/// Mean over relevant items of precision at their rank; `None` without relevant items.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

/// Relevant count divided by the 1-based rank of the last relevant item.
pub fn inverse_negative_penalty(relevance: &[bool]) -> Option<f64> {
    let hard = relevance.iter().rposition(|&r| r)?;
    let count = relevance.iter().filter(|&&r| r).count();
    Some(count as f64 / (hard + 1) as f64)
}

/// 1-based rank of the first relevant item.
pub fn first_hit_rank(relevance: &[bool]) -> Option<usize> {
    relevance.iter().position(|&r| r).map(|i| i + 1)
}

/// `cmc[k-1]` is the fraction of queries whose first hit is at rank `<= k`.
/// Queries without a relevant item count as misses.
pub fn cmc_at_k(relevances: &[Vec<bool>], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("CMC needs K >= 1".into()));
    }
    if relevances.is_empty() {
        return Err(Error::InvalidInput("CMC needs at least one query".into()));
    }
    let mut counts = vec![0usize; k];
    for rel in relevances {
        if let Some(r) = first_hit_rank(rel) {
            if r <= k {
                counts[r - 1] += 1;
            }
        }
    }
    let n = relevances.len() as f64;
    let mut acc = 0usize;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: CharacterId,
    pub num_relevant: usize,
    pub ap: f64,
    pub inp: f64,
    pub first_hit_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub minp: f64,
    /// Rank@1 ..= Rank@K.
    pub cmc: Vec<f64>,
    pub num_evaluated: usize,
    /// Queries without any relevant gallery; left out of every mean.
    pub excluded_queries: Vec<CharacterId>,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricsReport {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

/// Scores `rankings` against ground-truth ids in `dataset`.
pub fn evaluate<T: Real, S: Real>(
    rankings: &[QueryRanking<S>],
    dataset: &Dataset<T>,
    k: usize,
) -> Result<MetricsReport> {
    if k == 0 {
        return Err(Error::InvalidInput("CMC needs K >= 1".into()));
    }
    let mut truth = BTreeMap::new();
    for scene in &dataset.scenes {
        for det in &scene.detections {
            truth.insert((scene.scene_id, det.detection_id), det.true_id);
        }
    }

    let mut covered = BTreeSet::new();
    for r in rankings {
        if !covered.insert(r.query) {
            return Err(Error::InvalidInput(format!("query {} ranked twice", r.query)));
        }
    }
    for q in &dataset.queries {
        if !covered.contains(&q.id) {
            return Err(Error::InvalidInput(format!("rankings miss query {}", q.id)));
        }
    }
    if covered.len() != dataset.queries.len() {
        return Err(Error::InvalidInput("rankings contain unknown queries".into()));
    }

    let mut per_query = Vec::new();
    let mut relevances = Vec::new();
    let mut excluded = Vec::new();
    for r in rankings {
        if r.entries.len() != truth.len() {
            return Err(Error::InvalidInput(format!(
                "ranking for {} has {} entries, dataset has {} detections",
                r.query,
                r.entries.len(),
                truth.len()
            )));
        }
        let mut seen = BTreeSet::new();
        let mut rel = Vec::with_capacity(r.entries.len());
        for e in &r.entries {
            let key = (e.scene_id, e.detection_id);
            let Some(&id) = truth.get(&key) else {
                return Err(Error::InvalidInput(format!(
                    "ranking references unknown detection {key:?}"
                )));
            };
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!("detection {key:?} ranked twice")));
            }
            rel.push(id == r.query);
        }
        match (
            average_precision(&rel),
            inverse_negative_penalty(&rel),
            first_hit_rank(&rel),
        ) {
            (Some(ap), Some(inp), Some(first)) => {
                per_query.push(QueryMetrics {
                    query: r.query,
                    num_relevant: rel.iter().filter(|&&x| x).count(),
                    ap,
                    inp,
                    first_hit_rank: first,
                });
                relevances.push(rel);
            }
            _ => excluded.push(r.query),
        }
    }
    if per_query.is_empty() {
        return Err(Error::InvalidInput("no query has a relevant gallery".into()));
    }
    let n = per_query.len() as f64;
    Ok(MetricsReport {
        map: per_query.iter().map(|m| m.ap).sum::<f64>() / n,
        minp: per_query.iter().map(|m| m.inp).sum::<f64>() / n,
        cmc: cmc_at_k(&relevances, k)?,
        num_evaluated: per_query.len(),
        excluded_queries: excluded,
        per_query,
    })
}

/// Area under the ROC curve (Mann-Whitney, ties count one half).
/// `None` when either class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContextFeatures, Dims, Embedding, GalleryDetection, Query, Scene, SocialGraph};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranks_to_rel(ranks: &[usize], n: usize) -> Vec<bool> {
        (1..=n).map(|r| ranks.contains(&r)).collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, false, false]), Some(1.0));
        let ap = average_precision(&ranks_to_rel(&[1, 3], 5)).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true; 4]), Some(1.0));
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn inp_examples() {
        let inp = inverse_negative_penalty(&ranks_to_rel(&[1, 3], 5)).unwrap();
        assert!((inp - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(inverse_negative_penalty(&[true, true, false, false]), Some(1.0));
        assert_eq!(inverse_negative_penalty(&ranks_to_rel(&[7], 7)), Some(1.0 / 7.0));
        assert_eq!(inverse_negative_penalty(&[false]), None);
    }

    #[test]
    fn cmc_examples() {
        let all_first = vec![vec![true, false], vec![true, true]];
        assert_eq!(cmc_at_k(&all_first, 3).unwrap(), vec![1.0, 1.0, 1.0]);
        let mixed = vec![ranks_to_rel(&[1], 4), ranks_to_rel(&[3, 4], 4)];
        assert_eq!(cmc_at_k(&mixed, 3).unwrap(), vec![0.5, 0.5, 1.0]);
        assert!(cmc_at_k(&mixed, 0).is_err());
    }

    #[test]
    fn inp_can_exceed_ap() {
        // a late first hit hurts AP more than INP
        let rel = [false, true, true];
        assert!((average_precision(&rel).unwrap() - 7.0 / 12.0).abs() < 1e-15);
        assert!((inverse_negative_penalty(&rel).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_rankings_stay_in_unit_interval_and_cmc_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rels = Vec::new();
        for _ in 0..300 {
            let n = rng.random_range(1..30);
            let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let at = rng.random_range(0..n);
            rel[at] = true;
            let ap = average_precision(&rel).unwrap();
            let inp = inverse_negative_penalty(&rel).unwrap();
            assert!(inp <= 1.0 && ap <= 1.0 && inp > 0.0 && ap > 0.0);
            rels.push(rel);
        }
        let cmc = cmc_at_k(&rels, 30).unwrap();
        assert!(cmc.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*cmc.last().unwrap(), 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, true]), None);
    }

    /// Three queries, six detections over two scenes; query 2 never appears.
    fn fixture() -> Dataset {
        let det = |id: u64, who: usize| GalleryDetection {
            detection_id: id,
            embedding: Embedding(vec![0.0]),
            true_id: CharacterId(who),
        };
        let scene = |sid: u64, dets| Scene {
            scene_id: sid,
            detections: dets,
            context: ContextFeatures::absent(0, 0),
            relation_labels: None,
            relation_prior: None,
        };
        Dataset {
            social_graph: SocialGraph::new(3),
            queries: (0..3)
                .map(|i| Query {
                    id: CharacterId(i),
                    embedding: Embedding(vec![0.0]),
                })
                .collect(),
            scenes: vec![
                scene(0, vec![det(0, 0), det(1, 1), det(2, 0)]),
                scene(1, vec![det(0, 1), det(1, 0), det(2, 1)]),
            ],
            dims: Dims {
                embedding: 1,
                visual: 0,
                textual: 0,
            },
        }
    }

    fn ranking(q: usize, order: &[(u64, u64)]) -> QueryRanking {
        let n = order.len() as f64;
        QueryRanking {
            query: CharacterId(q),
            entries: order
                .iter()
                .enumerate()
                .map(|(i, &(s, d))| RankedEntry {
                    scene_id: s,
                    detection_id: d,
                    score: n - i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_fixture_matches_definitions() {
        let ds = fixture();
        // q0 relevant: (0,0) (0,2) (1,1); q1 relevant: (0,1) (1,0) (1,2)
        let r0 = ranking(0, &[(0, 0), (1, 0), (0, 2), (0, 1), (1, 2), (1, 1)]);
        let r1 = ranking(1, &[(0, 0), (0, 1), (1, 0), (1, 2), (0, 2), (1, 1)]);
        let r2 = ranking(2, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        let rep = evaluate(&[r0, r1, r2], &ds, 3).unwrap();
        // q0 hits at 1,3,6: AP=(1+2/3+3/6)/3, INP=3/6; q1 hits at 2,3,4: AP=(1/2+2/3+3/4)/3, INP=3/4
        let ap0 = (1.0 + 2.0 / 3.0 + 0.5) / 3.0;
        let ap1 = (0.5 + 2.0 / 3.0 + 0.75) / 3.0;
        assert!((rep.map - (ap0 + ap1) / 2.0).abs() < 1e-15);
        assert!((rep.minp - (0.5 + 0.75) / 2.0).abs() < 1e-15);
        assert_eq!(rep.cmc, vec![0.5, 1.0, 1.0]);
        assert_eq!(rep.excluded_queries, vec![CharacterId(2)]);
        assert_eq!(rep.num_evaluated, 2);
    }

    #[test]
    fn perfect_rankings_score_one() {
        let ds = fixture();
        let r0 = ranking(0, &[(0, 0), (0, 2), (1, 1), (0, 1), (1, 0), (1, 2)]);
        let r1 = ranking(1, &[(0, 1), (1, 0), (1, 2), (0, 0), (0, 2), (1, 1)]);
        let r2 = ranking(2, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        let rep = evaluate(&[r0, r1, r2], &ds, 1).unwrap();
        assert_eq!((rep.map, rep.minp, rep.rank1()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn coverage_is_enforced() {
        let ds = fixture();
        let all = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)];
        let r0 = ranking(0, &all);
        let r1 = ranking(1, &all);
        assert!(evaluate(&[r0.clone(), r1.clone()], &ds, 1).is_err());
        let short = ranking(2, &all[..5]);
        assert!(evaluate(&[r0.clone(), r1.clone(), short], &ds, 1).is_err());
        let dup = ranking(2, &[(0, 0), (0, 0), (0, 2), (1, 0), (1, 1), (1, 2)]);
        assert!(evaluate(&[r0, r1, dup], &ds, 1).is_err());
    }

    #[test]
    fn tie_break_makes_insertion_order_irrelevant() {
        let ds = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<RankedEntry> = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
            .iter()
            .map(|&(s, d)| RankedEntry {
                scene_id: s,
                detection_id: d,
                score: if d == 1 { 1.0 } else { 0.0 },
            })
            .collect();
        let mut reports = Vec::new();
        for _ in 0..5 {
            let rs: Vec<QueryRanking> = (0..3)
                .map(|q| {
                    let mut e = base.clone();
                    e.shuffle(&mut rng);
                    QueryRanking::sorted(CharacterId(q), e)
                })
                .collect();
            reports.push(evaluate(&rs, &ds, 6).unwrap());
        }
        assert!(reports.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn query_order_only_permutes_breakdown() {
        let ds = fixture();
        let all = [(0, 0), (1, 1), (0, 1), (0, 2), (1, 0), (1, 2)];
        let rs: Vec<QueryRanking> = (0..3).map(|q| ranking(q, &all)).collect();
        let a = evaluate(&rs, &ds, 6).unwrap();
        let rev: Vec<QueryRanking> = rs.into_iter().rev().collect();
        let b = evaluate(&rev, &ds, 6).unwrap();
        assert!((a.map - b.map).abs() < 1e-15 && (a.minp - b.minp).abs() < 1e-15);
        assert_eq!(a.cmc, b.cmc);
        assert_eq!(a.per_query[0], b.per_query[1]);
        assert_eq!(*a.cmc.last().unwrap(), 1.0);
    }
}
