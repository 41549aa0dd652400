//! Query strategies: pixel filters, filtered and all-pixel aggregation, and
//! the dual-stream TopK query that merges target-aware and boundary-driven
//! rankings. Every ranking breaks ties by smaller sample id so results are
//! identical across runs and degrees of parallelism.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{PixelSet, ProbMap, SampleId};
use crate::error::{Error, Result};
use crate::uncertainty::{Prediction, ScorerKind, UncMap};

/// Target filter: keep pixels whose foreground probability exceeds the
/// threshold (strictly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetFilterConfig {
    threshold: f64,
}

impl TargetFilterConfig {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() || !(0.0..1.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!(
                "target threshold must lie in [0, 1), got {threshold}"
            )));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for TargetFilterConfig {
    fn default() -> Self {
        Self {
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

/// Boundary filter: keep pixels whose probability lies strictly within
/// `half_width` of `center` (the decision boundary, 0.5 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFilterConfig {
    center: f64,
    half_width: f64,
}

impl BoundaryFilterConfig {
    pub const DEFAULT_CENTER: f64 = 0.5;
    pub const DEFAULT_HALF_WIDTH: f64 = 0.2;

    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !center.is_finite() || !(center > 0.0 && center < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "boundary center must lie in (0, 1), got {center}"
            )));
        }
        if !half_width.is_finite() || !(half_width > 0.0 && half_width <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "boundary half-width must lie in (0, 0.5], got {half_width}"
            )));
        }
        Ok(Self { center, half_width })
    }

    pub fn center(&self) -> f64 {
        self.center
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
}

impl Default for BoundaryFilterConfig {
    fn default() -> Self {
        Self {
            center: Self::DEFAULT_CENTER,
            half_width: Self::DEFAULT_HALF_WIDTH,
        }
    }
}

/// Per-sample scores of the two selection streams.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamScores {
    entries: BTreeMap<SampleId, StreamScore>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamScore {
    pub target: f64,
    pub boundary: f64,
}

impl StreamScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: SampleId, target: f64, boundary: f64) -> Result<()> {
        if !target.is_finite() || target < 0.0 || !boundary.is_finite() || boundary < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "stream scores for sample {id} must be finite and non-negative, got ({target}, {boundary})"
            )));
        }
        self.entries.insert(id, StreamScore { target, boundary });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn get(&self, id: SampleId) -> Option<StreamScore> {
        self.entries.get(&id).copied()
    }
    pub fn iter(&self) -> impl Iterator<Item = (SampleId, StreamScore)> + '_ {
        self.entries.iter().map(|(&id, &s)| (id, s))
    }

    pub fn target_scores(&self) -> Vec<(SampleId, f64)> {
        self.entries.iter().map(|(&id, s)| (id, s.target)).collect()
    }
    pub fn boundary_scores(&self) -> Vec<(SampleId, f64)> {
        self.entries
            .iter()
            .map(|(&id, s)| (id, s.boundary))
            .collect()
    }
}

/// Where a chosen sample came from within one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    TargetStream,
    BoundaryStream,
    OverflowFill,
    /// Single-ranking (conventional) selection.
    SingleStream,
    Random,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::TargetStream => "target-stream",
            Provenance::BoundaryStream => "boundary-stream",
            Provenance::OverflowFill => "overflow-fill",
            Provenance::SingleStream => "single-stream",
            Provenance::Random => "random",
        };
        f.write_str(s)
    }
}

/// Ranked sample ids chosen in one query, with per-id provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    chosen: Vec<(SampleId, Provenance)>,
}

impl SelectionResult {
    pub(crate) fn from_chosen(chosen: Vec<(SampleId, Provenance)>) -> Self {
        Self { chosen }
    }

    pub fn chosen(&self) -> &[(SampleId, Provenance)] {
        &self.chosen
    }
    pub fn ids(&self) -> Vec<SampleId> {
        self.chosen.iter().map(|&(id, _)| id).collect()
    }
    pub fn len(&self) -> usize {
        self.chosen.len()
    }
    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }
}

/// Strategies compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    Random,
    Conventional(ScorerKind),
    Selective(ScorerKind),
}

impl StrategyKind {
    pub fn scorer(&self) -> Option<ScorerKind> {
        match self {
            StrategyKind::Random => None,
            StrategyKind::Conventional(s) | StrategyKind::Selective(s) => Some(*s),
        }
    }

    pub fn valid_names() -> String {
        let mut names = vec!["random".to_string()];
        for s in ScorerKind::ALL {
            names.push(s.to_string());
            names.push(format!("selective-{s}"));
        }
        names.join(", ")
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Random => f.write_str("random"),
            StrategyKind::Conventional(s) => write!(f, "{s}"),
            StrategyKind::Selective(s) => write!(f, "selective-{s}"),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownStrategy {
            name: s.to_string(),
            valid: StrategyKind::valid_names(),
        };
        if s == "random" {
            return Ok(StrategyKind::Random);
        }
        if let Some(rest) = s.strip_prefix("selective-") {
            return rest
                .parse::<ScorerKind>()
                .map(StrategyKind::Selective)
                .map_err(|_| unknown());
        }
        s.parse::<ScorerKind>()
            .map(StrategyKind::Conventional)
            .map_err(|_| unknown())
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(s: StrategyKind) -> String {
        s.to_string()
    }
}

/// Pixels whose foreground probability strictly exceeds the threshold.
pub fn target_pixels(m: &ProbMap, cfg: &TargetFilterConfig) -> PixelSet {
    let indices = m
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > cfg.threshold())
        .map(|(i, _)| i)
        .collect();
    PixelSet::new(indices, m.len()).expect("scan produces a sorted in-range set")
}

/// Pixels strictly within `half_width` of the filter center.
pub fn boundary_pixels(m: &ProbMap, cfg: &BoundaryFilterConfig) -> PixelSet {
    let indices = m
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(_, &p)| (p - cfg.center()).abs() < cfg.half_width())
        .map(|(i, _)| i)
        .collect();
    PixelSet::new(indices, m.len()).expect("scan produces a sorted in-range set")
}

/// Sum of uncertainty scores over the pixels of `s`. The empty set sums to 0.
pub fn aggregate_filtered(u: &UncMap, s: &PixelSet) -> Result<f64> {
    let scores = u.as_slice();
    let mut sum = 0.0;
    for &i in s.indices() {
        let v = scores.get(i).ok_or(Error::PixelIndexOutOfRange {
            index: i,
            len: scores.len(),
        })?;
        sum += v;
    }
    Ok(sum)
}

/// Sum over all pixels; equals `aggregate_filtered` with the full set.
pub fn aggregate_all(u: &UncMap) -> f64 {
    u.as_slice().iter().sum()
}

/// Ids of the k largest scores, descending; ties broken by smaller id.
pub fn rank_topk(scores: &[(SampleId, f64)], k: usize) -> Vec<SampleId> {
    let mut ranked: Vec<(SampleId, f64)> = scores.to_vec();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores must be finite")
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    ranked.into_iter().map(|(id, _)| id).collect()
}

/// Dual-stream query: top ceil(b/2) by target score unioned with top
/// floor(b/2) by boundary score; shortfall from overlap is filled by
/// alternating the streams' next-ranked unchosen ids, target stream first.
pub fn selective_query(pool_scores: &StreamScores, b: usize) -> Result<SelectionResult> {
    let n = pool_scores.len();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let want = b.min(n);
    let target_rank = rank_topk(&pool_scores.target_scores(), n);
    let boundary_rank = rank_topk(&pool_scores.boundary_scores(), n);

    let t_take = ((b + 1) / 2).min(n);
    let u_take = (b / 2).min(n);

    let mut chosen: Vec<(SampleId, Provenance)> = Vec::with_capacity(want);
    let mut seen: BTreeSet<SampleId> = BTreeSet::new();
    for &id in &target_rank[..t_take] {
        if seen.insert(id) {
            chosen.push((id, Provenance::TargetStream));
        }
    }
    for &id in &boundary_rank[..u_take] {
        if seen.insert(id) {
            chosen.push((id, Provenance::BoundaryStream));
        }
    }

    let mut ti = t_take;
    let mut ui = u_take;
    let mut from_target = true;
    while chosen.len() < want {
        let (rank, idx) = if from_target {
            (&target_rank, &mut ti)
        } else {
            (&boundary_rank, &mut ui)
        };
        while *idx < rank.len() && seen.contains(&rank[*idx]) {
            *idx += 1;
        }
        if *idx < rank.len() {
            let id = rank[*idx];
            seen.insert(id);
            chosen.push((id, Provenance::OverflowFill));
            *idx += 1;
        }
        from_target = !from_target;
    }
    Ok(SelectionResult { chosen })
}

/// Uniform sample without replacement, fully determined by the seed.
pub fn random_query(pool: &[SampleId], b: usize, seed: u64) -> Result<SelectionResult> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut ids = pool.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(b.min(ids.len()));
    Ok(SelectionResult {
        chosen: ids.into_iter().map(|id| (id, Provenance::Random)).collect(),
    })
}

/// Scores of one pool under a non-random strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolScores {
    Conventional(Vec<(SampleId, f64)>),
    Selective(StreamScores),
}

/// Scores every pool sample under `strategy`. Conventional strategies sum the
/// scorer over all pixels; selective strategies sum over the target and
/// boundary filters, where the filters read the raw probability map for
/// single-pass scorers and the MC mean for MC scorers.
pub fn score_pool(
    predictions: &BTreeMap<SampleId, Prediction>,
    strategy: StrategyKind,
    target_cfg: &TargetFilterConfig,
    boundary_cfg: &BoundaryFilterConfig,
) -> Result<PoolScores> {
    let scorer = strategy.scorer().ok_or_else(|| {
        Error::InvalidConfig("the random strategy does not score the pool".to_string())
    })?;
    match strategy {
        StrategyKind::Conventional(_) => {
            let mut scores = Vec::with_capacity(predictions.len());
            for (&id, pred) in predictions {
                let u = scorer.score(pred).ok_or(Error::PredictionMismatch {
                    id,
                    scorer: scorer.to_string(),
                })?;
                scores.push((id, aggregate_all(&u)));
            }
            Ok(PoolScores::Conventional(scores))
        }
        StrategyKind::Selective(_) => {
            let mut scores = StreamScores::new();
            for (&id, pred) in predictions {
                let u = scorer.score(pred).ok_or(Error::PredictionMismatch {
                    id,
                    scorer: scorer.to_string(),
                })?;
                let filter_map = pred.filter_map();
                let target = aggregate_filtered(&u, &target_pixels(&filter_map, target_cfg))?;
                let boundary = aggregate_filtered(&u, &boundary_pixels(&filter_map, boundary_cfg))?;
                scores.insert(id, target, boundary)?;
            }
            Ok(PoolScores::Selective(scores))
        }
        StrategyKind::Random => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::entropy_map;
    use proptest::prelude::*;

    fn pm(probs: &[f64]) -> ProbMap {
        ProbMap::new(1, probs.len(), probs.to_vec()).unwrap()
    }

    fn um(scores: &[f64]) -> UncMap {
        UncMap::new(1, scores.len(), scores.to_vec()).unwrap()
    }

    fn ids(v: &[u64]) -> Vec<SampleId> {
        v.iter().map(|&i| SampleId(i)).collect()
    }

    #[test]
    fn target_filter_is_strict() {
        let m = pm(&[0.2, 0.7, 0.9, 0.5]);
        let cfg = TargetFilterConfig::new(0.5).unwrap();
        assert_eq!(target_pixels(&m, &cfg).indices(), &[1, 2]);
        let cfg = TargetFilterConfig::new(0.99).unwrap();
        assert!(target_pixels(&m, &cfg).is_empty());
        let cfg = TargetFilterConfig::new(0.0).unwrap();
        assert_eq!(target_pixels(&m, &cfg).indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn boundary_filter_is_strict() {
        let m = pm(&[0.2, 0.35, 0.5, 0.69, 0.71]);
        let cfg = BoundaryFilterConfig::new(0.5, 0.2).unwrap();
        assert_eq!(boundary_pixels(&m, &cfg).indices(), &[1, 2, 3]);

        let tiny = BoundaryFilterConfig::new(0.5, 1e-15).unwrap();
        assert_eq!(boundary_pixels(&m, &tiny).indices(), &[2]);
        let off = pm(&[0.2, 0.35, 0.51]);
        assert!(boundary_pixels(&off, &tiny).is_empty());

        let all_center = pm(&[0.5, 0.5, 0.5]);
        let cfg = BoundaryFilterConfig::new(0.5, 0.01).unwrap();
        assert_eq!(boundary_pixels(&all_center, &cfg).indices(), &[0, 1, 2]);
    }

    #[test]
    fn filter_config_validation() {
        assert!(TargetFilterConfig::new(1.0).is_err());
        assert!(TargetFilterConfig::new(-0.1).is_err());
        assert!(BoundaryFilterConfig::new(0.5, 0.0).is_err());
        assert!(BoundaryFilterConfig::new(0.5, 0.6).is_err());
        assert!(BoundaryFilterConfig::new(0.0, 0.2).is_err());
    }

    #[test]
    fn aggregate_filtered_cases() {
        let u = um(&[0.1, 0.2, 0.3]);
        let s = PixelSet::new(vec![0, 2], 3).unwrap();
        assert!((aggregate_filtered(&u, &s).unwrap() - 0.4).abs() < 1e-12);
        let empty = PixelSet::new(vec![], 3).unwrap();
        assert_eq!(aggregate_filtered(&u, &empty).unwrap(), 0.0);
        let full = PixelSet::new(vec![0, 1, 2], 3).unwrap();
        assert!((aggregate_filtered(&u, &full).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(aggregate_filtered(&u, &full).unwrap(), aggregate_all(&u));
        let oob = PixelSet::new(vec![3], 4).unwrap();
        assert!(matches!(
            aggregate_filtered(&u, &oob),
            Err(Error::PixelIndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn rank_topk_tie_break_and_bounds() {
        let scores = vec![
            (SampleId(0), 1.0),
            (SampleId(1), 3.0),
            (SampleId(2), 3.0),
            (SampleId(3), 2.0),
        ];
        assert_eq!(rank_topk(&scores, 2), ids(&[1, 2]));
        assert_eq!(rank_topk(&scores, 0), ids(&[]));
        let two = vec![(SampleId(0), 1.0), (SampleId(1), 3.0)];
        assert_eq!(rank_topk(&two, 5), ids(&[1, 0]));
    }

    fn stream(entries: &[(u64, f64, f64)]) -> StreamScores {
        let mut s = StreamScores::new();
        for &(id, t, u) in entries {
            s.insert(SampleId(id), t, u).unwrap();
        }
        s
    }

    #[test]
    fn selective_query_merges_streams() {
        // target ranking [A, B, C, D] = [0, 1, 2, 3]; boundary [C, D, A, B]
        let s = stream(&[
            (0, 4.0, 2.0),
            (1, 3.0, 1.0),
            (2, 2.0, 4.0),
            (3, 1.0, 3.0),
        ]);
        let r = selective_query(&s, 2).unwrap();
        assert_eq!(r.ids(), ids(&[0, 2]));
        assert_eq!(r.chosen()[0].1, Provenance::TargetStream);
        assert_eq!(r.chosen()[1].1, Provenance::BoundaryStream);
    }

    #[test]
    fn selective_query_fills_overlap() {
        // both streams rank [A, B, C] = [0, 1, 2]
        let s = stream(&[(0, 3.0, 3.0), (1, 2.0, 2.0), (2, 1.0, 1.0)]);
        let r = selective_query(&s, 2).unwrap();
        assert_eq!(r.ids(), ids(&[0, 1]));
        assert_eq!(r.chosen()[1].1, Provenance::OverflowFill);
    }

    #[test]
    fn selective_query_exhaustive_and_empty() {
        let s = stream(&[(0, 3.0, 1.0), (1, 2.0, 2.0), (2, 1.0, 3.0)]);
        let r = selective_query(&s, 3).unwrap();
        let mut got = r.ids();
        got.sort();
        assert_eq!(got, ids(&[0, 1, 2]));
        assert!(matches!(
            selective_query(&StreamScores::new(), 2),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn random_query_exhaustive_and_deterministic() {
        let pool = ids(&(0..10).collect::<Vec<_>>());
        let r = random_query(&pool, 10, 7).unwrap();
        let mut got = r.ids();
        got.sort();
        assert_eq!(got, pool);
        assert_eq!(
            random_query(&pool, 4, 7).unwrap(),
            random_query(&pool, 4, 7).unwrap()
        );
        let big: Vec<SampleId> = (0..1000).map(SampleId).collect();
        // two fixed seeds recorded at implementation time
        let a = random_query(&big, 100, 11).unwrap();
        let b = random_query(&big, 100, 12).unwrap();
        assert_ne!(a.ids(), b.ids());
        assert!(matches!(random_query(&[], 2, 0), Err(Error::EmptyPool)));
    }

    fn preds(entries: &[(u64, f64)]) -> BTreeMap<SampleId, Prediction> {
        entries
            .iter()
            .map(|&(id, p)| (SampleId(id), Prediction::Single(pm(&[p]))))
            .collect()
    }

    #[test]
    fn score_pool_conventional_entropy() {
        let p = preds(&[(0, 0.5), (1, 0.9)]);
        let got = score_pool(
            &p,
            StrategyKind::Conventional(ScorerKind::Entropy),
            &TargetFilterConfig::default(),
            &BoundaryFilterConfig::default(),
        )
        .unwrap();
        let PoolScores::Conventional(scores) = got else {
            panic!("expected conventional scores")
        };
        assert!((scores[0].1 - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((scores[1].1 - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn score_pool_selective_entropy() {
        let p = preds(&[(0, 0.5), (1, 0.9)]);
        let target_cfg = TargetFilterConfig::new(0.8).unwrap();
        let boundary_cfg = BoundaryFilterConfig::new(0.5, 0.1).unwrap();
        let got = score_pool(
            &p,
            StrategyKind::Selective(ScorerKind::Entropy),
            &target_cfg,
            &boundary_cfg,
        )
        .unwrap();
        let PoolScores::Selective(scores) = got else {
            panic!("expected selective scores")
        };
        let a = scores.get(SampleId(0)).unwrap();
        let b = scores.get(SampleId(1)).unwrap();
        assert_eq!(a.target, 0.0);
        assert!((a.boundary - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((b.target - 0.325083).abs() < 1e-6);
        assert_eq!(b.boundary, 0.0);
    }

    #[test]
    fn score_pool_rejects_prediction_kind_mismatch() {
        let p = preds(&[(3, 0.5)]);
        let err = score_pool(
            &p,
            StrategyKind::Conventional(ScorerKind::Bald),
            &TargetFilterConfig::default(),
            &BoundaryFilterConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("sample 3"), "{err}");
    }

    #[test]
    fn degenerate_filters_reduce_to_all_pixel_aggregation() {
        let p = preds(&[(0, 0.31), (1, 0.62), (2, 0.48), (3, 0.93)]);
        let target_cfg = TargetFilterConfig::new(0.0).unwrap();
        let boundary_cfg = BoundaryFilterConfig::new(0.5, 0.5).unwrap();
        let PoolScores::Selective(sel) = score_pool(
            &p,
            StrategyKind::Selective(ScorerKind::Entropy),
            &target_cfg,
            &boundary_cfg,
        )
        .unwrap() else {
            panic!()
        };
        let PoolScores::Conventional(conv) = score_pool(
            &p,
            StrategyKind::Conventional(ScorerKind::Entropy),
            &target_cfg,
            &boundary_cfg,
        )
        .unwrap() else {
            panic!()
        };
        for &(id, score) in &conv {
            let s = sel.get(id).unwrap();
            assert_eq!(s.target, score);
            assert_eq!(s.boundary, score);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in [
            "random",
            "entropy",
            "selective-entropy",
            "mc-dropout",
            "selective-bald",
            "least-confidence",
            "selective-margin",
        ] {
            let k: StrategyKind = name.parse().unwrap();
            assert_eq!(k.to_string(), name);
        }
        let err = "umap".parse::<StrategyKind>().unwrap_err();
        assert!(err.to_string().contains("selective-entropy"), "{err}");
    }

    proptest! {
        #[test]
        fn filters_match_brute_force(
            probs in prop::collection::vec(0.0f64..=1.0, 1..64),
            threshold in 0.0f64..1.0,
            half_width in 1e-6f64..=0.5,
        ) {
            let m = pm(&probs);
            let t_cfg = TargetFilterConfig::new(threshold).unwrap();
            let b_cfg = BoundaryFilterConfig::new(0.5, half_width).unwrap();
            let t_expect: Vec<usize> = probs.iter().enumerate()
                .filter(|&(_, &p)| p > threshold).map(|(i, _)| i).collect();
            let b_expect: Vec<usize> = probs.iter().enumerate()
                .filter(|&(_, &p)| (p - 0.5).abs() < half_width).map(|(i, _)| i).collect();
            let t_got = target_pixels(&m, &t_cfg);
            let b_got = boundary_pixels(&m, &b_cfg);
            prop_assert_eq!(t_got.indices(), &t_expect[..]);
            prop_assert_eq!(b_got.indices(), &b_expect[..]);
        }

        #[test]
        fn filters_read_probabilities_not_scores(
            probs in prop::collection::vec(0.001f64..=0.999, 1..32),
            threshold in 0.0f64..1.0,
        ) {
            // replacing the scorer leaves the filter sets unchanged
            let m = pm(&probs);
            let t_cfg = TargetFilterConfig::new(threshold).unwrap();
            let b_cfg = BoundaryFilterConfig::default();
            let t1 = target_pixels(&m, &t_cfg);
            let b1 = boundary_pixels(&m, &b_cfg);
            let _ = entropy_map(&m);
            prop_assert_eq!(target_pixels(&m, &t_cfg), t1);
            prop_assert_eq!(boundary_pixels(&m, &b_cfg), b1);
        }

        #[test]
        fn topk_matches_sort_prefix(
            scores in prop::collection::vec(0.0f64..100.0, 1..100),
            k in 0usize..110,
        ) {
            let scored: Vec<(SampleId, f64)> = scores.iter().enumerate()
                .map(|(i, &s)| (SampleId(i as u64), s)).collect();
            let mut oracle = scored.clone();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expect: Vec<SampleId> = oracle.iter().take(k).map(|&(id, _)| id).collect();
            prop_assert_eq!(rank_topk(&scored, k), expect);
        }

        #[test]
        fn selective_query_no_duplicates_exact_size(
            n in 1usize..30,
            b in 1usize..40,
            raw in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 30),
        ) {
            let mut s = StreamScores::new();
            for i in 0..n {
                s.insert(SampleId(i as u64), raw[i].0, raw[i].1).unwrap();
            }
            let r = selective_query(&s, b).unwrap();
            prop_assert_eq!(r.len(), b.min(n));
            let mut got = r.ids();
            got.sort();
            let before = got.len();
            got.dedup();
            prop_assert_eq!(got.len(), before);
            for id in r.ids() {
                prop_assert!(id.0 < n as u64);
            }
        }
    }
}
