//! Data model shared by the whole engine: characters, the predefined social
//! graph, scenes of gallery detections and the dataset container.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Dense index of a query character, `0..Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CharacterId(pub usize);

impl CharacterId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for CharacterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// The five relation categories. Ordinals are stable and index [`RelationPrior`](crate::drwm::RelationPrior).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    Working,
    Kinship,
    Hostile,
    Friend,
    Couple,
}

impl RelationType {
    pub const COUNT: usize = 5;
    pub const ALL: [RelationType; 5] = [
        RelationType::Working,
        RelationType::Kinship,
        RelationType::Hostile,
        RelationType::Friend,
        RelationType::Couple,
    ];

    pub fn index(self) -> usize {
        match self {
            RelationType::Working => 0,
            RelationType::Kinship => 1,
            RelationType::Hostile => 2,
            RelationType::Friend => 3,
            RelationType::Couple => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

/// Ordinal of a relation type, `0..5`.
pub fn relation_index(r: RelationType) -> usize {
    r.index()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialEdge {
    pub a: CharacterId,
    pub b: CharacterId,
    pub relation: RelationType,
}

impl SocialEdge {
    /// Builds an edge with endpoints stored in ascending order.
    pub fn new(a: CharacterId, b: CharacterId, relation: RelationType) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        Self { a, b, relation }
    }
}

/// Predefined, undirected character relation graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    pub num_characters: usize,
    pub edges: Vec<SocialEdge>,
}

impl SocialGraph {
    pub fn new(num_characters: usize) -> Self {
        Self {
            num_characters,
            edges: Vec::new(),
        }
    }

    /// Adds an edge, normalizing endpoint order. Invariants are checked by
    /// [`validate`], not here, so that malformed graphs can be represented.
    pub fn add_edge(&mut self, a: usize, b: usize, relation: RelationType) -> &mut Self {
        self.edges
            .push(SocialEdge::new(CharacterId(a), CharacterId(b), relation));
        self
    }

    pub fn relation_between(&self, a: CharacterId, b: CharacterId) -> Option<RelationType> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.a == lo && e.b == hi).map(|e| e.relation)
    }

    /// Neighbors of `c` together with the relation on the connecting edge.
    pub fn neighbors(&self, c: CharacterId) -> impl Iterator<Item = (CharacterId, RelationType)> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.a == c {
                Some((e.b, e.relation))
            } else if e.b == c {
                Some((e.a, e.relation))
            } else {
                None
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding<T: Real = f64>(pub Vec<T>);

impl<T: Real> Embedding<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> From<Vec<T>> for Embedding<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// Which context modalities a run may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityMask {
    #[default]
    Both,
    VisualOnlyCtx,
    TextualOnlyCtx,
    None,
}

impl ModalityMask {
    pub fn keeps_visual(self) -> bool {
        matches!(self, ModalityMask::Both | ModalityMask::VisualOnlyCtx)
    }

    pub fn keeps_textual(self) -> bool {
        matches!(self, ModalityMask::Both | ModalityMask::TextualOnlyCtx)
    }
}

/// Scene-level context. An absent modality is a zero vector with its flag cleared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures<T: Real = f64> {
    pub visual: Vec<T>,
    pub textual: Vec<T>,
    pub present_visual: bool,
    pub present_textual: bool,
}

impl<T: Real> ContextFeatures<T> {
    pub fn new(visual: Vec<T>, textual: Vec<T>) -> Self {
        Self {
            visual,
            textual,
            present_visual: true,
            present_textual: true,
        }
    }

    pub fn absent(visual_dim: usize, textual_dim: usize) -> Self {
        Self {
            visual: vec![T::zero(); visual_dim],
            textual: vec![T::zero(); textual_dim],
            present_visual: false,
            present_textual: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.visual.len() + self.textual.len()
    }

    /// Visual and textual halves concatenated.
    pub fn concat(&self) -> Vec<T> {
        self.visual.iter().chain(&self.textual).copied().collect()
    }

    pub fn masked(&self, mask: ModalityMask) -> Self {
        let mut out = self.clone();
        if !mask.keeps_visual() {
            out.visual.iter_mut().for_each(|v| *v = T::zero());
            out.present_visual = false;
        }
        if !mask.keeps_textual() {
            out.textual.iter_mut().for_each(|v| *v = T::zero());
            out.present_textual = false;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryDetection<T: Real = f64> {
    pub detection_id: u64,
    pub embedding: Embedding<T>,
    /// Ground truth for evaluation. Ranking never reads it.
    pub true_id: CharacterId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene<T: Real = f64> {
    pub scene_id: u64,
    pub detections: Vec<GalleryDetection<T>>,
    pub context: ContextFeatures<T>,
    /// Multi-label relation target (union over gallery pairs), length 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_labels: Option<Vec<u8>>,
    /// Precomputed relation prior; bypasses the trained head when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_prior: Option<Vec<T>>,
}

impl<T: Real> Scene<T> {
    /// Scenes with fewer than two detections skip the social pipeline.
    pub fn is_social(&self) -> bool {
        self.detections.len() >= 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query<T: Real = f64> {
    pub id: CharacterId,
    pub embedding: Embedding<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embedding: usize,
    pub visual: usize,
    pub textual: usize,
}

impl Dims {
    pub fn context(&self) -> usize {
        self.visual + self.textual
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T: Real = f64> {
    pub social_graph: SocialGraph,
    pub queries: Vec<Query<T>>,
    pub scenes: Vec<Scene<T>>,
    pub dims: Dims,
}

impl<T: Real> Dataset<T> {
    pub fn num_characters(&self) -> usize {
        self.social_graph.num_characters
    }

    /// Query embeddings ordered by character id. Assumes a validated dataset.
    pub fn query_embeddings(&self) -> Vec<&[T]> {
        let mut sorted: Vec<&Query<T>> = self.queries.iter().collect();
        sorted.sort_by_key(|q| q.id);
        sorted.iter().map(|q| q.embedding.as_slice()).collect()
    }

    pub fn num_detections(&self) -> usize {
        self.scenes.iter().map(|s| s.detections.len()).sum()
    }

    /// Returns the dataset with every scene's context masked.
    pub fn with_modality_mask(&self, mask: ModalityMask) -> Self {
        let mut out = self.clone();
        for scene in &mut out.scenes {
            scene.context = scene.context.masked(mask);
        }
        out
    }
}

/// One broken invariant, naming the offending entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SelfEdge { character: usize },
    DuplicatePair { a: usize, b: usize },
    UnorderedEdge { a: usize, b: usize },
    EdgeOutOfRange { a: usize, b: usize },
    QueryIdOutOfRange { query: usize },
    DuplicateQuery { query: usize },
    MissingQuery { character: usize },
    QueryDim { query: usize, dim: usize },
    NonFiniteQuery { query: usize },
    EmptyScene { scene: u64 },
    DuplicateScene { scene: u64 },
    DuplicateDetection { scene: u64, detection: u64 },
    DetectionDim { scene: u64, detection: u64, dim: usize },
    NonFiniteDetection { scene: u64, detection: u64 },
    TrueIdOutOfRange { scene: u64, detection: u64, true_id: usize },
    ContextDim { scene: u64 },
    NonFiniteContext { scene: u64 },
    AbsentModalityNonZero { scene: u64 },
    RelationLabels { scene: u64 },
    RelationPrior { scene: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            SelfEdge { character } => write!(f, "self-edge on character {character}"),
            DuplicatePair { a, b } => write!(f, "duplicate pair ({a}, {b}) in social graph"),
            UnorderedEdge { a, b } => write!(f, "edge ({a}, {b}) not stored with a < b"),
            EdgeOutOfRange { a, b } => write!(f, "edge ({a}, {b}) references unknown character"),
            QueryIdOutOfRange { query } => write!(f, "query {query} out of range"),
            DuplicateQuery { query } => write!(f, "duplicate query for character {query}"),
            MissingQuery { character } => write!(f, "no query for character {character}"),
            QueryDim { query, dim } => write!(f, "query {query} has dimension {dim}"),
            NonFiniteQuery { query } => write!(f, "query {query} has non-finite entries"),
            EmptyScene { scene } => write!(f, "scene {scene} has no detections"),
            DuplicateScene { scene } => write!(f, "duplicate scene id {scene}"),
            DuplicateDetection { scene, detection } => {
                write!(f, "scene {scene}: duplicate detection id {detection}")
            }
            DetectionDim { scene, detection, dim } => {
                write!(f, "scene {scene} detection {detection} has dimension {dim}")
            }
            NonFiniteDetection { scene, detection } => {
                write!(f, "scene {scene} detection {detection} has non-finite entries")
            }
            TrueIdOutOfRange {
                scene,
                detection,
                true_id,
            } => write!(f, "scene {scene} detection {detection}: true id {true_id} out of range"),
            ContextDim { scene } => write!(f, "scene {scene}: context dimension mismatch"),
            NonFiniteContext { scene } => write!(f, "scene {scene}: non-finite context"),
            AbsentModalityNonZero { scene } => {
                write!(f, "scene {scene}: absent modality is not the zero vector")
            }
            RelationLabels { scene } => {
                write!(f, "scene {scene}: relation labels must be five 0/1 entries")
            }
            RelationPrior { scene } => {
                write!(f, "scene {scene}: relation prior must be five finite entries in [0, 1]")
            }
        }
    }
}

/// Checks every dataset invariant and reports all violations found.
pub fn validate<T: Real>(dataset: &Dataset<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let q = dataset.social_graph.num_characters;

    let mut pairs = BTreeSet::new();
    for e in &dataset.social_graph.edges {
        let (a, b) = (e.a.0, e.b.0);
        if a == b {
            out.push(Violation::SelfEdge { character: a });
            continue;
        }
        if a > b {
            out.push(Violation::UnorderedEdge { a, b });
        }
        if a >= q || b >= q {
            out.push(Violation::EdgeOutOfRange { a, b });
        }
        if !pairs.insert((a.min(b), a.max(b))) {
            out.push(Violation::DuplicatePair {
                a: a.min(b),
                b: a.max(b),
            });
        }
    }

    let mut seen = vec![false; q];
    for query in &dataset.queries {
        let id = query.id.0;
        if id >= q {
            out.push(Violation::QueryIdOutOfRange { query: id });
        } else if seen[id] {
            out.push(Violation::DuplicateQuery { query: id });
        } else {
            seen[id] = true;
        }
        if query.embedding.dim() != dataset.dims.embedding {
            out.push(Violation::QueryDim {
                query: id,
                dim: query.embedding.dim(),
            });
        }
        if !query.embedding.is_finite() {
            out.push(Violation::NonFiniteQuery { query: id });
        }
    }
    for (character, present) in seen.iter().enumerate() {
        if !present {
            out.push(Violation::MissingQuery { character });
        }
    }

    let mut scene_ids = BTreeSet::new();
    for scene in &dataset.scenes {
        let sid = scene.scene_id;
        if !scene_ids.insert(sid) {
            out.push(Violation::DuplicateScene { scene: sid });
        }
        if scene.detections.is_empty() {
            out.push(Violation::EmptyScene { scene: sid });
        }
        let mut det_ids = BTreeSet::new();
        for det in &scene.detections {
            let did = det.detection_id;
            if !det_ids.insert(did) {
                out.push(Violation::DuplicateDetection {
                    scene: sid,
                    detection: did,
                });
            }
            if det.embedding.dim() != dataset.dims.embedding {
                out.push(Violation::DetectionDim {
                    scene: sid,
                    detection: did,
                    dim: det.embedding.dim(),
                });
            }
            if !det.embedding.is_finite() {
                out.push(Violation::NonFiniteDetection {
                    scene: sid,
                    detection: did,
                });
            }
            if det.true_id.0 >= q {
                out.push(Violation::TrueIdOutOfRange {
                    scene: sid,
                    detection: did,
                    true_id: det.true_id.0,
                });
            }
        }

        let ctx = &scene.context;
        if ctx.visual.len() != dataset.dims.visual || ctx.textual.len() != dataset.dims.textual {
            out.push(Violation::ContextDim { scene: sid });
        }
        if !ctx.visual.iter().chain(&ctx.textual).all(|v| v.is_finite()) {
            out.push(Violation::NonFiniteContext { scene: sid });
        }
        let nonzero = |v: &[T]| v.iter().any(|x| !x.is_zero());
        if (!ctx.present_visual && nonzero(&ctx.visual)) || (!ctx.present_textual && nonzero(&ctx.textual)) {
            out.push(Violation::AbsentModalityNonZero { scene: sid });
        }

        if let Some(labels) = &scene.relation_labels {
            if labels.len() != RelationType::COUNT || labels.iter().any(|&l| l > 1) {
                out.push(Violation::RelationLabels { scene: sid });
            }
        }
        if let Some(prior) = &scene.relation_prior {
            let ok = prior.len() == RelationType::COUNT
                && prior.iter().all(|p| p.is_finite() && *p >= T::zero() && *p <= T::one());
            if !ok {
                out.push(Violation::RelationPrior { scene: sid });
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut g = SocialGraph::new(3);
        g.add_edge(0, 1, RelationType::Couple)
            .add_edge(1, 2, RelationType::Friend);
        let queries = (0..3)
            .map(|i| Query {
                id: CharacterId(i),
                embedding: Embedding(vec![i as f64, 0.0]),
            })
            .collect();
        let scene = Scene {
            scene_id: 0,
            detections: vec![
                GalleryDetection {
                    detection_id: 0,
                    embedding: Embedding(vec![0.1, 0.0]),
                    true_id: CharacterId(0),
                },
                GalleryDetection {
                    detection_id: 1,
                    embedding: Embedding(vec![0.9, 0.1]),
                    true_id: CharacterId(1),
                },
            ],
            context: ContextFeatures::new(vec![0.0, 1.0], vec![1.0]),
            relation_labels: Some(vec![0, 0, 0, 0, 1]),
            relation_prior: None,
        };
        Dataset {
            social_graph: g,
            queries,
            scenes: vec![scene],
            dims: Dims {
                embedding: 2,
                visual: 2,
                textual: 1,
            },
        }
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate(&tiny()).is_empty());
    }

    #[test]
    fn self_edge_is_reported() {
        let mut ds = tiny();
        ds.social_graph.add_edge(2, 2, RelationType::Friend);
        assert_eq!(validate(&ds), vec![Violation::SelfEdge { character: 2 }]);
    }

    #[test]
    fn duplicate_pair_is_reported() {
        let mut ds = tiny();
        ds.social_graph.add_edge(1, 0, RelationType::Working);
        assert_eq!(validate(&ds), vec![Violation::DuplicatePair { a: 0, b: 1 }]);
    }

    #[test]
    fn validate_is_idempotent() {
        let mut ds = tiny();
        ds.scenes[0].relation_labels = Some(vec![0, 2, 0]);
        ds.queries.pop();
        let first = validate(&ds);
        assert_eq!(first, validate(&ds));
        assert_eq!(first.len(), 2);
    }

    #[test]
    fn absent_modality_must_be_zero() {
        let mut ds = tiny();
        ds.scenes[0].context.present_textual = false;
        assert_eq!(validate(&ds), vec![Violation::AbsentModalityNonZero { scene: 0 }]);
        ds.scenes[0].context = ds.scenes[0].context.masked(ModalityMask::VisualOnlyCtx);
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn relation_index_is_a_bijection() {
        assert_eq!(relation_index(RelationType::Working), 0);
        assert_eq!(relation_index(RelationType::Couple), 4);
        for i in 0..RelationType::COUNT {
            assert_eq!(RelationType::from_index(i).unwrap().index(), i);
        }
        assert_eq!(RelationType::from_index(5), None);
    }

    #[test]
    fn single_detection_scene_is_not_social() {
        let mut ds = tiny();
        assert!(ds.scenes[0].is_social());
        ds.scenes[0].detections.truncate(1);
        assert!(!ds.scenes[0].is_social());
        assert!(validate(&ds).is_empty());
    }
}
