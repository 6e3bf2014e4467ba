//! Scene-by-scene re-ranking: co-occurrence mining, relation prior, social
//! context graph, propagation, fusion and scoring, with switches for the
//! visual-only baseline and the balance / modality ablations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::com;
use crate::drwm::{drwm_forward, weight_social_graph, RelationPrior};
use crate::error::{Error, Result};
use crate::graph::{self, NodeFeatures, DEFAULT_LAYERS};
use crate::linear::LinearHead;
use crate::metrics::{QueryRanking, RankedEntry};
use crate::model::{CharacterId, Dataset, ModalityMask, RelationType, Scene};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    VisualOnly,
    Socosearch,
}

/// How the social weight `w_s` of each scene is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceStrategy {
    /// Anchor confidence over relation prior mass.
    Adaptive,
    /// Fixed 0.5.
    Mean,
    /// One uniform draw in `[0, 1]` per social scene.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub balance_strategy: BalanceStrategy,
    pub modality_mask: ModalityMask,
    pub layers: usize,
    pub cmc_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Socosearch,
            balance_strategy: BalanceStrategy::Adaptive,
            modality_mask: ModalityMask::Both,
            layers: DEFAULT_LAYERS,
            cmc_k: 10,
        }
    }
}

impl RunConfig {
    pub fn visual_only() -> Self {
        Self {
            mode: Mode::VisualOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::InvalidConfig("layers must be at least 1".into()));
        }
        if self.cmc_k < 1 {
            return Err(Error::InvalidConfig("cmc_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// What happened in one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDiagnostics<T: Real = f64> {
    pub scene_id: u64,
    /// Whether the social pipeline ran; otherwise the scene used raw visual features.
    pub social: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_detection: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_query: Option<CharacterId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<T>,
    pub w_s: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<[T; RelationType::COUNT]>,
}

/// Per-scene scores plus diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneScores<T: Real = f64> {
    /// `scores[g][q]`, higher is better.
    pub scores: Vec<Vec<T>>,
    pub diagnostics: SceneDiagnostics<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput<T: Real = f64> {
    /// One ranking per query, in character order.
    pub rankings: Vec<QueryRanking<T>>,
    pub scenes: Vec<SceneDiagnostics<T>>,
}

/// Reusable scoring context for one dataset.
pub struct Ranker<'a, T: Real> {
    dataset: &'a Dataset<T>,
    config: RunConfig,
    head: Option<&'a LinearHead<T>>,
    queries: Vec<&'a [T]>,
}

impl<'a, T: Real> Ranker<'a, T> {
    pub fn new(dataset: &'a Dataset<T>, config: RunConfig, head: Option<&'a LinearHead<T>>) -> Result<Self> {
        config.validate()?;
        let queries = dataset.query_embeddings();
        if queries.len() != dataset.num_characters() {
            return Err(Error::InvalidInput(
                "dataset must carry exactly one query per character".into(),
            ));
        }
        if let Some(h) = head {
            h.check_shape()?;
            if h.outputs != RelationType::COUNT || h.inputs != dataset.dims.context() {
                return Err(Error::InvalidInput(format!(
                    "relation head is {}x{}, dataset context needs 5x{}",
                    h.outputs,
                    h.inputs,
                    dataset.dims.context()
                )));
            }
        }
        Ok(Self {
            dataset,
            config,
            head,
            queries,
        })
    }

    /// Whether the scene goes through the social pipeline under this config.
    fn uses_social(&self, scene: &Scene<T>) -> bool {
        if self.config.mode == Mode::VisualOnly || !scene.is_social() {
            return false;
        }
        // without any context the relation prior is unavailable
        scene.relation_prior.is_some() || self.config.modality_mask != ModalityMask::None
    }

    pub fn relation_prior(&self, scene: &Scene<T>) -> Result<RelationPrior<T>> {
        if let Some(p) = &scene.relation_prior {
            return RelationPrior::from_slice(p);
        }
        let head = self.head.ok_or_else(|| {
            Error::InvalidInput(format!(
                "scene {} has no precomputed prior and no relation head was given",
                scene.scene_id
            ))
        })?;
        drwm_forward(&scene.context.masked(self.config.modality_mask), head)
    }

    /// Scores one scene. `random_w` supplies the weight for the random strategy.
    pub fn score_scene(&self, scene: &Scene<T>, random_w: Option<T>) -> Result<SceneScores<T>> {
        let galleries: Vec<&[T]> = scene.detections.iter().map(|d| d.embedding.as_slice()).collect();
        if !self.uses_social(scene) {
            let h0 = NodeFeatures::initial(&[], &galleries)?.h;
            let fused = graph::fuse_with_weight(&h0, &h0, T::zero())?;
            return Ok(SceneScores {
                scores: rows(graph::rank_scene(&self.queries, &fused)?),
                diagnostics: SceneDiagnostics {
                    scene_id: scene.scene_id,
                    social: false,
                    anchor_detection: None,
                    anchor_query: None,
                    p_a: None,
                    w_s: T::zero(),
                    prior: None,
                },
            });
        }

        let (p, anchor) = com::mine(&galleries, &self.queries)?;
        let prior = self.relation_prior(scene)?;
        let edges = weight_social_graph(&self.dataset.social_graph, &prior);
        let g = graph::build_graph(&edges, galleries.len(), &p, &anchor, self.queries.len())?;
        let norm = graph::normalize(&g);
        let h0 = NodeFeatures::initial(&self.queries, &galleries)?;
        let h2 = graph::propagate(&norm, &h0, self.config.layers)?;
        let q = self.queries.len();
        let h0_g = graph::gallery_rows(&h0, q);
        let h2_g = graph::gallery_rows(&h2, q);
        let fused = match self.config.balance_strategy {
            BalanceStrategy::Adaptive => graph::fuse(&h0_g, &h2_g, anchor.p_a, &prior)?,
            BalanceStrategy::Mean => graph::fuse_with_weight(&h0_g, &h2_g, T::lit(0.5))?,
            BalanceStrategy::Random { .. } => {
                let w = random_w.ok_or_else(|| Error::InvalidInput("random strategy needs a draw".into()))?;
                graph::fuse_with_weight(&h0_g, &h2_g, w)?
            }
        };
        Ok(SceneScores {
            scores: rows(graph::rank_scene(&self.queries, &fused)?),
            diagnostics: SceneDiagnostics {
                scene_id: scene.scene_id,
                social: true,
                anchor_detection: Some(scene.detections[anchor.anchor_gallery].detection_id),
                anchor_query: Some(CharacterId(anchor.anchor_query)),
                p_a: Some(anchor.p_a),
                w_s: fused.w_s,
                prior: Some(prior.probs),
            },
        })
    }

    pub fn run(&self) -> Result<RunOutput<T>> {
        let mut rng = match self.config.balance_strategy {
            BalanceStrategy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let q = self.queries.len();
        let mut per_query: Vec<Vec<RankedEntry<T>>> = vec![Vec::with_capacity(self.dataset.num_detections()); q];
        let mut diagnostics = Vec::with_capacity(self.dataset.scenes.len());
        for scene in &self.dataset.scenes {
            let draw = match rng.as_mut() {
                Some(r) if self.uses_social(scene) => Some(T::lit(r.random::<f64>())),
                _ => None,
            };
            let scored = self.score_scene(scene, draw)?;
            for (det, row) in scene.detections.iter().zip(&scored.scores) {
                for (j, &score) in row.iter().enumerate() {
                    per_query[j].push(RankedEntry {
                        scene_id: scene.scene_id,
                        detection_id: det.detection_id,
                        score,
                    });
                }
            }
            diagnostics.push(scored.diagnostics);
        }
        let rankings = per_query
            .into_iter()
            .enumerate()
            .map(|(j, entries)| QueryRanking::sorted(CharacterId(j), entries))
            .collect();
        Ok(RunOutput {
            rankings,
            scenes: diagnostics,
        })
    }
}

fn rows<T: Real>(m: ndarray::Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Ranks every gallery detection for every query.
pub fn rank_dataset<T: Real>(
    dataset: &Dataset<T>,
    config: &RunConfig,
    head: Option<&LinearHead<T>>,
) -> Result<RunOutput<T>> {
    Ranker::new(dataset, *config, head)?.run()
}
