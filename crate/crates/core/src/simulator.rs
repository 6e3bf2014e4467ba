//! Synthetic movies with known ground truth: a random social graph, identity
//! prototypes, pairwise scenes biased toward socially linked characters, noisy
//! detections (some hard), and relation-bearing scene context.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CharacterId, ContextFeatures, Dataset, Dims, Embedding, GalleryDetection, Query, RelationType, Scene, SocialGraph,
};
use crate::scalar::Real;

const GRAPH_STREAM: u64 = 1;
const MOVIE_STREAM: u64 = 2;
const MAX_PROTOTYPE_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub num_characters: usize,
    pub embedding_dim: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub num_scenes: usize,
    /// Probability that a given character pair is socially linked.
    pub relation_density: f64,
    /// Probability that a scene shows a socially linked pair.
    pub social_cooccurrence_bias: f64,
    pub noise_easy: f64,
    pub noise_hard: f64,
    pub hard_fraction: f64,
    pub context_noise: f64,
    /// Per-coordinate standard deviation of identity prototypes.
    pub prototype_scale: f64,
    pub min_prototype_separation: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            num_characters: 50,
            embedding_dim: 4,
            visual_dim: 8,
            textual_dim: 8,
            num_scenes: 200,
            relation_density: 0.1214,
            social_cooccurrence_bias: 0.4427,
            noise_easy: 0.2466,
            noise_hard: 0.317,
            hard_fraction: 0.3,
            context_noise: 0.2063,
            prototype_scale: 0.507,
            min_prototype_separation: 0.1,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_characters < 2 {
            return fail("num_characters must be at least 2");
        }
        if self.num_scenes < 1 {
            return fail("num_scenes must be at least 1");
        }
        if self.embedding_dim < 1 {
            return fail("embedding_dim must be positive");
        }
        if self.visual_dim < RelationType::COUNT || self.textual_dim < RelationType::COUNT {
            return fail("visual_dim and textual_dim must each hold the 5 relation slots");
        }
        if !(0.0..=1.0).contains(&self.relation_density) {
            return fail("relation_density must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.social_cooccurrence_bias) {
            return fail("social_cooccurrence_bias must lie in [0, 1]");
        }
        if !(self.noise_easy >= 0.0 && self.noise_easy.is_finite()) {
            return fail("noise_easy must be non-negative");
        }
        if !(self.noise_hard >= self.noise_easy && self.noise_hard.is_finite()) {
            return fail("noise_hard must be at least noise_easy");
        }
        if !(0.0..1.0).contains(&self.hard_fraction) {
            return fail("hard_fraction must lie in [0, 1)");
        }
        if !(self.context_noise >= 0.0 && self.context_noise.is_finite()) {
            return fail("context_noise must be non-negative");
        }
        if !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return fail("prototype_scale must be positive");
        }
        if !(self.min_prototype_separation > 0.0) {
            return fail("min_prototype_separation must be positive");
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims {
            embedding: self.embedding_dim,
            visual: self.visual_dim,
            textual: self.textual_dim,
        }
    }
}

/// Hidden state behind a generated movie.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T: Real = f64> {
    pub prototypes: Vec<Vec<T>>,
    /// Relation of the scene's character pair, `None` when unrelated.
    pub scene_relations: Vec<Option<RelationType>>,
    /// `hard[scene][detection]`.
    pub hard: Vec<Vec<bool>>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Links each unordered pair independently with probability `relation_density`;
/// relation types are uniform over the five categories.
pub fn generate_social_graph(config: &SimulatorConfig) -> Result<SocialGraph> {
    config.validate()?;
    let mut rng = rng_for(config.seed, GRAPH_STREAM);
    let mut g = SocialGraph::new(config.num_characters);
    for a in 0..config.num_characters {
        for b in (a + 1)..config.num_characters {
            // draw both values unconditionally so the stream layout does not
            // depend on the density
            let linked = rng.random::<f64>() < config.relation_density;
            let r = RelationType::ALL[rng.random_range(0..RelationType::COUNT)];
            if linked {
                g.add_edge(a, b, r);
            }
        }
    }
    Ok(g)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn draw_prototypes(config: &SimulatorConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(config.num_characters);
    let min_sq = config.min_prototype_separation * config.min_prototype_separation;
    for c in 0..config.num_characters {
        let mut accepted = None;
        for _ in 0..MAX_PROTOTYPE_RETRIES {
            let cand = gaussian_vec(rng, config.embedding_dim, config.prototype_scale);
            let ok = out
                .iter()
                .all(|p| p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= min_sq);
            if ok {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(p) => out.push(p),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "could not place prototype {c} at separation {} after {MAX_PROTOTYPE_RETRIES} draws",
                    config.min_prototype_separation
                )))
            }
        }
    }
    Ok(out)
}

fn to_t<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn context_half(rng: &mut ChaCha8Rng, dim: usize, relation: Option<RelationType>, noise: f64) -> Vec<f64> {
    let mut v = gaussian_vec(rng, dim, noise);
    if let Some(r) = relation {
        v[r.index()] += 1.0;
    }
    v
}

/// Generates a dataset together with its hidden ground truth.
pub fn generate_movie<T: Real>(config: &SimulatorConfig) -> Result<(Dataset<T>, GroundTruth<T>)> {
    let graph = generate_social_graph(config)?;
    let mut rng = rng_for(config.seed, MOVIE_STREAM);
    let prototypes = draw_prototypes(config, &mut rng)?;
    let q = config.num_characters;

    let mut non_edges = Vec::new();
    for a in 0..q {
        for b in (a + 1)..q {
            if graph.relation_between(CharacterId(a), CharacterId(b)).is_none() {
                non_edges.push((a, b));
            }
        }
    }

    let queries = prototypes
        .iter()
        .enumerate()
        .map(|(i, p)| Query {
            id: CharacterId(i),
            embedding: Embedding(to_t(p)),
        })
        .collect();

    let mut scenes = Vec::with_capacity(config.num_scenes);
    let mut scene_relations = Vec::with_capacity(config.num_scenes);
    let mut hard_flags = Vec::with_capacity(config.num_scenes);
    for sid in 0..config.num_scenes {
        let want_social = rng.random::<f64>() < config.social_cooccurrence_bias;
        let use_edge = !graph.edges.is_empty() && (want_social || non_edges.is_empty());
        let (mut cast, relation) = if use_edge {
            let e = graph.edges.choose(&mut rng).expect("graph has an edge");
            (vec![e.a.0, e.b.0], Some(e.relation))
        } else {
            let &(a, b) = non_edges.choose(&mut rng).expect("graph has a non-edge");
            (vec![a, b], None)
        };
        cast.shuffle(&mut rng);

        let mut hard: Vec<bool> = cast
            .iter()
            .map(|_| rng.random::<f64>() < config.hard_fraction)
            .collect();
        if hard.iter().all(|&h| h) {
            let keep = rng.random_range(0..hard.len());
            hard[keep] = false;
        }

        let detections = cast
            .iter()
            .zip(&hard)
            .enumerate()
            .map(|(i, (&who, &is_hard))| {
                let std = if is_hard { config.noise_hard } else { config.noise_easy };
                let noise = gaussian_vec(&mut rng, config.embedding_dim, std);
                let emb: Vec<f64> = prototypes[who].iter().zip(&noise).map(|(p, n)| p + n).collect();
                GalleryDetection {
                    detection_id: i as u64,
                    embedding: Embedding(to_t(&emb)),
                    true_id: CharacterId(who),
                }
            })
            .collect();

        let visual = context_half(&mut rng, config.visual_dim, relation, config.context_noise);
        let textual = context_half(&mut rng, config.textual_dim, relation, config.context_noise);
        let mut labels = vec![0u8; RelationType::COUNT];
        if let Some(r) = relation {
            labels[r.index()] = 1;
        }

        scenes.push(Scene {
            scene_id: sid as u64,
            detections,
            context: ContextFeatures::new(to_t(&visual), to_t(&textual)),
            relation_labels: Some(labels),
            relation_prior: None,
        });
        scene_relations.push(relation);
        hard_flags.push(hard);
    }

    let dataset = Dataset {
        social_graph: graph,
        queries,
        scenes,
        dims: config.dims(),
    };
    let truth = GroundTruth {
        prototypes: prototypes.iter().map(|p| to_t(p)).collect(),
        scene_relations,
        hard: hard_flags,
    };
    Ok((dataset, truth))
}

/// The two hand-built case scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStudy {
    /// Clear anchor plus a back-facing partner; a couple relation explains the partner.
    Case1,
    /// Two clear characters plus a hidden third; friend and couple relations explain it.
    Case2,
}

fn basis(dim: usize, weights: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(i, w) in weights {
        v[i] += w;
    }
    v
}

/// Builds a case-study dataset with a precomputed relation prior on its scene.
pub fn build_case_fixture<T: Real>(case: CaseStudy) -> Dataset<T> {
    let q = 5;
    let d = 6;
    let (graph, detections, prior, relation) = match case {
        CaseStudy::Case1 => {
            let mut g = SocialGraph::new(q);
            g.add_edge(1, 3, RelationType::Couple)
                .add_edge(2, 3, RelationType::Working)
                .add_edge(0, 2, RelationType::Friend)
                .add_edge(0, 4, RelationType::Kinship);
            let dets = vec![
                // camera focuses on q3: the anchor
                (basis(d, &[(3, 1.0)]), 3),
                // back view of q1: weak evidence, visually closest to q0
                (
                    basis(d, &[(0, 0.3), (1, 0.25), (2, 0.1), (3, -0.3), (4, 0.25), (5, 0.65)]),
                    1,
                ),
            ];
            (g, dets, [0.05, 0.05, 0.05, 0.1, 0.85], RelationType::Couple)
        }
        CaseStudy::Case2 => {
            let mut g = SocialGraph::new(q);
            g.add_edge(1, 4, RelationType::Friend)
                .add_edge(1, 2, RelationType::Couple)
                .add_edge(0, 3, RelationType::Hostile)
                .add_edge(2, 3, RelationType::Working);
            let dets = vec![
                (basis(d, &[(1, 1.0)]), 1),
                (basis(d, &[(2, 0.9)]), 2),
                // hidden face: weak, visually closest to q3
                (
                    basis(d, &[(0, 0.1), (1, -0.05), (2, 0.32), (3, 0.34), (4, 0.33), (5, 0.8)]),
                    4,
                ),
            ];
            (g, dets, [0.05, 0.05, 0.05, 0.8, 0.7], RelationType::Friend)
        }
    };
    let queries = (0..q)
        .map(|i| Query {
            id: CharacterId(i),
            embedding: Embedding(to_t(&basis(d, &[(i, 1.0)]))),
        })
        .collect();
    let mut labels = vec![0u8; RelationType::COUNT];
    labels[relation.index()] = 1;
    if case == CaseStudy::Case2 {
        labels[RelationType::Couple.index()] = 1;
    }
    let scene = Scene {
        scene_id: 0,
        detections: detections
            .into_iter()
            .enumerate()
            .map(|(i, (e, who))| GalleryDetection {
                detection_id: i as u64,
                embedding: Embedding(to_t(&e)),
                true_id: CharacterId(who),
            })
            .collect(),
        context: ContextFeatures::absent(RelationType::COUNT, RelationType::COUNT),
        relation_labels: Some(labels),
        relation_prior: Some(to_t(&prior)),
    };
    Dataset {
        social_graph: graph,
        queries,
        scenes: vec![scene],
        dims: Dims {
            embedding: d,
            visual: RelationType::COUNT,
            textual: RelationType::COUNT,
        },
    }
}
