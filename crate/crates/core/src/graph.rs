//! Social context graph over `[queries..., galleries...]`, parameter-free
//! propagation with the symmetric normalized adjacency, and adaptive fusion of
//! propagated (social) and raw (visual) gallery features.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::com::{AnchorSelection, IdentityProbMatrix};
use crate::drwm::{RelationPrior, WeightedEdge};
use crate::error::{check_dim, Error, Result};
use crate::scalar::{squared_l2, Real};

/// Guard on the prior mass in the social weight denominator.
pub const PRIOR_MASS_EPS: f64 = 1e-8;

/// Default propagation depth.
pub const DEFAULT_LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SocialContextGraph<T: Real = f64> {
    pub num_queries: usize,
    pub num_galleries: usize,
    /// Symmetric `(Q + G) x (Q + G)` weights, unit self-loops on the diagonal.
    pub adjacency: Array2<T>,
    pub degrees: Vec<T>,
    pub anchor: AnchorSelection<T>,
}

impl<T: Real> SocialContextGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.num_queries + self.num_galleries
    }

    pub fn gallery_node(&self, gallery: usize) -> usize {
        self.num_queries + gallery
    }
}

/// Wires one scene: weighted social edges among queries, and every gallery
/// linked to every query with the anchor gallery's identity distribution.
pub fn build_graph<T: Real>(
    social_edges: &[WeightedEdge<T>],
    num_galleries: usize,
    p: &IdentityProbMatrix<T>,
    anchor: &AnchorSelection<T>,
    num_queries: usize,
) -> Result<SocialContextGraph<T>> {
    if num_galleries < 2 {
        return Err(Error::SocialBypass {
            detections: num_galleries,
        });
    }
    check_dim("identity matrix rows", num_galleries, p.num_galleries())?;
    check_dim("identity matrix columns", num_queries, p.num_queries())?;
    if anchor.anchor_gallery >= num_galleries || anchor.anchor_query >= num_queries {
        return Err(Error::InvalidInput("anchor outside identity matrix".into()));
    }

    let n = num_queries + num_galleries;
    let mut adjacency = Array2::<T>::zeros((n, n));
    for e in social_edges {
        let (a, b) = (e.a.index(), e.b.index());
        if a >= num_queries || b >= num_queries || a == b {
            return Err(Error::InvalidInput(format!(
                "social edge ({a}, {b}) is not a valid query pair"
            )));
        }
        adjacency[[a, b]] = e.weight;
        adjacency[[b, a]] = e.weight;
    }
    let anchor_row = p.values.row(anchor.anchor_gallery);
    for g in 0..num_galleries {
        let node = num_queries + g;
        for (j, &w) in anchor_row.iter().enumerate() {
            adjacency[[node, j]] = w;
            adjacency[[j, node]] = w;
        }
    }
    for i in 0..n {
        adjacency[[i, i]] = T::one();
    }
    let degrees = adjacency.rows().into_iter().map(|r| r.sum()).collect();
    Ok(SocialContextGraph {
        num_queries,
        num_galleries,
        adjacency,
        degrees,
        anchor: *anchor,
    })
}

/// `D^{-1/2} A D^{-1/2}`.
pub fn normalize<T: Real>(graph: &SocialContextGraph<T>) -> Array2<T> {
    normalize_adjacency(graph.adjacency.view())
}

pub fn normalize_adjacency<T: Real>(adjacency: ArrayView2<'_, T>) -> Array2<T> {
    let degrees: Vec<T> = adjacency.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn(adjacency.raw_dim(), |(u, v)| {
        adjacency[[u, v]] / (degrees[u] * degrees[v]).sqrt()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures<T: Real = f64> {
    /// `(Q + G) x d`, queries first.
    pub h: Array2<T>,
    pub layer: usize,
}

impl<T: Real> NodeFeatures<T> {
    /// Layer-0 features: raw query embeddings followed by gallery embeddings.
    pub fn initial(queries: &[&[T]], galleries: &[&[T]]) -> Result<Self> {
        let d = queries.first().or(galleries.first()).map(|r| r.len()).unwrap_or(0);
        let rows: Vec<&[T]> = queries.iter().chain(galleries).copied().collect();
        let mut h = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            check_dim("node feature", d, r.len())?;
            h.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
        }
        Ok(Self { h, layer: 0 })
    }
}

/// Applies `h <- norm · h` `layers` times. No weights, no nonlinearity.
pub fn propagate<T: Real>(norm: &Array2<T>, features: &NodeFeatures<T>, layers: usize) -> Result<NodeFeatures<T>> {
    if layers == 0 {
        return Err(Error::InvalidInput("propagation needs at least one layer".into()));
    }
    check_dim("propagation matrix", norm.nrows(), features.h.nrows())?;
    check_dim("propagation matrix", norm.ncols(), features.h.nrows())?;
    let mut h = features.h.clone();
    for _ in 0..layers {
        h = norm.dot(&h);
    }
    Ok(NodeFeatures {
        h,
        layer: features.layer + layers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedGallery<T: Real = f64> {
    /// `G x d`.
    pub h_f: Array2<T>,
    pub w_s: T,
}

/// `p_a / max(Σ prior, ε)`, clamped to `[0, 1]`.
pub fn social_weight<T: Real>(p_a: T, prior: &RelationPrior<T>) -> T {
    let mass = prior.total().max(T::lit(PRIOR_MASS_EPS));
    (p_a / mass).max(T::zero()).min(T::one())
}

/// `h_f = w_s · h2 + (1 - w_s) · h0` with a caller-supplied weight.
pub fn fuse_with_weight<T: Real>(h0: &Array2<T>, h2: &Array2<T>, w_s: T) -> Result<FusedGallery<T>> {
    if h0.dim() != h2.dim() {
        return Err(Error::InvalidInput(format!(
            "fusion inputs differ in shape: {:?} vs {:?}",
            h0.dim(),
            h2.dim()
        )));
    }
    let w_s = w_s.max(T::zero()).min(T::one());
    let keep = T::one() - w_s;
    let mut h_f = h0.clone();
    h_f.zip_mut_with(h2, |a, &b| *a = w_s * b + keep * *a);
    Ok(FusedGallery { h_f, w_s })
}

pub fn fuse<T: Real>(h0: &Array2<T>, h2: &Array2<T>, p_a: T, prior: &RelationPrior<T>) -> Result<FusedGallery<T>> {
    fuse_with_weight(h0, h2, social_weight(p_a, prior))
}

/// Gallery rows of a node feature matrix.
pub fn gallery_rows<T: Real>(features: &NodeFeatures<T>, num_queries: usize) -> Array2<T> {
    features.h.slice(s![num_queries.., ..]).to_owned()
}

/// `G x Q` scores `-||h_q - h_f||²`; higher is better.
pub fn rank_scene<T: Real>(queries: &[&[T]], fused: &FusedGallery<T>) -> Result<Array2<T>> {
    let d = fused.h_f.ncols();
    for q in queries {
        check_dim("query embedding", d, q.len())?;
    }
    let mut scores = Array2::zeros((fused.h_f.nrows(), queries.len()));
    for (i, row) in fused.h_f.rows().into_iter().enumerate() {
        let g = row.to_vec();
        for (j, q) in queries.iter().enumerate() {
            scores[[i, j]] = -squared_l2(q, &g);
        }
    }
    Ok(scores)
}

/// Per-scene diagnostics reported by the runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary<T: Real = f64> {
    pub anchor: AnchorSelection<T>,
    pub w_s: T,
}
