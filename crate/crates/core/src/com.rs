//! Co-occurrence mining: query/gallery distances become per-gallery identity
//! distributions, and the most confident gallery becomes the scene anchor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{squared_l2, Real};

/// `G x Q` squared euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix<T: Real = f64> {
    pub values: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T: Real = f64> {
    pub values: Array2<T>,
    pub mean_distance: T,
    pub std_distance: T,
}

/// Row-stochastic `G x Q` identity probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityProbMatrix<T: Real = f64> {
    pub values: Array2<T>,
}

impl<T: Real> IdentityProbMatrix<T> {
    pub fn num_galleries(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_queries(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSelection<T: Real = f64> {
    pub anchor_gallery: usize,
    pub anchor_query: usize,
    pub p_a: T,
}

pub fn pairwise_distance<T: Real>(galleries: &[&[T]], queries: &[&[T]]) -> Result<DistanceMatrix<T>> {
    if galleries.is_empty() || queries.is_empty() {
        return Err(Error::InvalidInput(
            "distance matrix needs at least one gallery and one query".into(),
        ));
    }
    let d = queries[0].len();
    for q in queries {
        check_dim("query embedding", d, q.len())?;
    }
    for g in galleries {
        check_dim("gallery embedding", d, g.len())?;
    }
    let values = Array2::from_shape_fn((galleries.len(), queries.len()), |(i, j)| {
        squared_l2(galleries[i], queries[j])
    });
    Ok(DistanceMatrix { values })
}

/// `s = (mean - d) / std` with population statistics pooled over every entry.
/// A zero spread yields an all-zero similarity matrix.
pub fn standardize_similarity<T: Real>(d: &DistanceMatrix<T>) -> SimilarityMatrix<T> {
    let n = T::from_usize(d.values.len()).expect("entry count fits scalar");
    let mean = d.values.iter().copied().sum::<T>() / n;
    let var = d.values.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let values = if std > T::zero() {
        d.values.mapv(|x| (mean - x) / std)
    } else {
        Array2::zeros(d.values.raw_dim())
    };
    SimilarityMatrix {
        values,
        mean_distance: mean,
        std_distance: std,
    }
}

/// Row-wise softmax over queries, stabilized by subtracting the row maximum.
pub fn identity_probabilities<T: Real>(s: &SimilarityMatrix<T>) -> IdentityProbMatrix<T> {
    let mut values = s.values.clone();
    for mut row in values.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.iter().copied().sum::<T>();
        row.mapv_inplace(|x| x / total);
    }
    IdentityProbMatrix { values }
}

/// Global argmax; ties go to the smallest gallery index, then smallest query index.
pub fn select_anchor<T: Real>(p: &IdentityProbMatrix<T>) -> AnchorSelection<T> {
    let mut best = AnchorSelection {
        anchor_gallery: 0,
        anchor_query: 0,
        p_a: T::neg_infinity(),
    };
    for ((i, j), &v) in p.values.indexed_iter() {
        if v > best.p_a {
            best = AnchorSelection {
                anchor_gallery: i,
                anchor_query: j,
                p_a: v,
            };
        }
    }
    best
}

/// Distances, standardized similarities, identity probabilities and anchor for one scene.
pub fn mine<T: Real>(galleries: &[&[T]], queries: &[&[T]]) -> Result<(IdentityProbMatrix<T>, AnchorSelection<T>)> {
    let d = pairwise_distance(galleries, queries)?;
    let p = identity_probabilities(&standardize_similarity(&d));
    let anchor = select_anchor(&p);
    Ok((p, anchor))
}
