//! Classical MDS: distance matrix -> planar points via double centering and
//! the top two eigenpairs, plus covariance-axis alignment of a point cloud
//! to the key grid.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};
use crate::metric_opt::DistanceMatrix;

/// Planar coordinates per letter. MDS output is centered at the origin;
/// `stress` is the relative Frobenius gap between the input distances and
/// the distances the points reproduce (0 for exactly Euclidean inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub alphabet: Alphabet,
    pub points: Vec<[f64; 2]>,
    pub stress: f64,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pairwise_distance(&self, i: usize, j: usize) -> f64 {
        let dx = self.points[i][0] - self.points[j][0];
        let dy = self.points[i][1] - self.points[j][1];
        dx.hypot(dy)
    }
}

/// Flip a vector so its largest-magnitude component is positive; ties go to
/// the lowest index. Makes eigenvector signs reproducible across backends.
fn canonical_sign(v: &mut [f64]) {
    let mut lead = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[lead].abs() {
            lead = i;
        }
    }
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Classical MDS onto the plane. Negative eigenvalues (non-Euclidean input,
/// the typical case for an optimized metric) are clamped to zero for the
/// coordinate scaling and show up in the stress diagnostic instead.
pub fn mds_embed(d: &DistanceMatrix) -> Result<Embedding2D> {
    let n = d.len();
    if n < 3 {
        return Err(Error::invalid("MDS needs at least 3 points"));
    }

    // G = -1/2 J (d o d) J with J = I - (1/n) 1 1^T.
    let squared = DMatrix::from_fn(n, n, |i, j| d.dist[(i, j)] * d.dist[(i, j)]);
    let nf = n as f64;
    let j = DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            1.0 - 1.0 / nf
        } else {
            -1.0 / nf
        }
    });
    let gram = -0.5 * (&j * squared * &j);
    // Symmetrize against round-off before the eigensolve.
    let gram = 0.5 * (&gram + gram.transpose());

    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let (top, second) = (order[0], order[1]);
    if eigen.eigenvalues[top] <= 0.0 && eigen.eigenvalues[second] <= 0.0 {
        return Err(Error::DegenerateMetric);
    }

    let mut points = vec![[0.0; 2]; n];
    for (axis, &idx) in [top, second].iter().enumerate() {
        let scale = eigen.eigenvalues[idx].max(0.0).sqrt();
        let mut column: Vec<f64> = (0..n).map(|r| eigen.eigenvectors[(r, idx)]).collect();
        canonical_sign(&mut column);
        for (r, &v) in column.iter().enumerate() {
            points[r][axis] = v * scale;
        }
    }

    // Re-center exactly; double centering already leaves the centroid at the
    // origin up to round-off.
    center(&mut points);

    let stress = embedding_stress(d, &points);
    Ok(Embedding2D {
        alphabet: d.alphabet.clone(),
        points,
        stress,
    })
}

/// Relative Frobenius error between the input metric and the distances the
/// embedding reproduces.
pub fn embedding_stress(d: &DistanceMatrix, points: &[[f64; 2]]) -> f64 {
    let n = d.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let out = dx.hypot(dy);
            num += (out - d.dist[(i, j)]).powi(2);
            den += d.dist[(i, j)].powi(2);
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

fn center(points: &mut [[f64; 2]]) {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in points.iter_mut() {
        p[0] -= cx;
        p[1] -= cy;
    }
}

/// 2x2 covariance of a centered cloud, with 1/n weights.
fn covariance(points: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = points.len() as f64;
    let mut xx = 0.0;
    let mut xy = 0.0;
    let mut yy = 0.0;
    for p in points {
        xx += p[0] * p[0];
        xy += p[0] * p[1];
        yy += p[1] * p[1];
    }
    [[xx / n, xy / n], [xy / n, yy / n]]
}

/// Eigen-decomposition of a symmetric 2x2 matrix; returns (eigenvalues
/// descending, unit eigenvectors as columns).
pub(crate) fn symmetric_eigen_2x2(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let trace = a + c;
    let det = a * c - b * b;
    let gap = ((trace * trace / 4.0 - det).max(0.0)).sqrt();
    let l1 = trace / 2.0 + gap;
    let l2 = trace / 2.0 - gap;
    let v1 = if b.abs() > 1e-300 {
        [l1 - c, b]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let norm = v1[0].hypot(v1[1]);
    let v1 = [v1[0] / norm, v1[1] / norm];
    let v2 = [-v1[1], v1[0]];
    ([l1, l2], [v1, v2])
}

/// Center, scale to unit root-mean-square radius, and rotate so the
/// covariance is diagonal with the larger variance on the horizontal axis.
/// A similarity transform: pairwise distance ratios are preserved.
pub fn align_to_grid(emb: &Embedding2D) -> Result<Embedding2D> {
    let mut points = emb.points.clone();
    if points.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    center(&mut points);
    let rms = (points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>()
        / points.len() as f64)
        .sqrt();
    if rms <= 1e-12 {
        return Err(Error::ZeroVariance);
    }
    for p in points.iter_mut() {
        p[0] /= rms;
        p[1] /= rms;
    }

    let cov = covariance(&points);
    let (_, vectors) = symmetric_eigen_2x2(cov);
    let mut major = vectors[0];
    let mut minor = vectors[1];
    canonical_sign(&mut major);
    canonical_sign(&mut minor);
    let rotated: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            [
                p[0] * major[0] + p[1] * major[1],
                p[0] * minor[0] + p[1] * minor[1],
            ]
        })
        .collect();

    Ok(Embedding2D {
        alphabet: emb.alphabet.clone(),
        points: rotated,
        stress: emb.stress,
    })
}

/// Mirror the cloud across the vertical axis. A reflection is an isometry
/// the covariance alignment cannot reach by rotation alone, so the layout
/// stage tries both candidates.
pub fn flip_horizontal(emb: &Embedding2D) -> Embedding2D {
    Embedding2D {
        alphabet: emb.alphabet.clone(),
        points: emb.points.iter().map(|p| [-p[0], p[1]]).collect(),
        stress: emb.stress,
    }
}
