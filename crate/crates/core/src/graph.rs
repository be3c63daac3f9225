//! Landmark sets, graph topology over landmarks, and 2D affine transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// K ordered (x, y) landmarks in normalized image coordinates: (0,0) is the
/// top-left corner, (1,1) the bottom-right. Vertex i keeps one semantic
/// identity across a dataset; points may leave the unit square while a shape
/// evolves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        LandmarkSet { points }
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Flattened [K,2] tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| [p[0], p[1]]).collect();
        Tensor::new(vec![self.points.len(), 2], data).expect("k*2 elements")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 || s[1] != 2 {
            return Err(Error::invalid(format!("landmark tensor must be [k,2], got {s:?}")));
        }
        let points = t.data().chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok(LandmarkSet { points })
    }

    /// Axis-aligned bounding box (min, max); None for an empty set.
    pub fn bounding_box(&self) -> Option<([f64; 2], [f64; 2])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            lo[0] = lo[0].min(p[0]);
            lo[1] = lo[1].min(p[1]);
            hi[0] = hi[0].max(p[0]);
            hi[1] = hi[1].max(p[1]);
        }
        Some((lo, hi))
    }
}

/// Per-vertex arithmetic mean of landmark configurations; the starting shape
/// for graph evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeanShape(pub LandmarkSet);

impl MeanShape {
    pub fn landmarks(&self) -> &LandmarkSet {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.k()
    }
}

/// Per-vertex mean over the given sets.
///
/// Summation runs in value-sorted order per coordinate, so any permutation of
/// the input list produces bit-identical output.
pub fn compute_mean_shape(sets: &[LandmarkSet]) -> Result<MeanShape> {
    let first = sets.first().ok_or_else(|| Error::invalid("compute_mean_shape: empty list"))?;
    let k = first.k();
    for s in sets {
        if s.k() != k {
            return Err(Error::invalid(format!(
                "compute_mean_shape: mixed vertex counts {k} vs {}",
                s.k()
            )));
        }
    }
    let n = sets.len() as f64;
    let mut points = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(sets.len());
    for i in 0..k {
        let mut mean = [0.0; 2];
        for (c, m) in mean.iter_mut().enumerate() {
            vals.clear();
            vals.extend(sets.iter().map(|s| s.get(i)[c]));
            vals.sort_by(f64::total_cmp);
            *m = vals.iter().sum::<f64>() / n;
        }
        points.push(mean);
    }
    Ok(MeanShape(LandmarkSet::new(points)))
}

/// Undirected, connected graph over K vertices with no self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    k: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl GraphTopology {
    pub fn new(k: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("topology needs at least one vertex"));
        }
        let mut neighbors = vec![Vec::new(); k];
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on vertex {a}")));
            }
            if a >= k || b >= k {
                return Err(Error::invalid(format!("edge ({a},{b}) out of range for k={k}")));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if neighbors[lo].contains(&hi) {
                continue;
            }
            neighbors[lo].push(hi);
            neighbors[hi].push(lo);
            normalized.push((lo, hi));
        }
        for n in neighbors.iter_mut() {
            n.sort_unstable();
        }
        let topo = GraphTopology { k, edges: normalized, neighbors };
        if !topo.is_connected() {
            return Err(Error::invalid("topology must be connected"));
        }
        Ok(topo)
    }

    /// Path graph 0-1-...-(k-1); the default landmark topology.
    pub fn chain(k: usize) -> Result<Self> {
        let edges = (1..k).map(|i| (i - 1, i)).collect();
        GraphTopology::new(k, edges)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &n in &self.neighbors[v] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.k
    }

    /// [K,K] matrix whose row i holds 1/deg(i) at i's neighbors: multiplying
    /// feature rows by it takes the mean over neighbors.
    pub fn normalized_adjacency(&self) -> Tensor {
        let k = self.k;
        let mut data = vec![0.0; k * k];
        for (i, ns) in self.neighbors.iter().enumerate() {
            if ns.is_empty() {
                continue;
            }
            let w = 1.0 / ns.len() as f64;
            for &j in ns {
                data[i * k + j] = w;
            }
        }
        Tensor::new(vec![k, k], data).expect("k*k elements")
    }
}

/// 2x3 affine transform; (x,y) maps to
/// (a11*x + a12*y + tx, a21*x + a22*y + ty).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams { a11: 1.0, a12: 0.0, a21: 0.0, a22: 1.0, tx: 0.0, ty: 0.0 }
    }

    /// Rotation by `angle_rad` and uniform `scale` about `center`, then
    /// translation: p -> scale * R * (p - center) + center + translation.
    pub fn similarity(angle_rad: f64, scale: f64, center: [f64; 2], translation: [f64; 2]) -> Self {
        let (s, c) = angle_rad.sin_cos();
        let a11 = scale * c;
        let a12 = -scale * s;
        let a21 = scale * s;
        let a22 = scale * c;
        AffineParams {
            a11,
            a12,
            a21,
            a22,
            tx: center[0] - (a11 * center[0] + a12 * center[1]) + translation[0],
            ty: center[1] - (a21 * center[0] + a22 * center[1]) + translation[1],
        }
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * p[0] + self.a12 * p[1] + self.tx,
            self.a21 * p[0] + self.a22 * p[1] + self.ty,
        ]
    }

    /// Inverse transform; None when the linear part is singular.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.a11 * self.a22 - self.a12 * self.a21;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let b11 = self.a22 / det;
        let b12 = -self.a12 / det;
        let b21 = -self.a21 / det;
        let b22 = self.a11 / det;
        Some(AffineParams {
            a11: b11,
            a12: b12,
            a21: b21,
            a22: b22,
            tx: -(b11 * self.tx + b12 * self.ty),
            ty: -(b21 * self.tx + b22 * self.ty),
        })
    }
}

/// Transforms every vertex by `a`.
pub fn apply_affine(shape: &LandmarkSet, a: &AffineParams) -> LandmarkSet {
    LandmarkSet::new(shape.points().iter().map(|&p| a.apply_point(p)).collect())
}
