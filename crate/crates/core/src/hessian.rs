//! Discrete covariant Hessian of a vertex signal.
//!
//! Per vertex `v` with one-ring directions `z_j = p(n_j) - p(v)`:
//!
//! 1. increments `d_j = L(n_j) - L(v)`;
//! 2. the differential `dL` solves `dL . z_j = d_j` in the least-squares
//!    sense as an ambient 3-vector, then loses its normal component;
//! 3. covariant derivatives along `z_j` are the ambient differences
//!    `dL(n_j) - dL(v)` projected onto the tangent plane at `v`;
//! 4. the linear map `A` with `A z_j = (step 3)_j` is fitted by least squares
//!    and restricted to the tangent frame, `H_ab = e_a . A e_b`, then
//!    symmetrized.
//!
//! Every step is linear in the signal. The least-squares operator only
//! depends on geometry, so it is computed once per vertex and reused across
//! scale levels and channels.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3xX, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{TangentFrame, TriMesh};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Vertices with fewer usable neighbors get an invalid Hessian.
pub const MIN_STENCIL: usize = 3;

/// Least-squares solver for `Z^T x = d` at one vertex.
#[derive(Debug, Clone)]
pub struct Stencil {
    neighbors: Vec<usize>,
    /// Pseudo-inverse of `Z^T`, `3 x k`.
    pinv: Matrix3xX<f64>,
    rank: usize,
}

impl Stencil {
    pub fn new(mesh: &TriMesh, v: usize) -> Self {
        let neighbors = mesh.neighbors(v).to_vec();
        let p = mesh.position(v);
        let zt = DMatrix::from_fn(neighbors.len(), 3, |j, c| {
            mesh.position(neighbors[j])[c] - p[c]
        });
        let (pinv, rank) = pseudo_inverse(zt);
        Stencil {
            neighbors,
            pinv,
            rank,
        }
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Rank-revealing pseudo-inverse of a `k x 3` matrix.
fn pseudo_inverse(a: DMatrix<f64>) -> (Matrix3xX<f64>, usize) {
    let k = a.nrows();
    if k == 0 {
        return (Matrix3xX::zeros(0), 0);
    }
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let mut pinv = Matrix3xX::zeros(k);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > RANK_TOLERANCE * smax && s > 0.0 {
            rank += 1;
            // V_i (1/s) U_i^T
            let vi = vt.row(i).transpose();
            let ui = u.column(i);
            for j in 0..k {
                for r in 0..3 {
                    pinv[(r, j)] += vi[r] * ui[j] / s;
                }
            }
        }
    }
    (pinv, rank)
}

/// One-ring direction vectors `z_j` of `v`, in neighbor order.
pub fn neighbor_directions(mesh: &TriMesh, v: usize) -> Vec<Vector3<f64>> {
    let p = mesh.position(v);
    mesh.neighbors(v)
        .iter()
        .map(|&n| mesh.position(n) - p)
        .collect()
}

/// Step 1: increments `L(n_j) - L(v)`, one row per neighbor, one column per
/// channel. `level` is `V x m`.
pub fn directional_derivatives(mesh: &TriMesh, level: &DMatrix<f64>, v: usize) -> DMatrix<f64> {
    let ns = mesh.neighbors(v);
    DMatrix::from_fn(ns.len(), level.ncols(), |j, c| {
        level[(ns[j], c)] - level[(v, c)]
    })
}

/// Step 2 at a single vertex: one tangential covector per channel.
pub fn estimate_differential(
    mesh: &TriMesh,
    level: &DMatrix<f64>,
    v: usize,
) -> Result<Vec<Vector3<f64>>> {
    let frame = mesh.tangent_frame(v)?;
    let stencil = Stencil::new(mesh, v);
    differential_at(&stencil, &frame, level, v).ok_or(Error::RankDeficient {
        vertex: v,
        rank: stencil.rank,
    })
}

fn differential_at(
    stencil: &Stencil,
    frame: &TangentFrame,
    level: &DMatrix<f64>,
    v: usize,
) -> Option<Vec<Vector3<f64>>> {
    if stencil.rank < 2 {
        return None;
    }
    Some(
        (0..level.ncols())
            .map(|c| {
                let mut g = Vector3::zeros();
                for (j, &n) in stencil.neighbors.iter().enumerate() {
                    let d = level[(n, c)] - level[(v, c)];
                    g += stencil.pinv.column(j) * d;
                }
                frame.project(&g)
            })
            .collect(),
    )
}

/// Per-vertex, per-channel tangential covectors `dL`.
#[derive(Debug, Clone)]
pub struct DifferentialField {
    channels: usize,
    covectors: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl DifferentialField {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_valid(&self, v: usize) -> bool {
        self.valid[v]
    }

    pub fn get(&self, v: usize, c: usize) -> &Vector3<f64> {
        &self.covectors[v * self.channels + c]
    }
}

/// Symmetric `2 x 2` Hessians in each vertex's tangent frame.
///
/// Entries are stored as `(H11, H12, H22)`. Invalid vertices (too small or
/// rank-deficient stencil, or an invalid neighbor differential) carry zeros
/// and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianField {
    channels: usize,
    entries: Vec<[f64; 3]>,
    valid: Vec<bool>,
    frames: Vec<Option<TangentFrame>>,
}

impl HessianField {
    /// Builds a field directly from matrices, `matrices[v][c]`. Each matrix
    /// is symmetrized. Mainly for feeding the response functions by hand.
    pub fn from_matrices(matrices: &[Vec<Matrix2<f64>>]) -> Result<Self> {
        let channels = matrices.first().map_or(0, Vec::len);
        if channels == 0 || matrices.iter().any(|m| m.len() != channels) {
            return Err(Error::Argument(
                "every vertex needs the same non-zero channel count".into(),
            ));
        }
        let entries = matrices
            .iter()
            .flatten()
            .map(|h| [h[(0, 0)], 0.5 * (h[(0, 1)] + h[(1, 0)]), h[(1, 1)]])
            .collect();
        Ok(HessianField {
            channels,
            entries,
            valid: vec![true; matrices.len()],
            frames: vec![None; matrices.len()],
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.valid.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_valid(&self, v: usize) -> bool {
        self.valid[v]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn frame(&self, v: usize) -> Option<&TangentFrame> {
        self.frames[v].as_ref()
    }

    /// `(H11, H12, H22)` for vertex `v`, channel `c`.
    pub fn entries(&self, v: usize, c: usize) -> [f64; 3] {
        self.entries[v * self.channels + c]
    }

    pub fn get(&self, v: usize, c: usize) -> Matrix2<f64> {
        let [a, b, d] = self.entries(v, c);
        Matrix2::new(a, b, b, d)
    }

    /// Applies `f` to every stored entry triple.
    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        HessianField {
            entries: self.entries.iter().map(|&e| f(e)).collect(),
            ..self.clone()
        }
    }

    /// Writes `vertex,channel,H11,H12,H22` rows for valid vertices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("vertex,channel,H11,H12,H22\n");
        for v in (0..self.num_vertices()).filter(|&v| self.valid[v]) {
            for c in 0..self.channels {
                let [a, b, d] = self.entries(v, c);
                writeln!(
                    out,
                    "{v},{c},{},{},{}",
                    crate::fmt_f64(a),
                    crate::fmt_f64(b),
                    crate::fmt_f64(d)
                )
                .unwrap();
            }
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Precomputed stencils and frames for repeated Hessian estimation on one mesh.
#[derive(Debug, Clone)]
pub struct HessianEstimator {
    stencils: Vec<Stencil>,
    frames: Vec<Option<TangentFrame>>,
}

impl HessianEstimator {
    pub fn new(mesh: &TriMesh) -> Self {
        Self::with_frames(mesh, mesh.tangent_frames())
    }

    pub fn with_frames(mesh: &TriMesh, frames: Vec<Option<TangentFrame>>) -> Self {
        assert_eq!(
            frames.len(),
            mesh.num_vertices(),
            "one frame slot per vertex"
        );
        let stencils = (0..mesh.num_vertices())
            .into_par_iter()
            .map(|v| Stencil::new(mesh, v))
            .collect();
        HessianEstimator { stencils, frames }
    }

    pub fn num_vertices(&self) -> usize {
        self.stencils.len()
    }

    pub fn stencil(&self, v: usize) -> &Stencil {
        &self.stencils[v]
    }

    /// Steps 1-2 for every vertex.
    pub fn differential(&self, level: &DMatrix<f64>) -> DifferentialField {
        let m = level.ncols();
        let per_vertex: Vec<Option<Vec<Vector3<f64>>>> = (0..self.num_vertices())
            .into_par_iter()
            .map(|v| {
                let frame = self.frames[v].as_ref()?;
                differential_at(&self.stencils[v], frame, level, v)
            })
            .collect();
        let valid = per_vertex.iter().map(Option::is_some).collect();
        let covectors = per_vertex
            .into_iter()
            .flat_map(|d| d.unwrap_or_else(|| vec![Vector3::zeros(); m]))
            .collect();
        DifferentialField {
            channels: m,
            covectors,
            valid,
        }
    }

    /// Steps 1-4 for every vertex.
    pub fn hessian(&self, level: &DMatrix<f64>) -> HessianField {
        assert_eq!(
            level.nrows(),
            self.num_vertices(),
            "level rows must match the mesh"
        );
        let m = level.ncols();
        let dl = self.differential(level);
        let per_vertex: Vec<Option<Vec<[f64; 3]>>> = (0..self.num_vertices())
            .into_par_iter()
            .map(|v| self.hessian_at(&dl, v))
            .collect();
        let valid = per_vertex.iter().map(Option::is_some).collect();
        let entries = per_vertex
            .into_iter()
            .flat_map(|h| h.unwrap_or_else(|| vec![[0.0; 3]; m]))
            .collect();
        HessianField {
            channels: m,
            entries,
            valid,
            frames: self.frames.clone(),
        }
    }

    fn hessian_at(&self, dl: &DifferentialField, v: usize) -> Option<Vec<[f64; 3]>> {
        let stencil = &self.stencils[v];
        let frame = self.frames[v].as_ref()?;
        if stencil.neighbors.len() < MIN_STENCIL
            || stencil.rank < 2
            || !dl.is_valid(v)
            || stencil.neighbors.iter().any(|&n| !dl.is_valid(n))
        {
            return None;
        }
        Some(
            (0..dl.channels)
                .map(|c| {
                    let base = dl.get(v, c);
                    // A^T = pinv(Z^T) D, rows of D are the projected differences
                    let mut at = Matrix3::zeros();
                    for (j, &n) in stencil.neighbors.iter().enumerate() {
                        let delta = frame.project(&(dl.get(n, c) - base));
                        at += stencil.pinv.column(j) * delta.transpose();
                    }
                    let a = at.transpose();
                    let e = [frame.e1, frame.e2];
                    let h = |i: usize, j: usize| e[i].dot(&(a * e[j]));
                    [h(0, 0), 0.5 * (h(0, 1) + h(1, 0)), h(1, 1)]
                })
                .collect(),
        )
    }
}

/// Steps 1-4 on a single level with caller-supplied frames.
pub fn covariant_hessian(
    mesh: &TriMesh,
    level: &DMatrix<f64>,
    frames: &[Option<TangentFrame>],
) -> HessianField {
    HessianEstimator::with_frames(mesh, frames.to_vec()).hessian(level)
}
