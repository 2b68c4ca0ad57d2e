//! Triangle meshes, tangent frames and the cotangent Laplace-Beltrami operator.

mod io;

pub use io::{
    load_mesh, read_off, read_ply, read_signal_csv, write_off, write_ply, write_signal_csv,
};

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Faces with area at or below this multiple of the squared bounding-box
/// diagonal are rejected as degenerate.
pub const DEGENERATE_AREA_FACTOR: f64 = 1e-12;

/// Cotangent weights are clamped to `[-COT_CLAMP, COT_CLAMP]`.
pub const COT_CLAMP: f64 = 1e6;

/// A triangulated 2-manifold, possibly with boundary.
///
/// Construction validates indices, repeated vertices, non-manifold edges and
/// degenerate faces, then caches vertex adjacency. The mesh is immutable
/// afterwards.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    num_edges: usize,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if nv == 0 {
            return Err(Error::Topology("mesh has no vertices".into()));
        }
        if faces.is_empty() {
            return Err(Error::Topology("mesh has no faces".into()));
        }
        if let Some(v) = vertices
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::Topology(format!(
                "vertex {v} has a non-finite coordinate"
            )));
        }

        for (f, tri) in faces.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= nv) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {i}, but the mesh has {nv} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!(
                    "face {f} repeats a vertex: ({}, {}, {})",
                    tri[0], tri[1], tri[2]
                )));
            }
        }

        let diag2 = bbox_diagonal(&vertices).powi(2);
        let min_area = DEGENERATE_AREA_FACTOR * diag2;
        for (f, tri) in faces.iter().enumerate() {
            let area = triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if area <= min_area {
                return Err(Error::Topology(format!(
                    "face {f} is degenerate (area {area:e})"
                )));
            }
        }

        let mut edge_faces: HashMap<(usize, usize), u32> = HashMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                let count = edge_faces.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) is shared by more than two faces (at face {f})",
                        key.0, key.1
                    )));
                }
            }
        }

        let mut neighbors = vec![Vec::new(); nv];
        let mut vertex_faces = vec![Vec::new(); nv];
        let mut boundary = vec![false; nv];
        for (&(a, b), &count) in &edge_faces {
            neighbors[a].push(b);
            neighbors[b].push(a);
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                vertex_faces[v].push(f);
            }
        }

        Ok(TriMesh {
            vertices,
            faces,
            neighbors,
            vertex_faces,
            boundary,
            num_edges: edge_faces.len(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn position(&self, v: usize) -> &Point3<f64> {
        &self.vertices[v]
    }

    /// One-ring neighbors of `v`, sorted by index.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.boundary.iter().any(|&b| b)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges as i64 + self.num_faces() as i64
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_faces()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, ns) in self.neighbors.iter().enumerate() {
            for &n in ns.iter().filter(|&&n| n > v) {
                sum += (self.vertices[n] - self.vertices[v]).norm();
                count += 1;
            }
        }
        sum / count as f64
    }

    /// Estimated tangent frame at `v`: the normal is the normalized
    /// area-weighted mean of incident face normals.
    pub fn tangent_frame(&self, v: usize) -> Result<TangentFrame> {
        if v >= self.num_vertices() {
            return Err(Error::Argument(format!(
                "vertex {v} out of range (mesh has {} vertices)",
                self.num_vertices()
            )));
        }
        if self.vertex_faces[v].is_empty() {
            return Err(Error::IsolatedVertex(v));
        }
        // |cross| is twice the face area, so summing raw cross products
        // weights by area.
        let mut n = Vector3::zeros();
        for &f in &self.vertex_faces[v] {
            let [a, b, c] = self.faces[f];
            n +=
                (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        }
        let len = n.norm();
        if !(len > 0.0) {
            return Err(Error::Topology(format!(
                "incident face normals cancel at vertex {v}; orientation is inconsistent"
            )));
        }
        Ok(TangentFrame::from_normal(v, n / len))
    }

    /// Frames for every vertex; isolated vertices get `None`.
    pub fn tangent_frames(&self) -> Vec<Option<TangentFrame>> {
        (0..self.num_vertices())
            .map(|v| self.tangent_frame(v).ok())
            .collect()
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn bbox_diagonal(vertices: &[Point3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in vertices {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    if vertices.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}

/// Orthonormal right-handed frame `(e1, e2, normal)` at a vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub vertex: usize,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl TangentFrame {
    /// Completes a unit normal to a right-handed orthonormal frame.
    pub fn from_normal(vertex: usize, normal: Vector3<f64>) -> Self {
        let normal = normal.normalize();
        // seed with the coordinate axis least aligned with the normal
        let axis = normal.iamin();
        let mut seed = Vector3::zeros();
        seed[axis] = 1.0;
        let mut e1 = seed - normal * normal.dot(&seed);
        e1.normalize_mut();
        e1 -= normal * normal.dot(&e1);
        e1.normalize_mut();
        let e2 = normal.cross(&e1).normalize();
        TangentFrame {
            vertex,
            e1,
            e2,
            normal,
        }
    }

    /// The same tangent plane with `(e1, e2)` rotated by `angle` about the normal.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        TangentFrame {
            vertex: self.vertex,
            e1: self.e1 * c + self.e2 * s,
            e2: -self.e1 * s + self.e2 * c,
            normal: self.normal,
        }
    }

    /// Projects an ambient vector onto the tangent plane.
    pub fn project(&self, v: &Vector3<f64>) -> Vector3<f64> {
        v - self.normal * self.normal.dot(v)
    }

    /// Largest deviation of the frame from orthonormality.
    pub fn orthonormality_error(&self) -> f64 {
        let units = [self.e1.norm(), self.e2.norm(), self.normal.norm()].map(|n| (n - 1.0).abs());
        let dots = [
            self.e1.dot(&self.e2),
            self.e1.dot(&self.normal),
            self.e2.dot(&self.normal),
        ]
        .map(f64::abs);
        units.into_iter().chain(dots).fold(0.0, f64::max)
    }
}

/// Cotangent stiffness `S` and lumped barycentric mass `M`.
///
/// `S` is positive semidefinite with zero row sums, so the smoothing flow
/// reads `M dL/dt = -S L`.
#[derive(Debug, Clone)]
pub struct LaplaceOperator {
    pub stiffness: CscMatrix<f64>,
    pub mass: Vec<f64>,
}

impl LaplaceOperator {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    /// Computes `S * u`.
    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for (col, lane) in self.stiffness.col_iter().enumerate() {
            let uc = u[col];
            for (&row, &val) in lane.row_indices().iter().zip(lane.values()) {
                out[row] += val * uc;
            }
        }
        out
    }

    /// Off-diagonal entry `S_ij`, or zero when `(i, j)` is not an edge.
    pub fn stiffness_entry(&self, i: usize, j: usize) -> f64 {
        self.stiffness
            .get_entry(i, j)
            .map(|e| e.into_value())
            .unwrap_or(0.0)
    }
}

/// Assembles the cotangent Laplacian with lumped mass.
///
/// `S_ij = -(cot a + cot b) / 2` over the angles opposite edge `(i, j)`,
/// `S_ii = -sum_j S_ij`, `M_ii` is a third of the incident face area.
pub fn cotangent_laplacian(mesh: &TriMesh) -> Result<LaplaceOperator> {
    let nv = mesh.num_vertices();
    if let Some(v) = (0..nv).find(|&v| mesh.vertex_faces(v).is_empty()) {
        return Err(Error::IsolatedVertex(v));
    }
    let mut mass = vec![0.0; nv];
    let mut coo = CooMatrix::new(nv, nv);

    for (f, &tri) in mesh.faces().iter().enumerate() {
        let p = tri.map(|v| mesh.position(v));
        let area = mesh.face_area(f);
        for k in 0..3 {
            mass[tri[k]] += area / 3.0;

            // angle at corner k is opposite edge (k+1, k+2)
            let i = tri[(k + 1) % 3];
            let j = tri[(k + 2) % 3];
            let a = p[(k + 1) % 3] - p[k];
            let b = p[(k + 2) % 3] - p[k];
            let cot = a.dot(&b) / a.cross(&b).norm();
            if !cot.is_finite() {
                return Err(Error::DegenerateTriangle { face: f });
            }
            let w = 0.5 * cot.clamp(-COT_CLAMP, COT_CLAMP);
            coo.push(i, j, -w);
            coo.push(j, i, -w);
            coo.push(i, i, w);
            coo.push(j, j, w);
        }
    }

    Ok(LaplaceOperator {
        stiffness: CscMatrix::from(&coo),
        mass,
    })
}
