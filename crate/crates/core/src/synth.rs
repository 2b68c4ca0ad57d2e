//! Synthetic meshes and signals with known ground truth.

use std::collections::HashMap;

use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalespace::VertexSignal;

pub const MAX_ICOSPHERE_SUBDIV: usize = 7;

/// `n x n` grid on `z = 0` over `[0, extent]^2`, each quad split along its
/// `(i, j) -> (i + 1, j + 1)` diagonal. Vertex `(i, j)` has index `i + n j`.
pub fn planar_grid(n: usize, extent: f64) -> Result<TriMesh> {
    if n < 2 {
        return Err(Error::Argument(format!("grid needs n >= 2, got {n}")));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::Argument(format!(
            "grid extent must be positive, got {extent}"
        )));
    }
    let h = extent / (n - 1) as f64;
    let vertices = (0..n * n)
        .map(|k| Point3::new((k % n) as f64 * h, (k / n) as f64 * h, 0.0))
        .collect();
    let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v00 = i + n * j;
            let v10 = v00 + 1;
            let v01 = v00 + n;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    TriMesh::new(vertices, faces)
}

/// Subdivided icosahedron projected onto the sphere of `radius`.
pub fn icosphere(subdiv: usize, radius: f64) -> Result<TriMesh> {
    if subdiv > MAX_ICOSPHERE_SUBDIV {
        return Err(Error::Argument(format!(
            "icosphere subdivision must be <= {MAX_ICOSPHERE_SUBDIV}, got {subdiv}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Argument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdiv {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(nalgebra::center(&verts[a], &verts[b]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }

    for p in &mut verts {
        p.coords = p.coords.normalize() * radius;
    }
    TriMesh::new(verts, faces)
}

/// One planted isotropic Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: [f64; 3],
    pub sigma: f64,
    pub channel: usize,
    pub amplitude: f64,
}

/// A mesh, its signal and the bumps that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: TriMesh,
    pub signal: VertexSignal,
    pub ground_truth: Vec<GaussianBump>,
}

/// Samples `sum amplitude * exp(-|p - center|^2 / (2 sigma^2))` per channel,
/// using chordal distance. The signal has `channels` columns.
pub fn plant_gaussians(
    mesh: &TriMesh,
    bumps: &[GaussianBump],
    channels: usize,
) -> Result<SyntheticScene> {
    let channels = channels.max(1);
    for b in bumps {
        if b.channel >= channels {
            return Err(Error::Argument(format!(
                "bump channel {} but the scene has {channels} channels",
                b.channel
            )));
        }
        if !(b.sigma > 0.0) {
            return Err(Error::Argument(format!(
                "bump sigma must be positive, got {}",
                b.sigma
            )));
        }
    }
    let mut values = DMatrix::zeros(mesh.num_vertices(), channels);
    for (v, p) in mesh.vertices().iter().enumerate() {
        for b in bumps {
            let d2 = (p - Point3::from(b.center)).norm_squared();
            values[(v, b.channel)] += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
    }
    Ok(SyntheticScene {
        mesh: mesh.clone(),
        signal: VertexSignal::new(values)?,
        ground_truth: bumps.to_vec(),
    })
}
