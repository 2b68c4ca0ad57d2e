#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use rblob::mesh::TriMesh;

/// Vertices that are not on the boundary and whose 1-ring avoids it too.
pub fn interior(mesh: &TriMesh) -> Vec<usize> {
    (0..mesh.num_vertices())
        .filter(|&v| {
            !mesh.is_boundary(v) && mesh.neighbors(v).iter().all(|&n| !mesh.is_boundary(n))
        })
        .collect()
}

/// Samples `f(x, y)` at every vertex as a single-channel level.
pub fn sample(mesh: &TriMesh, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    DMatrix::from_iterator(
        mesh.num_vertices(),
        1,
        mesh.vertices().iter().map(|p| f(p.x, p.y)),
    )
}

pub fn gaussian(x: f64, y: f64, cx: f64, cy: f64, sigma: f64) -> f64 {
    (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
}

/// Closed-form Hessian of `gaussian`.
pub fn gaussian_hessian(x: f64, y: f64, cx: f64, cy: f64, sigma: f64) -> Matrix2<f64> {
    let g = gaussian(x, y, cx, cy, sigma);
    let (dx, dy) = (x - cx, y - cy);
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    Matrix2::new(
        g * (dx * dx / s4 - 1.0 / s2),
        g * dx * dy / s4,
        g * dx * dy / s4,
        g * (dy * dy / s4 - 1.0 / s2),
    )
}

/// Planar heat kernel for `u_t = Δu` at time `t`.
pub fn heat_kernel(r2: f64, t: f64) -> f64 {
    (-r2 / (4.0 * t)).exp() / (4.0 * PI * t)
}

/// Scale maximizing `t^2 det H` at the center of a Gaussian of width `sigma`
/// smoothed by heat flow for time `t`, found by brute force on a dense grid.
pub fn brute_force_scale(sigma: f64, amplitude: f64) -> f64 {
    let lo = (sigma * sigma * 1e-3).ln();
    let hi = (sigma * sigma * 1e2).ln();
    let steps = 200_000;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=steps {
        let t = (lo + (hi - lo) * i as f64 / steps as f64).exp();
        // Heat flow for time t convolves with an isotropic Gaussian of
        // variance 2t, so the bump stays Gaussian with s^2 = sigma^2 + 2t.
        let s2 = sigma * sigma + 2.0 * t;
        let peak = amplitude * sigma * sigma / s2;
        let h = gaussian_hessian(0.0, 0.0, 0.0, 0.0, s2.sqrt()) * peak;
        let r = t * t * h.determinant();
        if r > best.0 {
            best = (r, t);
        }
    }
    best.1
}
