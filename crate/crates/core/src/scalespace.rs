//! Heat-flow scale space over mesh vertices.
//!
//! Each grid level is reached from the previous one by implicit Euler steps
//! of the lumped system `(M + dt S) L_next = M L_prev`, solved for all
//! channels at once against a sparse Cholesky factor.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};
use crate::mesh::{LaplaceOperator, TriMesh};

/// Relative residual every linear solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

pub const DEFAULT_SUBSTEPS: usize = 4;
pub const DEFAULT_LEVELS: usize = 12;

/// A `V x m` array of finite per-vertex channel values.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSignal {
    values: DMatrix<f64>,
}

impl VertexSignal {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Argument("signal has no channels".into()));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            let (v, c) = (i % values.nrows(), i / values.nrows());
            return Err(Error::Argument(format!(
                "signal value at vertex {v}, channel {c} is not finite"
            )));
        }
        Ok(VertexSignal { values })
    }

    pub fn zeros(num_vertices: usize, channels: usize) -> Self {
        VertexSignal {
            values: DMatrix::zeros(num_vertices, channels),
        }
    }

    /// Builds a signal from per-channel columns of equal length.
    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self> {
        let nv = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != nv) {
            return Err(Error::Argument("channels differ in length".into()));
        }
        Self::new(DMatrix::from_fn(nv, channels.len(), |v, c| channels[c][v]))
    }

    pub fn num_vertices(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, v: usize, c: usize) -> f64 {
        self.values[(v, c)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }

    pub fn scaled(&self, mu: f64) -> Self {
        VertexSignal {
            values: &self.values * mu,
        }
    }

    /// Reorders channels: output channel `i` is input channel `perm[i]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        VertexSignal {
            values: DMatrix::from_fn(self.num_vertices(), perm.len(), |v, c| {
                self.values[(v, perm[c])]
            }),
        }
    }
}

/// Strictly increasing scales `t_1 < ... < t_K` with `t_1 > 0`, `K >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    scales: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.len() < 2 {
            return Err(Error::Argument(format!(
                "scale grid needs at least 2 scales, got {}",
                scales.len()
            )));
        }
        if !(scales[0] > 0.0) || scales.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("scales must be finite and positive".into()));
        }
        if scales.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("scales must be strictly increasing".into()));
        }
        Ok(ScaleGrid { scales })
    }

    /// Geometric progression `t_k = t_min (t_max / t_min)^((k - 1) / (K - 1))`.
    pub fn geometric(t_min: f64, t_max: f64, levels: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::Argument(format!(
                "scale range needs 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}"
            )));
        }
        if levels < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        let ratio = t_max / t_min;
        let last = (levels - 1) as f64;
        let mut scales: Vec<f64> = (0..levels)
            .map(|k| t_min * ratio.powf(k as f64 / last))
            .collect();
        scales[levels - 1] = t_max;
        Self::new(scales)
    }

    /// `t_min = h^2 / 2`, `t_max = (D / 4)^2` for mean edge length `h` and
    /// bounding-box diagonal `D`.
    pub fn default_for(mesh: &TriMesh) -> Result<Self> {
        let (t_min, t_max) = default_range(mesh);
        Self::geometric(t_min, t_max, DEFAULT_LEVELS)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.scales[k]
    }
}

pub fn default_range(mesh: &TriMesh) -> (f64, f64) {
    let h = mesh.mean_edge_length();
    let d = mesh.bbox_diagonal();
    (0.5 * h * h, (0.25 * d).powi(2))
}

/// Smoothed signal at every grid scale; `raw` is the `t = 0` signal.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    grid: ScaleGrid,
    raw: VertexSignal,
    levels: Vec<DMatrix<f64>>,
}

impl ScaleSpace {
    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn raw(&self) -> &VertexSignal {
        &self.raw
    }

    /// Values at grid scale `t_(k+1)`, i.e. `level(0)` is the first grid scale.
    pub fn level(&self, k: usize) -> &DMatrix<f64> {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[DMatrix<f64>] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_signal(&self, k: usize) -> VertexSignal {
        VertexSignal {
            values: self.levels[k].clone(),
        }
    }
}

/// Integrates the smoothing flow `M dL/dt = -S L` through every scale of `grid`.
pub fn heat_flow(
    mesh: &TriMesh,
    op: &LaplaceOperator,
    signal: &VertexSignal,
    grid: &ScaleGrid,
    substeps: usize,
) -> Result<ScaleSpace> {
    let nv = mesh.num_vertices();
    if signal.num_vertices() != nv || op.num_vertices() != nv {
        return Err(Error::Argument(format!(
            "signal has {} rows, operator {} and mesh {} vertices",
            signal.num_vertices(),
            op.num_vertices(),
            nv
        )));
    }
    if substeps == 0 {
        return Err(Error::Argument("substeps must be at least 1".into()));
    }

    let mut stepper = ImplicitEuler::new(op);
    let mut levels = Vec::with_capacity(grid.len());
    let mut current = signal.values.clone();
    let mut t_prev = 0.0;
    for (k, &t) in grid.scales().iter().enumerate() {
        let dt = (t - t_prev) / substeps as f64;
        stepper.set_step(dt);
        for _ in 0..substeps {
            current = stepper.step(&current, k)?;
        }
        levels.push(current.clone());
        t_prev = t;
    }

    Ok(ScaleSpace {
        grid: grid.clone(),
        raw: signal.clone(),
        levels,
    })
}

/// Factorized `(M + dt S)` for the current step size.
struct ImplicitEuler<'a> {
    op: &'a LaplaceOperator,
    system: CscMatrix<f64>,
    factor: Option<CscCholesky<f64>>,
}

impl<'a> ImplicitEuler<'a> {
    fn new(op: &'a LaplaceOperator) -> Self {
        ImplicitEuler {
            op,
            system: op.stiffness.clone(),
            factor: None,
        }
    }

    fn set_step(&mut self, dt: f64) {
        let s = &self.op.stiffness;
        let mut values = Vec::with_capacity(s.nnz());
        for (col, lane) in s.col_iter().enumerate() {
            for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
                let mass = if row == col { self.op.mass[col] } else { 0.0 };
                values.push(mass + dt * v);
            }
        }
        self.system.values_mut().copy_from_slice(&values);

        // reuse the symbolic factorization once it exists
        self.factor = match self.factor.take() {
            Some(mut f) => f.refactor(&values).ok().map(|_| f),
            None => CscCholesky::factor(&self.system).ok(),
        };
        if self.factor.is_none() {
            log::warn!("Cholesky factorization failed (dt = {dt:e}); falling back to CG");
        }
    }

    fn step(&self, prev: &DMatrix<f64>, level: usize) -> Result<DMatrix<f64>> {
        let mut rhs = prev.clone();
        for (v, mut row) in rhs.row_iter_mut().enumerate() {
            row *= self.op.mass[v];
        }

        let mut x = match &self.factor {
            Some(f) => f.solve(&rhs),
            None => DMatrix::zeros(rhs.nrows(), rhs.ncols()),
        };
        for c in 0..rhs.ncols() {
            let b: Vec<f64> = rhs.column(c).iter().copied().collect();
            let mut xc: Vec<f64> = x.column(c).iter().copied().collect();
            let mut res = relative_residual(&self.system, &xc, &b);
            if res > SOLVE_TOLERANCE {
                if let Some(f) = &self.factor {
                    // one round of iterative refinement
                    let r = residual(&self.system, &xc, &b);
                    let dx = f.solve(&DMatrix::from_column_slice(r.len(), 1, &r));
                    for (xi, d) in xc.iter_mut().zip(dx.iter()) {
                        *xi += d;
                    }
                    res = relative_residual(&self.system, &xc, &b);
                }
            }
            if res > SOLVE_TOLERANCE {
                res = conjugate_gradient(&self.system, &b, &mut xc, 10 * b.len() + 100);
            }
            if !(res <= SOLVE_TOLERANCE) {
                return Err(Error::Solver {
                    level,
                    channel: c,
                    residual: res,
                });
            }
            x.set_column(c, &nalgebra::DVector::from_vec(xc));
        }
        Ok(x)
    }
}

fn mat_vec(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (col, lane) in a.col_iter().enumerate() {
        let xc = x[col];
        for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
            out[row] += v * xc;
        }
    }
    out
}

fn residual(a: &CscMatrix<f64>, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = mat_vec(a, x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|b - A x|` relative to the larger of `|b|` and `| |A| |x| |`, the
/// magnitude of the terms that cancel in the residual.
fn relative_residual(a: &CscMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let r = norm(&residual(a, x, b));
    let mut terms = vec![0.0; a.nrows()];
    for (col, lane) in a.col_iter().enumerate() {
        let xc = x[col].abs();
        for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
            terms[row] += v.abs() * xc;
        }
    }
    let scale = norm(b).max(norm(&terms));
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

/// Jacobi-preconditioned CG on a symmetric positive definite system.
/// Returns the final relative residual.
fn conjugate_gradient(a: &CscMatrix<f64>, b: &[f64], x: &mut [f64], max_iter: usize) -> f64 {
    let n = b.len();
    let mut diag = vec![1.0; n];
    for (col, lane) in a.col_iter().enumerate() {
        for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
            if row == col && v > 0.0 {
                diag[col] = v;
            }
        }
    }
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|xi| *xi = 0.0);
        return 0.0;
    }
    let mut r = residual(a, x, b);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        if norm(&r) / bn <= SOLVE_TOLERANCE * 0.1 {
            break;
        }
        let ap = mat_vec(a, &p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    relative_residual(a, x, b)
}
