//! Blob response functions computed from covariant Hessians.
//!
//! For a map into `R^m` with per-channel Hessians `H^a` (2x2, tangent frame):
//!
//! * `detsum`:  `sum_a det H^a`
//! * `theorem`: `sum_{i,j} sum_a (H^a_ij H^a_ji - H^a_ii H^a_jj)`, which for a
//!   2-dimensional domain equals `-2 * detsum`
//! * `mean`:    `|(tr H^1, ..., tr H^m)|`
//!
//! `det` and `trace` are the single-channel responses `det H` and `|tr H|`
//! of the grayscale detector, computed by their own code path.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::HessianField;
use crate::scalespace::ScaleGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Detsum,
    Theorem,
    Mean,
    /// Grayscale `det H`.
    Det,
    /// Grayscale `|tr H|`.
    Trace,
}

impl ResponseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::Detsum => "detsum",
            ResponseKind::Theorem => "theorem",
            ResponseKind::Mean => "mean",
            ResponseKind::Det => "det",
            ResponseKind::Trace => "trace",
        }
    }

    /// Power of `t` used for scale normalization.
    pub fn scale_power(self) -> i32 {
        match self {
            ResponseKind::Detsum | ResponseKind::Theorem | ResponseKind::Det => 2,
            ResponseKind::Mean | ResponseKind::Trace => 1,
        }
    }

    pub fn is_grayscale(self) -> bool {
        matches!(self, ResponseKind::Det | ResponseKind::Trace)
    }

    /// Response at vertex `v` of one Hessian field.
    pub fn evaluate(self, h: &HessianField, v: usize) -> f64 {
        match self {
            ResponseKind::Detsum => detsum_at(h, v),
            ResponseKind::Theorem => theorem_at(h, v),
            ResponseKind::Mean => mean_at(h, v),
            ResponseKind::Det => {
                let [a, b, d] = h.entries(v, 0);
                a * d - b * b
            }
            ResponseKind::Trace => {
                let [a, _, d] = h.entries(v, 0);
                (a + d).abs()
            }
        }
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResponseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detsum" => Ok(ResponseKind::Detsum),
            "theorem" => Ok(ResponseKind::Theorem),
            "mean" => Ok(ResponseKind::Mean),
            "det" => Ok(ResponseKind::Det),
            "trace" => Ok(ResponseKind::Trace),
            _ => Err(Error::Argument(format!("unknown response kind '{s}'"))),
        }
    }
}

fn detsum_at(h: &HessianField, v: usize) -> f64 {
    (0..h.channels()).map(|c| h.get(v, c).determinant()).sum()
}

fn theorem_at(h: &HessianField, v: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            // <H_ij, H_ji> - <H_ii, H_jj> over the codomain channels
            for c in 0..h.channels() {
                let m = h.get(v, c);
                total += m[(i, j)] * m[(j, i)] - m[(i, i)] * m[(j, j)];
            }
        }
    }
    total
}

fn mean_at(h: &HessianField, v: usize) -> f64 {
    (0..h.channels())
        .map(|c| h.get(v, c).trace().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Response values per scale level and vertex.
///
/// Vertices whose Hessian is invalid hold NaN and are flagged in `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseField {
    kind: ResponseKind,
    values: Vec<Vec<f64>>,
    valid: Vec<bool>,
    normalized: bool,
}

impl ResponseField {
    /// Evaluates `kind` on one Hessian field per scale level.
    pub fn compute(kind: ResponseKind, hessians: &[HessianField]) -> Result<Self> {
        let first = hessians
            .first()
            .ok_or_else(|| Error::Argument("no Hessian levels".into()))?;
        let nv = first.num_vertices();
        if hessians.iter().any(|h| h.num_vertices() != nv) {
            return Err(Error::Argument(
                "Hessian levels differ in vertex count".into(),
            ));
        }
        if kind.is_grayscale() && first.channels() != 1 {
            return Err(Error::Argument(format!(
                "'{kind}' response needs a single channel, got {}",
                first.channels()
            )));
        }
        let valid: Vec<bool> = (0..nv)
            .map(|v| hessians.iter().all(|h| h.is_valid(v)))
            .collect();
        let values = hessians
            .iter()
            .map(|h| {
                (0..nv)
                    .map(|v| {
                        if valid[v] {
                            kind.evaluate(h, v)
                        } else {
                            f64::NAN
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ResponseField {
            kind,
            values,
            valid,
            normalized: false,
        })
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn num_levels(&self) -> usize {
        self.values.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.valid.len()
    }

    pub fn is_valid(&self, v: usize) -> bool {
        self.valid[v]
    }

    pub fn value(&self, level: usize, v: usize) -> f64 {
        self.values[level][v]
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.values[level]
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over valid entries.
    pub fn max_relative_difference(&self, other: &ResponseField, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (la, lb) in self.values.iter().zip(&other.values) {
            for (v, (&a, &b)) in la.iter().zip(lb).enumerate() {
                if self.valid[v] && other.valid[v] {
                    worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(floor));
                }
            }
        }
        worst
    }

    /// Writes `level,vertex,response` rows for valid vertices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("level,vertex,response\n");
        for (k, lvl) in self.values.iter().enumerate() {
            for (v, &x) in lvl.iter().enumerate().filter(|(v, _)| self.valid[*v]) {
                writeln!(out, "{k},{v},{}", crate::fmt_f64(x)).unwrap();
            }
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn br_scalar_detsum(hessians: &[HessianField]) -> Result<ResponseField> {
    ResponseField::compute(ResponseKind::Detsum, hessians)
}

pub fn br_scalar_theorem(hessians: &[HessianField]) -> Result<ResponseField> {
    ResponseField::compute(ResponseKind::Theorem, hessians)
}

pub fn br_mean(hessians: &[HessianField]) -> Result<ResponseField> {
    ResponseField::compute(ResponseKind::Mean, hessians)
}

/// Grayscale determinant response; single channel only.
pub fn br_det(hessians: &[HessianField]) -> Result<ResponseField> {
    ResponseField::compute(ResponseKind::Det, hessians)
}

/// Grayscale trace magnitude; single channel only.
pub fn br_trace(hessians: &[HessianField]) -> Result<ResponseField> {
    ResponseField::compute(ResponseKind::Trace, hessians)
}

/// Multiplies level `k` by `t_k^2` (determinant-type) or `t_k` (trace-type).
pub fn scale_normalize(field: &ResponseField, grid: &ScaleGrid) -> Result<ResponseField> {
    if field.normalized {
        return Err(Error::AlreadyNormalized);
    }
    if grid.len() != field.num_levels() {
        return Err(Error::Argument(format!(
            "field has {} levels but the grid has {} scales",
            field.num_levels(),
            grid.len()
        )));
    }
    let p = field.kind.scale_power();
    let values = field
        .values
        .iter()
        .zip(grid.scales())
        .map(|(lvl, &t)| {
            let w = t.powi(p);
            lvl.iter().map(|x| x * w).collect()
        })
        .collect();
    Ok(ResponseField {
        values,
        normalized: true,
        ..field.clone()
    })
}
