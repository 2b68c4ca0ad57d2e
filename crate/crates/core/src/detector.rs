//! Spatio-scale extremum detection on normalized response fields.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::mesh::TriMesh;
use crate::response::{ResponseField, ResponseKind};
use crate::scalespace::ScaleGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Min,
    Max,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Min => "min",
            Polarity::Max => "max",
        }
    }
}

/// A detected blob. `level` indexes the scale grid and is not serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub vertex: usize,
    pub position: [f64; 3],
    pub t: f64,
    pub radius: f64,
    pub response: f64,
    pub polarity: Polarity,
    pub kind: ResponseKind,
    #[serde(skip)]
    pub level: usize,
}

/// Blob radius at scale `t`.
pub fn blob_radius(t: f64) -> f64 {
    (2.0 * t).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum `|response|`, in normalized response units.
    pub threshold: f64,
    pub detect_minima: bool,
    pub detect_maxima: bool,
    /// Blobs closer than `overlap * (r1 + r2)` to a stronger blob are dropped.
    pub suppression_overlap: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 0.0,
            detect_minima: false,
            detect_maxima: true,
            suppression_overlap: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Argument(format!(
                "threshold must be finite and non-negative, got {}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.suppression_overlap) {
            return Err(Error::Argument(format!(
                "suppression overlap must lie in [0, 1], got {}",
                self.suppression_overlap
            )));
        }
        if !(self.detect_minima || self.detect_maxima) {
            return Err(Error::Argument("enable minima, maxima or both".into()));
        }
        Ok(())
    }
}

/// Is `(v, k)` a strict extremum of `field` over the 1-ring at levels
/// `k - 1..=k + 1` and `v` itself at `k +- 1`? Invalid neighbors are skipped.
/// Only interior levels qualify. An exact tie with a different vertex goes to
/// the lower vertex index, so a symmetric plateau still yields one extremum.
pub fn strict_extremum(
    field: &ResponseField,
    mesh: &TriMesh,
    v: usize,
    k: usize,
) -> Option<Polarity> {
    if k == 0 || k + 1 >= field.num_levels() || !field.is_valid(v) {
        return None;
    }
    let x = field.value(k, v);
    let mut is_max = true;
    let mut is_min = true;
    let mut check = |y: f64, n: usize| {
        if x == y && n != v {
            is_max &= v < n;
            is_min &= v < n;
        } else {
            is_max &= x > y;
            is_min &= x < y;
        }
    };
    check(field.value(k - 1, v), v);
    check(field.value(k + 1, v), v);
    for &n in mesh.neighbors(v).iter().filter(|&&n| field.is_valid(n)) {
        for lvl in k - 1..=k + 1 {
            check(field.value(lvl, n), n);
        }
    }
    match (is_max, is_min) {
        (true, false) => Some(Polarity::Max),
        (false, true) => Some(Polarity::Min),
        _ => None,
    }
}

fn by_strength(a: &Blob, b: &Blob) -> Ordering {
    b.response
        .abs()
        .total_cmp(&a.response.abs())
        .then(a.level.cmp(&b.level))
        .then(a.vertex.cmp(&b.vertex))
}

/// Finds strict spatio-scale extrema, thresholds them and suppresses
/// overlaps. The result is sorted by `|response|` descending, ties by
/// `(level, vertex)`.
pub fn detect_blobs(
    field: &ResponseField,
    mesh: &TriMesh,
    grid: &ScaleGrid,
    cfg: &DetectorConfig,
) -> Result<Vec<Blob>> {
    if !field.is_normalized() {
        return Err(Error::NotNormalized);
    }
    cfg.validate()?;
    if field.num_levels() != grid.len() || field.num_vertices() != mesh.num_vertices() {
        return Err(Error::Argument(format!(
            "field is {}x{} but grid/mesh are {}x{}",
            field.num_levels(),
            field.num_vertices(),
            grid.len(),
            mesh.num_vertices()
        )));
    }

    let levels = field.num_levels();
    let mut blobs: Vec<Blob> = (1..levels.saturating_sub(1))
        .flat_map(|k| (0..mesh.num_vertices()).map(move |v| (k, v)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .filter_map(|(k, v)| {
            let polarity = strict_extremum(field, mesh, v, k)?;
            let wanted = match polarity {
                Polarity::Max => cfg.detect_maxima,
                Polarity::Min => cfg.detect_minima,
            };
            let response = field.value(k, v);
            if !wanted || response.abs() < cfg.threshold {
                return None;
            }
            let t = grid.t(k);
            let p = mesh.position(v);
            Some(Blob {
                vertex: v,
                position: [p.x, p.y, p.z],
                t,
                radius: blob_radius(t),
                response,
                polarity,
                kind: field.kind(),
                level: k,
            })
        })
        .collect();
    blobs.sort_by(by_strength);
    Ok(suppress_overlaps(blobs, cfg.suppression_overlap))
}

/// Greedy suppression over blobs sorted strongest first: a blob is dropped
/// when its center lies closer than `overlap * (r1 + r2)` to a kept blob.
pub fn suppress_overlaps(blobs: Vec<Blob>, overlap: f64) -> Vec<Blob> {
    let mut kept: Vec<Blob> = Vec::with_capacity(blobs.len());
    for b in blobs {
        let clash = kept.iter().any(|k| {
            let d2: f64 = (0..3)
                .map(|i| (k.position[i] - b.position[i]).powi(2))
                .sum();
            d2.sqrt() < overlap * (k.radius + b.radius)
        });
        if !clash {
            kept.push(b);
        }
    }
    kept
}

const CSV_HEADER: &str = "vertex,x,y,z,t,radius,response,polarity,kind";

/// CSV with one row per blob; floats carry 17 significant digits.
pub fn blobs_to_csv(blobs: &[Blob]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for b in blobs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.vertex,
            fmt_f64(b.position[0]),
            fmt_f64(b.position[1]),
            fmt_f64(b.position[2]),
            fmt_f64(b.t),
            fmt_f64(b.radius),
            fmt_f64(b.response),
            b.polarity.as_str(),
            b.kind
        )
        .unwrap();
    }
    out
}

/// JSON array of blob records; floats carry 17 significant digits.
pub fn blobs_to_json(blobs: &[Blob]) -> String {
    let mut out = String::from("[");
    for (i, b) in blobs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(
            out,
            "\n  {{\"vertex\": {}, \"position\": [{}, {}, {}], \"t\": {}, \"radius\": {}, \"response\": {}, \"polarity\": \"{}\", \"kind\": \"{}\"}}",
            b.vertex,
            fmt_f64(b.position[0]),
            fmt_f64(b.position[1]),
            fmt_f64(b.position[2]),
            fmt_f64(b.t),
            fmt_f64(b.radius),
            fmt_f64(b.response),
            b.polarity.as_str(),
            b.kind
        )
        .unwrap();
    }
    out.push_str(if blobs.is_empty() { "]\n" } else { "\n]\n" });
    out
}

pub fn blobs_from_json(text: &str) -> Result<Vec<Blob>> {
    Ok(serde_json::from_str(text)?)
}
