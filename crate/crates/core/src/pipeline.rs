//! End-to-end orchestration shared by the CLI and the integration tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::descriptor::{self, Codebook, DescriptorVector};
use crate::detector::{self, Blob, DetectorConfig};
use crate::error::{Error, Result};
use crate::hessian::{HessianEstimator, HessianField};
use crate::mesh::{self, TriMesh};
use crate::response::{scale_normalize, ResponseField, ResponseKind};
use crate::scalespace::{self, heat_flow, ScaleGrid, ScaleSpace, VertexSignal};
use crate::synth::{self, GaussianBump};

/// Every tunable of a run. Mirrors the CLI flags one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: Vec<PathBuf>,
    pub signal: Vec<PathBuf>,
    /// Precomputed blob lists, as an alternative input for `descriptors`.
    pub blobs: Vec<PathBuf>,
    pub out: PathBuf,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub levels: usize,
    pub substeps: usize,
    pub response: ResponseKind,
    pub detector: DetectorConfig,
    pub words: usize,
    pub max_pairs: usize,
    pub seed: u64,
    pub codebook: Option<PathBuf>,
    pub train: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mesh: Vec::new(),
            signal: Vec::new(),
            blobs: Vec::new(),
            out: PathBuf::from("out"),
            t_min: None,
            t_max: None,
            levels: scalespace::DEFAULT_LEVELS,
            substeps: scalespace::DEFAULT_SUBSTEPS,
            response: ResponseKind::Detsum,
            detector: DetectorConfig::default(),
            words: descriptor::DEFAULT_WORDS,
            max_pairs: descriptor::DEFAULT_MAX_PAIRS,
            seed: 0,
            codebook: None,
            train: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    /// Checks everything that does not need the mesh.
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Argument(format!(
                "levels must be >= 2, got {}",
                self.levels
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Argument("substeps must be >= 1".into()));
        }
        for (name, t) in [("tmin", self.t_min), ("tmax", self.t_max)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Argument(format!("{name} must be positive, got {t}")));
                }
            }
        }
        if let (Some(a), Some(b)) = (self.t_min, self.t_max) {
            if a >= b {
                return Err(Error::Argument(format!(
                    "tmin ({a}) must be below tmax ({b})"
                )));
            }
        }
        if self.response.is_grayscale() {
            return Err(Error::Argument(format!(
                "response must be detsum, theorem or mean, got {}",
                self.response
            )));
        }
        self.detector.validate()?;
        if self.words < 2 {
            return Err(Error::Argument(format!(
                "words must be >= 2, got {}",
                self.words
            )));
        }
        if self.max_pairs < 2 {
            return Err(Error::Argument(format!(
                "max_pairs must be >= 2, got {}",
                self.max_pairs
            )));
        }
        if !self.signal.is_empty() && self.signal.len() != self.mesh.len() {
            return Err(Error::Argument(format!(
                "{} signal files for {} meshes",
                self.signal.len(),
                self.mesh.len()
            )));
        }
        Ok(())
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            t_min: self.t_min,
            t_max: self.t_max,
            levels: self.levels,
            substeps: self.substeps,
            response: self.response,
            detector: self.detector,
        }
    }
}

/// Parameters of one detection run on one surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub levels: usize,
    pub substeps: usize,
    pub response: ResponseKind,
    pub detector: DetectorConfig,
}

impl Default for DetectParams {
    fn default() -> Self {
        PipelineConfig::default().detect_params()
    }
}

impl DetectParams {
    /// Scale grid for `mesh`; unset bounds fall back to the mesh defaults.
    pub fn grid(&self, mesh: &TriMesh) -> Result<ScaleGrid> {
        let (lo, hi) = scalespace::default_range(mesh);
        ScaleGrid::geometric(
            self.t_min.unwrap_or(lo),
            self.t_max.unwrap_or(hi),
            self.levels,
        )
    }
}

/// Intermediate and final products of a detection run.
#[derive(Debug, Clone)]
pub struct Detection {
    pub scale_space: ScaleSpace,
    pub hessians: Vec<HessianField>,
    pub field: ResponseField,
    pub blobs: Vec<Blob>,
}

pub fn scale_space(
    mesh: &TriMesh,
    signal: &VertexSignal,
    params: &DetectParams,
) -> Result<ScaleSpace> {
    let op = mesh::cotangent_laplacian(mesh)?;
    let grid = params.grid(mesh)?;
    heat_flow(mesh, &op, signal, &grid, params.substeps)
}

pub fn hessians(mesh: &TriMesh, ss: &ScaleSpace) -> Vec<HessianField> {
    let est = HessianEstimator::new(mesh);
    ss.levels().iter().map(|l| est.hessian(l)).collect()
}

/// Heat flow, Hessians, normalized response and blob extraction.
pub fn detect(mesh: &TriMesh, signal: &VertexSignal, params: &DetectParams) -> Result<Detection> {
    let ss = scale_space(mesh, signal, params)?;
    let hessians = hessians(mesh, &ss);
    let raw = ResponseField::compute(params.response, &hessians)?;
    let field = scale_normalize(&raw, ss.grid())?;
    let blobs = detector::detect_blobs(&field, mesh, ss.grid(), &params.detector)?;
    Ok(Detection {
        scale_space: ss,
        hessians,
        field,
        blobs,
    })
}

/// Loads a mesh and its signal: PLY channels, or the sidecar CSV when given.
pub fn load_surface(
    mesh_path: &Path,
    signal_path: Option<&Path>,
) -> Result<(TriMesh, VertexSignal)> {
    let (mesh, embedded) = mesh::load_mesh(mesh_path)?;
    let signal = match (signal_path, embedded) {
        (Some(p), _) => mesh::read_signal_csv(p, mesh.num_vertices())?,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(Error::Argument(format!(
                "{} carries no signal channels; pass --signal",
                mesh_path.display()
            )))
        }
    };
    Ok((mesh, signal))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mesh_stats(mesh: &TriMesh) -> serde_json::Value {
    json!({
        "vertices": mesh.num_vertices(),
        "faces": mesh.num_faces(),
        "edges": mesh.num_edges(),
        "closed": mesh.is_closed(),
        "mean_edge_length": mesh.mean_edge_length(),
        "bbox_diagonal": mesh.bbox_diagonal(),
    })
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &PipelineConfig,
    extra: serde_json::Value,
) -> Result<()> {
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    if let (Some(doc), serde_json::Value::Object(extra)) = (doc.as_object_mut(), extra) {
        doc.extend(extra);
    }
    write_file(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&doc)? + "\n"),
    )
}

fn single_input(cfg: &PipelineConfig) -> Result<(TriMesh, VertexSignal)> {
    if cfg.mesh.len() != 1 {
        return Err(Error::Argument(format!(
            "expected exactly one --mesh, got {}",
            cfg.mesh.len()
        )));
    }
    load_surface(&cfg.mesh[0], cfg.signal.first().map(PathBuf::as_path))
}

/// `detect`: writes `blobs.json`, `blobs.csv` and `manifest.json`.
pub fn cmd_detect(cfg: &PipelineConfig) -> Result<Vec<Blob>> {
    cfg.validate()?;
    let start = Instant::now();
    let (mesh, signal) = single_input(cfg)?;
    let loaded = start.elapsed();
    let det = detect(&mesh, &signal, &cfg.detect_params())?;
    let computed = start.elapsed();

    ensure_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("blobs.json"),
        &detector::blobs_to_json(&det.blobs),
    )?;
    write_file(
        &cfg.out.join("blobs.csv"),
        &detector::blobs_to_csv(&det.blobs),
    )?;
    write_manifest(
        &cfg.out,
        "detect",
        cfg,
        json!({
            "mesh_stats": mesh_stats(&mesh),
            "channels": signal.channels(),
            "scales": det.scale_space.grid().scales(),
            "blob_count": det.blobs.len(),
            "timing_ms": {
                "load": loaded.as_secs_f64() * 1e3,
                "compute": (computed - loaded).as_secs_f64() * 1e3,
            },
        }),
    )?;
    Ok(det.blobs)
}

/// `scale-space`: one sidecar CSV per level, `level_00.csv`, ...
pub fn cmd_scale_space(cfg: &PipelineConfig) -> Result<ScaleGrid> {
    cfg.validate()?;
    let (mesh, signal) = single_input(cfg)?;
    let ss = scale_space(&mesh, &signal, &cfg.detect_params())?;
    ensure_dir(&cfg.out)?;
    for k in 0..ss.num_levels() {
        mesh::write_signal_csv(
            &ss.level_signal(k),
            cfg.out.join(format!("level_{k:02}.csv")),
        )?;
    }
    write_manifest(
        &cfg.out,
        "scale-space",
        cfg,
        json!({ "mesh_stats": mesh_stats(&mesh), "scales": ss.grid().scales() }),
    )?;
    Ok(ss.grid().clone())
}

/// `hessian`: one `vertex,channel,H11,H12,H22` CSV per level.
pub fn cmd_hessian(cfg: &PipelineConfig) -> Result<usize> {
    cfg.validate()?;
    let (mesh, signal) = single_input(cfg)?;
    let ss = scale_space(&mesh, &signal, &cfg.detect_params())?;
    let hs = hessians(&mesh, &ss);
    ensure_dir(&cfg.out)?;
    for (k, h) in hs.iter().enumerate() {
        h.write_csv(cfg.out.join(format!("hessian_level_{k:02}.csv")))?;
    }
    let invalid = (0..mesh.num_vertices())
        .filter(|&v| !hs[0].is_valid(v))
        .count();
    write_manifest(
        &cfg.out,
        "hessian",
        cfg,
        json!({
            "mesh_stats": mesh_stats(&mesh),
            "scales": ss.grid().scales(),
            "invalid_vertices": invalid,
        }),
    )?;
    Ok(hs.len())
}

fn surface_ids(paths: &[PathBuf]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "surface".into());
        let mut id = stem.clone();
        let mut k = 1;
        while ids.contains(&id) {
            id = format!("{stem}_{k}");
            k += 1;
        }
        ids.push(id);
    }
    ids
}

/// `descriptors`: one histogram row per surface in `descriptors.csv`; with
/// `train` the codebook is fit on all surfaces and saved as `codebook.json`.
pub fn cmd_descriptors(cfg: &PipelineConfig) -> Result<Vec<(String, DescriptorVector)>> {
    cfg.validate()?;
    let params = cfg.detect_params();

    let mut surfaces: Vec<(String, Vec<Blob>)> = Vec::new();
    for (i, id) in surface_ids(&cfg.mesh).into_iter().enumerate() {
        let (mesh, signal) = load_surface(&cfg.mesh[i], cfg.signal.get(i).map(PathBuf::as_path))?;
        surfaces.push((id, detect(&mesh, &signal, &params)?.blobs));
    }
    for (i, id) in surface_ids(&cfg.blobs).into_iter().enumerate() {
        let path = &cfg.blobs[i];
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let blobs =
            detector::blobs_from_json(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        surfaces.push((id, blobs));
    }
    if surfaces.is_empty() {
        return Err(Error::Argument(
            "no input surfaces (use --mesh or --blobs)".into(),
        ));
    }

    let features: Vec<Vec<descriptor::BlobPairFeature>> = surfaces
        .iter()
        .map(|(_, b)| descriptor::make_pairs(b, cfg.max_pairs))
        .collect();
    for ((id, blobs), f) in surfaces.iter().zip(&features) {
        if f.is_empty() {
            log::warn!(
                "surface '{id}' has {} blobs and no pairs; emitting a zero row",
                blobs.len()
            );
        }
    }

    let codebook = match cfg.codebook.as_ref().filter(|_| !cfg.train) {
        Some(path) => Codebook::load(path)?,
        None => {
            let corpus: Vec<_> = features.iter().flatten().copied().collect();
            let cb =
                descriptor::train_codebook(&corpus, cfg.words, cfg.seed).map_err(|e| match e {
                    Error::InsufficientData(msg) => Error::InsufficientData(format!(
                        "{msg} ({} surfaces, {} blobs, {} pairs)",
                        surfaces.len(),
                        surfaces.iter().map(|(_, b)| b.len()).sum::<usize>(),
                        corpus.len()
                    )),
                    other => other,
                })?;
            ensure_dir(&cfg.out)?;
            cb.save(cfg.out.join("codebook.json"))?;
            cb
        }
    };

    let rows: Vec<(String, DescriptorVector)> = surfaces
        .iter()
        .zip(&features)
        .map(|((id, _), f)| (id.clone(), descriptor::encode(f, &codebook)))
        .collect();
    ensure_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("descriptors.csv"),
        &descriptor::descriptors_to_csv(&rows, codebook.words),
    )?;
    write_manifest(
        &cfg.out,
        "descriptors",
        cfg,
        json!({
            "surfaces": rows.len(),
            "pairs": features.iter().map(Vec::len).sum::<usize>(),
            "trained": cfg.train || cfg.codebook.is_none(),
        }),
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthShape {
    Plane,
    Icosphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Ply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: SynthShape,
    pub n: usize,
    pub extent: f64,
    pub subdiv: usize,
    pub radius: f64,
    pub channels: usize,
    pub bumps: Vec<GaussianBump>,
    pub format: MeshFormat,
    pub out: PathBuf,
}

/// `synth`: writes `mesh.off` (or `mesh.ply`), `signal.csv` and
/// `ground_truth.json`.
pub fn cmd_synth(cfg: &SynthConfig) -> Result<TriMesh> {
    let mesh = match cfg.shape {
        SynthShape::Plane => synth::planar_grid(cfg.n, cfg.extent)?,
        SynthShape::Icosphere => synth::icosphere(cfg.subdiv, cfg.radius)?,
    };
    let channels = cfg
        .bumps
        .iter()
        .map(|b| b.channel + 1)
        .max()
        .unwrap_or(1)
        .max(cfg.channels);
    let scene = synth::plant_gaussians(&mesh, &cfg.bumps, channels)?;
    ensure_dir(&cfg.out)?;
    match cfg.format {
        MeshFormat::Off => mesh::write_off(&scene.mesh, cfg.out.join("mesh.off"))?,
        MeshFormat::Ply => mesh::write_ply(&scene.mesh, None, cfg.out.join("mesh.ply"))?,
    }
    mesh::write_signal_csv(&scene.signal, cfg.out.join("signal.csv"))?;
    write_file(
        &cfg.out.join("ground_truth.json"),
        &(serde_json::to_string_pretty(&json!({ "config": cfg, "bumps": scene.ground_truth }))?
            + "\n"),
    )?;
    Ok(scene.mesh)
}
