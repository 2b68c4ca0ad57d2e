//! OFF / ASCII PLY meshes and the per-vertex signal CSV sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Point3};

use super::TriMesh;
use crate::error::{Error, Result};
use crate::scalespace::VertexSignal;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads an OFF or ASCII PLY mesh, sniffing the format from the first token.
/// PLY files may also carry `ch*` signal channels.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<(TriMesh, Option<VertexSignal>)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    match text.split_whitespace().next() {
        Some(tok) if tok.starts_with("OFF") => Ok((parse_off(path, &text)?, None)),
        Some("ply") => parse_ply(path, &text),
        Some(tok) => Err(Error::parse(
            path,
            1,
            format!("unknown mesh format header '{tok}'"),
        )),
        None => Err(Error::parse(path, 1, "empty mesh file")),
    }
}

pub fn read_off(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    parse_off(path, &read_text(path)?)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<(TriMesh, Option<VertexSignal>)> {
    let path = path.as_ref();
    parse_ply(path, &read_text(path)?)
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid number '{tok}'")))
}

fn parse_off(path: &Path, text: &str) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    let (ln, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty mesh file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("OFF") {
        return Err(Error::parse(path, ln, "expected 'OFF' header"));
    }
    // counts may share the header line
    let mut counts: Vec<&str> = toks.collect();
    let mut counts_line = ln;
    if counts.is_empty() {
        let (l, c) = lines
            .next()
            .ok_or_else(|| Error::parse(path, ln, "missing vertex/face counts"))?;
        counts = c.split_whitespace().collect();
        counts_line = l;
    }
    if counts.len() < 2 {
        return Err(Error::parse(path, counts_line, "expected 'nV nF [nE]'"));
    }
    let nv: usize = parse_num(path, counts_line, counts[0])?;
    let nf: usize = parse_num(path, counts_line, counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, counts_line, format!("expected {nv} vertices")))?;
        let xyz: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| parse_num(path, l, t))
            .collect::<Result<_>>()?;
        if xyz.len() != 3 {
            return Err(Error::parse(path, l, "vertex needs three coordinates"));
        }
        vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, counts_line, format!("expected {nf} faces")))?;
        let mut toks = line.split_whitespace();
        let arity: usize = parse_num(path, l, toks.next().unwrap_or(""))?;
        if arity != 3 {
            return Err(Error::parse(
                path,
                l,
                format!("only triangles are supported, got a {arity}-gon"),
            ));
        }
        let idx: Vec<usize> = toks
            .take(3)
            .map(|t| parse_num(path, l, t))
            .collect::<Result<_>>()?;
        if idx.len() != 3 {
            return Err(Error::parse(path, l, "face needs three indices"));
        }
        faces.push([idx[0], idx[1], idx[2]]);
    }

    TriMesh::new(vertices, faces)
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    list_prop: bool,
}

fn parse_ply(path: &Path, text: &str) -> Result<(TriMesh, Option<VertexSignal>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, 1, "expected 'ply' header")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_end = None;
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(
                        path,
                        ln,
                        format!("unsupported PLY format '{fmt}'"),
                    ));
                }
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: parse_num(path, ln, count)?,
                props: Vec::new(),
                list_prop: false,
            }),
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, ln, "property before element"))?;
                el.props.push(name.to_string());
                el.list_prop = true;
            }
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(path, ln, "property before element"))?
                .props
                .push(name.to_string()),
            ["end_header"] => {
                header_end = Some(ln);
                break;
            }
            _ => {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("unrecognized header line '{line}'"),
                ))
            }
        }
    }
    let header_end = header_end.ok_or_else(|| Error::parse(path, 1, "missing end_header"))?;

    let vertex_el = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, header_end, "no vertex element"))?;
    let vprops = &elements[vertex_el].props;
    let col = |name: &str| vprops.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(path, header_end, "vertex element lacks x/y/z")),
    };
    let mut channel_cols = Vec::new();
    while let Some(c) = col(&format!("ch{}", channel_cols.len())) {
        channel_cols.push(c);
    }

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::new();
    let mut signal = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (ln, line) = body.next().ok_or_else(|| {
                Error::parse(path, header_end, format!("truncated '{}' element", el.name))
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    if toks.len() < el.props.len() {
                        return Err(Error::parse(path, ln, "too few vertex properties"));
                    }
                    let get = |i: usize| parse_num::<f64>(path, ln, toks[i]);
                    vertices.push(Point3::new(get(xi)?, get(yi)?, get(zi)?));
                    for &c in &channel_cols {
                        signal.push(get(c)?);
                    }
                }
                "face" => {
                    let n: usize = parse_num(path, ln, toks.first().copied().unwrap_or(""))?;
                    if n != 3 {
                        return Err(Error::parse(
                            path,
                            ln,
                            format!("only triangles are supported, got a {n}-gon"),
                        ));
                    }
                    if toks.len() < 4 {
                        return Err(Error::parse(path, ln, "face needs three indices"));
                    }
                    faces.push([
                        parse_num(path, ln, toks[1])?,
                        parse_num(path, ln, toks[2])?,
                        parse_num(path, ln, toks[3])?,
                    ]);
                }
                _ => {}
            }
        }
    }

    let nv = vertices.len();
    let mesh = TriMesh::new(vertices, faces)?;
    let signal = if channel_cols.is_empty() {
        None
    } else {
        let m = channel_cols.len();
        Some(VertexSignal::new(DMatrix::from_row_slice(nv, m, &signal))?)
    };
    Ok((mesh, signal))
}

/// Writes an OFF file. Coordinates use the shortest round-trip float
/// representation, so reading back is bit-exact.
pub fn write_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "OFF").unwrap();
    writeln!(
        out,
        "{} {} {}",
        mesh.num_vertices(),
        mesh.num_faces(),
        mesh.num_edges()
    )
    .unwrap();
    for p in mesh.vertices() {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    for [a, b, c] in mesh.faces() {
        writeln!(out, "3 {a} {b} {c}").unwrap();
    }
    write_text(path.as_ref(), &out)
}

pub fn write_ply(
    mesh: &TriMesh,
    signal: Option<&VertexSignal>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let m = signal.map_or(0, |s| s.channels());
    if let Some(s) = signal {
        if s.num_vertices() != mesh.num_vertices() {
            return Err(Error::Argument(format!(
                "signal has {} rows, mesh has {} vertices",
                s.num_vertices(),
                mesh.num_vertices()
            )));
        }
    }
    let mut out = String::new();
    writeln!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}",
        mesh.num_vertices()
    )
    .unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}").unwrap();
    }
    for c in 0..m {
        writeln!(out, "property double ch{c}").unwrap();
    }
    writeln!(out, "element face {}", mesh.num_faces()).unwrap();
    writeln!(out, "property list uchar int vertex_indices\nend_header").unwrap();
    for (v, p) in mesh.vertices().iter().enumerate() {
        write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
        if let Some(s) = signal {
            for c in 0..m {
                write!(out, " {:?}", s.get(v, c)).unwrap();
            }
        }
        out.push('\n');
    }
    for [a, b, c] in mesh.faces() {
        writeln!(out, "3 {a} {b} {c}").unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// Reads a `vertex,ch0,...` CSV. Every vertex in `0..num_vertices` must
/// appear exactly once.
pub fn read_signal_csv(path: impl AsRef<Path>, num_vertices: usize) -> Result<VertexSignal> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("vertex") {
        return Err(Error::parse(path, 1, "first column must be 'vertex'"));
    }
    let m = headers.len() - 1;
    if m == 0 {
        return Err(Error::parse(path, 1, "no signal channels"));
    }
    for (c, h) in headers.iter().skip(1).enumerate() {
        if h != format!("ch{c}") {
            return Err(Error::parse(
                path,
                1,
                format!("expected column 'ch{c}', found '{h}'"),
            ));
        }
    }

    let mut values = DMatrix::zeros(num_vertices, m);
    let mut seen = vec![false; num_vertices];
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != m + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields", m + 1),
            ));
        }
        let v: usize = parse_num(path, line, &rec[0])?;
        if v >= num_vertices {
            return Err(Error::parse(
                path,
                line,
                format!("vertex {v} out of range ({num_vertices} vertices)"),
            ));
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::parse(path, line, format!("vertex {v} listed twice")));
        }
        for c in 0..m {
            values[(v, c)] = parse_num(path, line, &rec[c + 1])?;
        }
        rows += 1;
    }
    if rows != num_vertices {
        return Err(Error::parse(
            path,
            rows + 1,
            format!("signal has {rows} rows but the mesh has {num_vertices} vertices"),
        ));
    }
    VertexSignal::new(values)
}

/// Writes the signal CSV with 17 significant digits per value.
pub fn write_signal_csv(signal: &VertexSignal, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("vertex");
    for c in 0..signal.channels() {
        write!(out, ",ch{c}").unwrap();
    }
    out.push('\n');
    for v in 0..signal.num_vertices() {
        write!(out, "{v}").unwrap();
        for c in 0..signal.channels() {
            write!(out, ",{}", crate::fmt_f64(signal.get(v, c))).unwrap();
        }
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn tetrahedron_off() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tet.off",
            "OFF\n# a comment\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n",
        );
        let (m, s) = load_mesh(&p).unwrap();
        assert!(s.is_none());
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_faces(), 4);
        assert!((0..4).all(|v| m.neighbors(v).len() == 3));
    }

    #[test]
    fn off_repeated_vertex_names_face() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bad.off",
            "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 0 1\n",
        );
        let err = read_off(&p).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
        assert!(err.to_string().contains("face 0"));
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in [
            ("empty.off", ""),
            ("trunc.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n"),
            ("nan.off", "OFF\n3 1 0\n0 0 x\n1 0 0\n0 1 0\n3 0 1 2\n"),
            (
                "quad.off",
                "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
            ),
            (
                "bin.ply",
                "ply\nformat binary_little_endian 1.0\nend_header\n",
            ),
        ] {
            let err = load_mesh(write(&dir, name, text)).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{name}: {err}");
            assert_eq!(err.exit_code(), 3);
        }
    }

    #[test]
    fn off_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth::icosphere(2, 1.0).unwrap();
        let p = dir.path().join("ico.off");
        write_off(&m, &p).unwrap();
        let back = read_off(&p).unwrap();
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert_eq!(a.coords.map(f64::to_bits), b.coords.map(f64::to_bits));
        }
        assert!(back.is_closed());
    }

    #[test]
    fn ply_with_channels_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth::planar_grid(4, 1.0).unwrap();
        let sig = VertexSignal::new(DMatrix::from_fn(16, 2, |v, c| {
            (v as f64).sin() * (c as f64 + 0.1)
        }))
        .unwrap();
        let p = dir.path().join("g.ply");
        write_ply(&m, Some(&sig), &p).unwrap();
        let (back, s) = load_mesh(&p).unwrap();
        assert_eq!(back.faces(), m.faces());
        assert_eq!(s.unwrap().values(), sig.values());
    }

    #[test]
    fn signal_csv_round_trip_and_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let sig = VertexSignal::new(DMatrix::from_fn(5, 3, |v, c| {
            0.1 * v as f64 - c as f64 / 3.0
        }))
        .unwrap();
        let p = dir.path().join("s.csv");
        write_signal_csv(&sig, &p).unwrap();
        assert_eq!(read_signal_csv(&p, 5).unwrap().values(), sig.values());
        let err = read_signal_csv(&p, 6).unwrap_err();
        assert!(err.to_string().contains("5 rows"), "{err}");
    }

    #[test]
    fn signal_csv_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "vertex,a\n0,1\n");
        assert!(matches!(read_signal_csv(&p, 1), Err(Error::Parse { .. })));
    }
}
