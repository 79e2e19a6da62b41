//! File formats: PLY point clouds, correspondence lists, trajectories and
//! view-graph descriptions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{RigidMotion, Vec3};
use crate::multiview::{ViewEdge, ViewGraph};
use crate::pairwise::{Correspondence, CorrespondenceSet, MIN_CORRESPONDENCES};
use crate::pointcloud::PointCloud;

/// Rotation tolerance applied when motions are read back from text.
pub const MOTION_READ_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    binary: bool,
    elements: Vec<Element>,
    /// Byte offset of the payload.
    body: usize,
    /// 1-based line number of the first payload line (ascii).
    body_line: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&c| c == b'\n')
            .map_or(bytes.len(), |k| *pos + k);
        let line = String::from_utf8_lossy(&bytes[*pos..end])
            .trim_end_matches('\r')
            .to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, line))
    };
    let err = |line: usize, msg: String| Error::parse(path, format!("line {line}"), msg);

    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err(1, "missing 'ply' magic".into())),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((n, line)) = next_line(&mut pos) else {
            return Err(err(line_no, "header has no 'end_header'".into()));
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tok.get(2) != Some(&"1.0") {
                    return Err(err(n, format!("unsupported PLY version in '{line}'")));
                }
                binary = Some(match tok.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some("binary_big_endian") => {
                        return Err(Error::UnsupportedFormat(format!(
                            "{}: big-endian PLY",
                            path.display()
                        )))
                    }
                    other => return Err(err(n, format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (tok.get(1), tok.get(2)) else {
                    return Err(err(n, "malformed element line".into()));
                };
                let count = count
                    .parse()
                    .map_err(|_| err(n, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return Err(err(n, "property before any element".into()));
                };
                let prop = if tok.get(1) == Some(&"list") {
                    match (
                        tok.get(2).and_then(|t| Scalar::parse(t)),
                        tok.get(3).and_then(|t| Scalar::parse(t)),
                        tok.get(4),
                    ) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(err(n, format!("malformed list property '{line}'"))),
                    }
                } else {
                    match (tok.get(1).and_then(|t| Scalar::parse(t)), tok.get(2)) {
                        (Some(ty), Some(name)) => Property::Scalar {
                            name: name.to_string(),
                            ty,
                        },
                        _ => return Err(err(n, format!("malformed property '{line}'"))),
                    }
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(n, format!("unexpected header keyword '{other}'"))),
        }
    }
    let Some(binary) = binary else {
        return Err(err(line_no, "header has no format line".into()));
    };
    Ok(Header {
        binary,
        elements,
        body: pos,
        body_line: line_no + 1,
    })
}

/// Column positions of the coordinates (and normals, if all three exist)
/// within the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element, path: &Path) -> Result<VertexLayout> {
    if el.properties.iter().any(|p| matches!(p, Property::List { .. })) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: list property on vertex element",
            path.display()
        )));
    }
    let find = |want: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => {
            return Err(Error::parse(
                path,
                "header",
                "vertex element lacks x, y, z properties",
            ))
        }
    };
    let normals = match (find("nx"), find("ny"), find("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };
    Ok(VertexLayout { xyz, normals })
}

fn pick(row: &[f64], idx: [usize; 3]) -> Vec3 {
    Vec3::new(row[idx[0]], row[idx[1]], row[idx[2]])
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

/// Parses PLY bytes; `path` only labels errors.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let header = parse_header(bytes, path)?;
    let Some(vi) = header.elements.iter().position(|e| e.name == "vertex") else {
        return Err(Error::parse(path, "header", "no vertex element"));
    };
    let layout = vertex_layout(&header.elements[vi], path)?;
    let rows = if header.binary {
        read_binary_rows(bytes, &header, vi, path)?
    } else {
        read_ascii_rows(bytes, &header, vi, path)?
    };
    let points = rows.iter().map(|r| pick(r, layout.xyz)).collect();
    match layout.normals {
        Some(n) => PointCloud::with_normals(points, rows.iter().map(|r| pick(r, n)).collect()),
        None => Ok(PointCloud::new(points)),
    }
}

fn read_ascii_rows(bytes: &[u8], h: &Header, vi: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(&bytes[h.body..])
        .map_err(|e| Error::parse(path, "body", format!("ascii payload is not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (h.body_line + k, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::new();
    for (e, el) in h.elements.iter().enumerate() {
        for _ in 0..el.count {
            let Some((n, line)) = lines.next() else {
                return Err(Error::parse(
                    path,
                    "end of file",
                    format!("expected {} '{}' rows", el.count, el.name),
                ));
            };
            if e != vi {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|err| Error::parse(path, format!("line {n}"), err.to_string()))?;
            if vals.len() != el.properties.len() {
                return Err(Error::parse(
                    path,
                    format!("line {n}"),
                    format!("expected {} values, found {}", el.properties.len(), vals.len()),
                ));
            }
            out.push(vals);
        }
        if e == vi {
            break;
        }
    }
    Ok(out)
}

fn read_binary_rows(bytes: &[u8], h: &Header, vi: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut pos = h.body;
    let need = |pos: usize, n: usize, what: &str| -> Result<()> {
        if pos + n > bytes.len() {
            Err(Error::parse(
                path,
                format!("byte offset {pos}"),
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    bytes.len().saturating_sub(pos)
                ),
            ))
        } else {
            Ok(())
        }
    };
    for el in &h.elements[..vi] {
        for _ in 0..el.count {
            for p in &el.properties {
                match *p {
                    Property::Scalar { ty, .. } => {
                        need(pos, ty.size(), &el.name)?;
                        pos += ty.size();
                    }
                    Property::List { count, item } => {
                        need(pos, count.size(), &el.name)?;
                        let len = count.read_le(&bytes[pos..]);
                        if !(len >= 0.0) {
                            return Err(Error::parse(
                                path,
                                format!("byte offset {pos}"),
                                "negative list length",
                            ));
                        }
                        pos += count.size() + len as usize * item.size();
                    }
                }
            }
        }
    }
    let el = &h.elements[vi];
    let stride: usize = el
        .properties
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => ty.size(),
            Property::List { .. } => 0,
        })
        .sum();
    let total = stride * el.count;
    if pos + total > bytes.len() {
        return Err(Error::parse(
            path,
            format!("byte offset {pos}"),
            format!(
                "truncated vertex data: expected {total} bytes, found {}",
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    let mut out = Vec::with_capacity(el.count);
    for _ in 0..el.count {
        let mut row = Vec::with_capacity(el.properties.len());
        for p in &el.properties {
            if let Property::Scalar { ty, .. } = *p {
                row.push(ty.read_le(&bytes[pos..]));
                pos += ty.size();
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Writes `double` coordinates (and normals when present). Ascii output
/// uses 17 significant digits, so it reads back bit-exactly.
pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_ply_to(cloud, &mut buf, format).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(cloud: &PointCloud, mut w: W, format: PlyFormat) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    let mut names = vec!["x", "y", "z"];
    if cloud.normals.is_some() {
        names.extend(["nx", "ny", "nz"]);
    }
    for n in &names {
        writeln!(w, "property double {n}")?;
    }
    writeln!(w, "end_header")?;
    for (k, p) in cloud.points.iter().enumerate() {
        let mut vals = vec![p.x, p.y, p.z];
        if let Some(ns) = &cloud.normals {
            vals.extend([ns[k].x, ns[k].y, ns[k].z]);
        }
        match format {
            PlyFormat::Ascii => {
                let row: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairJson {
    p: [f64; 3],
    q: [f64; 3],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PairsJson {
    List(Vec<PairJson>),
    Wrapped { pairs: Vec<PairJson> },
}

fn pairs_from_json(pairs: Vec<PairJson>) -> Result<CorrespondenceSet> {
    let set = CorrespondenceSet::new(
        pairs
            .into_iter()
            .map(|c| Correspondence {
                p: Vec3::from(c.p),
                q: Vec3::from(c.q),
            })
            .collect(),
    )?;
    require_minimum(set)
}

fn require_minimum(set: CorrespondenceSet) -> Result<CorrespondenceSet> {
    if set.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: set.len(),
        });
    }
    Ok(set)
}

/// Reads a correspondence file. Two forms are accepted:
///
/// * index lines `a b`, where `a` indexes `src` (the `q` side) and `b`
///   indexes `dst` (the `p` side); `#` starts a comment;
/// * JSON, either `[{"p": [x, y, z], "q": [x, y, z]}, ...]` or the same
///   list under a `"pairs"` key.
///
/// The index form needs both clouds.
pub fn read_correspondences(
    path: impl AsRef<Path>,
    src: Option<&PointCloud>,
    dst: Option<&PointCloud>,
) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correspondences(&text, path, src, dst)
}

pub fn parse_correspondences(
    text: &str,
    path: &Path,
    src: Option<&PointCloud>,
    dst: Option<&PointCloud>,
) -> Result<CorrespondenceSet> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let parsed: PairsJson = serde_json::from_str(text).map_err(|e| {
            Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let pairs = match parsed {
            PairsJson::List(p) | PairsJson::Wrapped { pairs: p } => p,
        };
        return pairs_from_json(pairs);
    }
    let (Some(src), Some(dst)) = (src, dst) else {
        return Err(Error::InvalidInput(format!(
            "{}: index correspondences need both point clouds",
            path.display()
        )));
    };
    let mut pairs = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 2 {
            return Err(Error::parse(
                path,
                format!("line {line_no}"),
                format!("expected two indices, found {} fields", tok.len()),
            ));
        }
        let parse = |t: &str| {
            t.parse::<usize>().map_err(|_| {
                Error::parse(path, format!("line {line_no}"), format!("'{t}' is not an index"))
            })
        };
        let (a, b) = (parse(tok[0])?, parse(tok[1])?);
        let check = |index: usize, len: usize| {
            if index >= len {
                Err(Error::IndexOutOfRange {
                    index,
                    len,
                    line: line_no,
                })
            } else {
                Ok(())
            }
        };
        check(a, src.len())?;
        check(b, dst.len())?;
        pairs.push(Correspondence {
            p: dst.points[b],
            q: src.points[a],
        });
    }
    require_minimum(CorrespondenceSet::new(pairs)?)
}

/// Writes the JSON form accepted by [`read_correspondences`].
pub fn write_correspondences_json<W: Write>(corrs: &CorrespondenceSet, w: W) -> Result<()> {
    let pairs: Vec<PairJson> = corrs
        .iter()
        .map(|c| PairJson {
            p: c.p.into(),
            q: c.q.into(),
        })
        .collect();
    serde_json::to_writer(w, &pairs).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// One motion per line: the top three rows of `M` (12 values), or all 16
/// with `full`, row-major with 17 significant digits.
pub fn write_trajectory<W: Write>(motions: &[RigidMotion], mut w: W, full: bool) -> std::io::Result<()> {
    for m in motions {
        let vals: Vec<f64> = if full {
            m.to_row_major_4x4().to_vec()
        } else {
            m.to_row_major_3x4().to_vec()
        };
        let row: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

fn motion_from_values(vals: &[f64]) -> std::result::Result<RigidMotion, String> {
    if vals.len() != 12 && vals.len() != 16 {
        return Err(format!("expected 12 or 16 values, found {}", vals.len()));
    }
    RigidMotion::from_row_major(vals, MOTION_READ_TOLERANCE)
        .ok_or_else(|| "not a rigid motion (rotation block or bottom row invalid)".to_string())
}

/// Reads lines of 12 or 16 values; blank lines and `#` comments are
/// skipped.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<RigidMotion>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("line {}", k + 1);
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, loc(), e.to_string()))?;
        let m = motion_from_values(&vals).map_err(|msg| Error::parse(path, loc(), msg))?;
        out.push(m);
    }
    Ok(out)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<RigidMotion>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn write_trajectory_file(motions: &[RigidMotion], path: impl AsRef<Path>, full: bool) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trajectory(motions, &mut buf, full).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EdgeCorrespondences {
    File(String),
    Inline(Vec<PairJson>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeJson {
    i: usize,
    j: usize,
    correspondences: EdgeCorrespondences,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewGraphJson {
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    scans: Option<Vec<String>>,
    /// Row-major 3×4 or 4×4 per scan; identity when absent.
    #[serde(default)]
    motions: Option<Vec<Vec<f64>>>,
    edges: Vec<EdgeJson>,
}

/// Loads a view graph from JSON:
///
/// ```json
/// {
///   "scans": ["s0.ply", "s1.ply"],
///   "motions": [[1,0,0,0, 0,1,0,0, 0,0,1,0], ...],
///   "edges": [{"i": 0, "j": 1, "correspondences": "c01.txt"}]
/// }
/// ```
///
/// Scan indices are 0-based. Edge `(i, j)` holds `p` in scan `i` and `q`
/// in scan `j`; for index files the first column therefore indexes scan `j`
/// and the second scan `i`. `correspondences` is a file path (relative to
/// the JSON file) or an inline list of `{"p", "q"}` pairs. `scans` is only
/// required for index files; the scan count comes from `n`, `scans` or
/// `motions`.
pub fn read_view_graph(path: impl AsRef<Path>) -> Result<ViewGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: ViewGraphJson = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let n = raw
        .n
        .or(raw.scans.as_ref().map(Vec::len))
        .or(raw.motions.as_ref().map(Vec::len))
        .ok_or_else(|| {
            Error::InvalidInput(format!("{}: cannot tell the number of scans", path.display()))
        })?;
    let clouds: Option<Vec<PointCloud>> = match &raw.scans {
        Some(list) if list.len() != n => {
            return Err(Error::InvalidInput(format!(
                "{}: {} scans listed for n = {n}",
                path.display(),
                list.len()
            )))
        }
        Some(list) => Some(list.iter().map(|s| read_ply(resolve(s))).collect::<Result<_>>()?),
        None => None,
    };
    let motions = match raw.motions {
        Some(ms) => {
            if ms.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{}: {} motions for {n} scans",
                    path.display(),
                    ms.len()
                )));
            }
            ms.iter()
                .enumerate()
                .map(|(k, vals)| {
                    motion_from_values(vals)
                        .map_err(|msg| Error::parse(path, format!("motions[{k}]"), msg))
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![RigidMotion::identity(); n],
    };
    let mut edges = Vec::with_capacity(raw.edges.len());
    for e in raw.edges {
        if e.i >= n || e.j >= n {
            return Err(Error::InvalidInput(format!(
                "{}: edge ({}, {}) out of range for {n} scans",
                path.display(),
                e.i,
                e.j
            )));
        }
        let corrs = match e.correspondences {
            EdgeCorrespondences::Inline(pairs) => pairs_from_json(pairs)?,
            EdgeCorrespondences::File(f) => {
                let (src, dst) = match &clouds {
                    Some(c) => (Some(&c[e.j]), Some(&c[e.i])),
                    None => (None, None),
                };
                read_correspondences(resolve(&f), src, dst)?
            }
        };
        edges.push(ViewEdge {
            i: e.i,
            j: e.j,
            corrs,
        });
    }
    ViewGraph::new(motions, edges)
}

/// Reads an edge list: one `i j` pair per line, `#` comments allowed.
pub fn parse_edge_list(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match tok.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        let Some(pair) = parsed else {
            return Err(Error::parse(path, format!("line {}", k + 1), "expected 'i j'"));
        };
        out.push(pair);
    }
    Ok(out)
}

/// `.ply` files in `dir`, sorted by file name.
pub fn list_ply_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        })
        .collect();
    files.sort();
    Ok(files)
}
