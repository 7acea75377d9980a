//! Point-cloud files: binary little-endian PLY and ASCII XYZ.

use std::path::Path;

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn ply_bytes(cloud: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 12);
    for p in cloud.points() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, ply_bytes(cloud)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PropType {
    F32,
    F64,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::F64 => 8,
        }
    }
}

pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, line))
    };

    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    let mut format_ok = false;
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, PropType)> = Vec::new();
    let mut ended = false;
    while let Some((ln, line)) = next_line(&mut pos) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(parse_err(path, ln, format!("unsupported format `{fmt}`, expected binary_little_endian")));
                }
                format_ok = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad element count `{count}`")))?;
                if *name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(parse_err(path, ln, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else if count > 0 {
                    return Err(parse_err(path, ln, format!("unsupported element `{name}` (only vertex is read)")));
                } else {
                    in_vertex = false;
                }
            }
            ["property", ty, name] => {
                if !in_vertex {
                    continue;
                }
                let t = match *ty {
                    "float" | "float32" => PropType::F32,
                    "double" | "float64" => PropType::F64,
                    other => return Err(parse_err(path, ln, format!("unsupported property type `{other}`"))),
                };
                props.push((name.to_string(), t));
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(parse_err(path, ln, "list properties are not supported on vertices"));
                }
            }
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(parse_err(path, ln, format!("unrecognized header line `{line}`"))),
        }
    }
    if !ended {
        return Err(parse_err(path, line_no, "header has no end_header"));
    }
    if !format_ok {
        return Err(parse_err(path, line_no, "header has no format line"));
    }
    let Some(count) = vertex_count else {
        return Err(parse_err(path, line_no, "missing `vertex` element"));
    };
    let find = |axis: &str| {
        props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| parse_err(path, line_no, format!("vertex element has no `{axis}` property")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |off, (_, t)| {
            let o = *off;
            *off += t.size();
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let body = &bytes[pos..];
    if body.len() < count * stride {
        return Err(parse_err(
            path,
            line_no,
            format!("vertex data truncated: need {} bytes, found {}", count * stride, body.len()),
        ));
    }
    let read = |rec: &[u8], i: usize| -> f64 {
        let o = offsets[i];
        match props[i].1 {
            PropType::F32 => f32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes")) as f64,
            PropType::F64 => f64::from_le_bytes(rec[o..o + 8].try_into().expect("8 bytes")),
        }
    };
    let mut points: Vec<Point3> = Vec::with_capacity(count);
    for rec in body.chunks_exact(stride.max(1)).take(count) {
        points.push([read(rec, ix), read(rec, iy), read(rec, iz)]);
    }
    PointCloud::new(points).map_err(|e| parse_err(path, line_no, e.to_string()))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

pub fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f
                .parse::<f64>()
                .map_err(|_| parse_err(path, i + 1, format!("`{f}` is not a number")))?;
            if !p[k].is_finite() {
                return Err(parse_err(path, i + 1, format!("non-finite coordinate `{f}`")));
            }
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(path, &text)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 30);
    for p in cloud.points() {
        s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads PLY for `.ply` paths and XYZ otherwise.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_xyz(path)
    }
}

/// Writes PLY for `.ply` paths and XYZ otherwise.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if is_ply(path) {
        write_ply(path, cloud)
    } else {
        write_xyz(path, cloud)
    }
}
