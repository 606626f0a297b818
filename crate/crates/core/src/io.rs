//! Point-cloud and transform files.
//!
//! Clouds are read from plain XYZ text (one `x y z` triple per line, `#`
//! starts a comment) or ASCII PLY. Transforms are JSON objects with a
//! row-major `rotation` and a `translation`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    /// `.ply` is PLY; anything else is treated as XYZ text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn parse_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = CloudFormat::from_path(path);
    if format == CloudFormat::PlyAscii {
        check_ply_encoding(&bytes, path)?;
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        message: "file is not UTF-8 text".into(),
    })?;
    let cloud = match format {
        CloudFormat::Xyz => parse_xyz(&text, path)?,
        CloudFormat::PlyAscii => parse_ply(&text, path)?,
    };
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(match label {
        Some(l) => cloud.with_label(l),
        None => cloud,
    })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_coord(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_error(path, line, format!("`{tok}` is not a number")))
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_error(
                path,
                i + 1,
                format!("expected 3 coordinates, found {}", toks.len()),
            ));
        }
        let c = toks
            .iter()
            .map(|t| parse_coord(t, path, i + 1))
            .collect::<Result<Vec<_>>>()?;
        points.push(Point::new(c[0], c[1], c[2]));
    }
    PointCloud::new(points).map_err(|e| match e {
        Error::NonFinite { index } => parse_error(path, 0, format!("point {index} is not finite")),
        other => other,
    })
}

fn check_ply_encoding(bytes: &[u8], path: &Path) -> Result<()> {
    let head = &bytes[..bytes.len().min(512)];
    let head = String::from_utf8_lossy(head);
    if let Some(fmt) = head.lines().find(|l| l.starts_with("format")) {
        if !fmt.contains("ascii") {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("only ASCII PLY is supported (`{}`)", fmt.trim()),
            });
        }
    }
    Ok(())
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_error(path, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    message: format!("only ASCII PLY is supported (`{line}`)"),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(path, n, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", .., name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, n, "property before element"))?;
                if el.name == "vertex" {
                    return Err(parse_error(
                        path,
                        n,
                        "list properties on vertices are not supported",
                    ));
                }
                el.properties.push(name.to_string());
            }
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_error(path, n, "property before element"))?
                .properties
                .push(name.to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {
                return Err(parse_error(
                    path,
                    n,
                    format!("unrecognized header line `{line}`"),
                ))
            }
        }
    }
    if !header_done {
        return Err(parse_error(path, 0, "missing end_header"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_error(path, 0, "no `element vertex`"))?;
    let props = &elements[vertex].properties;
    let column = |axis: &str| {
        props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| parse_error(path, 0, format!("vertex element lacks `{axis}`")))
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    for el in &elements[..vertex] {
        for _ in 0..el.count {
            body.next();
        }
    }
    let mut points = Vec::with_capacity(elements[vertex].count);
    for k in 0..elements[vertex].count {
        let (n, line) = body.next().ok_or_else(|| {
            parse_error(
                path,
                0,
                format!("expected {} vertices, found {k}", elements[vertex].count),
            )
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != props.len() {
            return Err(parse_error(
                path,
                n,
                format!("expected {} values, found {}", props.len(), toks.len()),
            ));
        }
        points.push(Point::new(
            parse_coord(toks[cx], path, n)?,
            parse_coord(toks[cy], path, n)?,
            parse_coord(toks[cz], path, n)?,
        ));
    }
    PointCloud::new(points)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        // shortest representation that parses back to the same value
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    out
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    out.push_str(&format_xyz(cloud));
    out
}

/// Writes PLY for `.ply` paths and XYZ otherwise.
pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match CloudFormat::from_path(path) {
        CloudFormat::PlyAscii => format_ply(cloud),
        CloudFormat::Xyz => format_xyz(cloud),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_transform(t: &RigidTransform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(t)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
