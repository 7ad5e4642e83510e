//! PLY reader and writer for point clouds.
//!
//! Supports ASCII and binary-little-endian files with at least float or double
//! x/y/z vertex properties. Extra scalar properties are skipped. The reader
//! preserves file order: ground-truth masks reference points by index, so
//! index identity is part of the format contract.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{PointCloud, SceneError};
use crate::geom::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("not a ply file (missing magic)")]
    NotPly,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("missing vertex property {0}")]
    MissingProperty(&'static str),
    #[error("vertex {vertex}: {message}")]
    BadVertex { vertex: usize, message: String },
    #[error("vertex {vertex} has non-finite {property}")]
    NonFinite {
        vertex: usize,
        property: &'static str,
    },
    #[error("unexpected end of data after {got} of {want} vertices")]
    Truncated { got: usize, want: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<ScalarType> {
        match name {
            "char" | "int8" => Some(ScalarType::I8),
            "uchar" | "uint8" => Some(ScalarType::U8),
            "short" | "int16" => Some(ScalarType::I16),
            "ushort" | "uint16" => Some(ScalarType::U16),
            "int" | "int32" => Some(ScalarType::I32),
            "uint" | "uint32" => Some(ScalarType::U32),
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le_f64(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
    has_list: bool,
}

struct Header {
    format: PlyFormat,
    elements: Vec<ElementDef>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header, PlyError> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::NotPly);
    }

    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(PlyError::MalformedHeader("missing end_header".into()));
        }
        let trimmed = line.trim_end();
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("comment") | Some("obj_info") | None => continue,
            Some("format") => {
                format = Some(match tokens.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(PlyError::Unsupported(format!("format {other}")));
                    }
                    None => return Err(PlyError::MalformedHeader("format line".into())),
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| PlyError::MalformedHeader("element without name".into()))?;
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::MalformedHeader(format!("element {name} count")))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    PlyError::MalformedHeader("property before any element".into())
                })?;
                let kind = tokens
                    .next()
                    .ok_or_else(|| PlyError::MalformedHeader("property without type".into()))?;
                if kind == "list" {
                    element.has_list = true;
                    continue;
                }
                let ty = ScalarType::parse(kind)
                    .ok_or_else(|| PlyError::Unsupported(format!("property type {kind}")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| PlyError::MalformedHeader("property without name".into()))?;
                element.properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(PlyError::MalformedHeader(format!(
                    "unknown keyword {other}"
                )));
            }
        }
    }

    Ok(Header {
        format: format.ok_or_else(|| PlyError::MalformedHeader("missing format line".into()))?,
        elements,
    })
}

fn read_vertices<R: BufRead>(reader: &mut R, header: &Header) -> Result<Vec<Vec3>, PlyError> {
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(PlyError::MalformedHeader("no vertex element".to_string()))
        .map_err(|_| PlyError::MalformedHeader("no vertex element".into()))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.has_list {
        return Err(PlyError::Unsupported(
            "list property in vertex element".into(),
        ));
    }
    let mut xyz = [usize::MAX; 3];
    for (i, (name, _)) in vertex.properties.iter().enumerate() {
        match name.as_str() {
            "x" => xyz[0] = i,
            "y" => xyz[1] = i,
            "z" => xyz[2] = i,
            _ => {}
        }
    }
    for (slot, prop) in xyz.iter().zip(["x", "y", "z"]) {
        if *slot == usize::MAX {
            return Err(PlyError::MissingProperty(match prop {
                "x" => "x",
                "y" => "y",
                _ => "z",
            }));
        }
    }

    match header.format {
        PlyFormat::Ascii => {
            // skip earlier elements: one line per instance
            let mut line = String::new();
            for element in &header.elements[..vertex_pos] {
                for _ in 0..element.count {
                    line.clear();
                    if reader.read_line(&mut line)? == 0 {
                        return Err(PlyError::MalformedHeader(format!(
                            "data ends inside element {}",
                            element.name
                        )));
                    }
                }
            }
            let mut points = Vec::with_capacity(vertex.count);
            for v in 0..vertex.count {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    return Err(PlyError::Truncated {
                        got: v,
                        want: vertex.count,
                    });
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < vertex.properties.len() {
                    return Err(PlyError::BadVertex {
                        vertex: v,
                        message: format!(
                            "expected {} fields, found {}",
                            vertex.properties.len(),
                            fields.len()
                        ),
                    });
                }
                let mut p = [0.0f64; 3];
                for (axis, &column) in xyz.iter().enumerate() {
                    p[axis] = fields[column]
                        .parse::<f64>()
                        .map_err(|e| PlyError::BadVertex {
                            vertex: v,
                            message: format!("field {column}: {e}"),
                        })?;
                }
                check_finite(v, p)?;
                points.push(p);
            }
            Ok(points)
        }
        PlyFormat::BinaryLittleEndian => {
            for element in &header.elements[..vertex_pos] {
                if element.has_list {
                    return Err(PlyError::Unsupported(format!(
                        "cannot skip element {} with list properties before vertex data",
                        element.name
                    )));
                }
                let stride: usize = element.properties.iter().map(|(_, t)| t.size()).sum();
                std::io::copy(
                    &mut reader.take((stride * element.count) as u64),
                    &mut std::io::sink(),
                )?;
            }
            let stride: usize = vertex.properties.iter().map(|(_, t)| t.size()).sum();
            let mut offsets = Vec::with_capacity(vertex.properties.len());
            let mut acc = 0usize;
            for (_, ty) in &vertex.properties {
                offsets.push(acc);
                acc += ty.size();
            }
            let mut buf = vec![0u8; stride];
            let mut points = Vec::with_capacity(vertex.count);
            for v in 0..vertex.count {
                if let Err(e) = reader.read_exact(&mut buf) {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        return Err(PlyError::Truncated {
                            got: v,
                            want: vertex.count,
                        });
                    }
                    return Err(e.into());
                }
                let mut p = [0.0f64; 3];
                for (axis, &column) in xyz.iter().enumerate() {
                    let (_, ty) = vertex.properties[column];
                    p[axis] = ty.read_le_f64(&buf[offsets[column]..]);
                }
                check_finite(v, p)?;
                points.push(p);
            }
            Ok(points)
        }
    }
}

fn check_finite(vertex: usize, p: Vec3) -> Result<(), PlyError> {
    for (value, property) in p.iter().zip(["x", "y", "z"]) {
        if !value.is_finite() {
            return Err(PlyError::NonFinite {
                vertex,
                property: match property {
                    "x" => "x",
                    "y" => "y",
                    _ => "z",
                },
            });
        }
    }
    Ok(())
}

/// Read a point cloud, preserving file order of the vertices.
pub fn read_point_cloud(path: &Path, scene_id: &str) -> Result<PointCloud, SceneError> {
    let file = File::open(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let points = parse_header(&mut reader)
        .and_then(|header| read_vertices(&mut reader, &header))
        .map_err(|source| SceneError::Ply {
            path: path.to_path_buf(),
            source,
        })?;
    if points.is_empty() {
        return Err(SceneError::EmptyCloud {
            path: path.to_path_buf(),
        });
    }
    Ok(PointCloud {
        scene_id: scene_id.to_string(),
        points,
    })
}

/// Write a cloud with double-precision coordinates.
///
/// ASCII uses shortest round-trip float formatting, so coordinates survive a
/// write/read cycle exactly in both formats.
pub fn write_point_cloud(
    path: &Path,
    cloud: &PointCloud,
    format: PlyFormat,
) -> Result<(), SceneError> {
    let to_err = |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(to_err)?);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.points.len()
    )
    .map_err(to_err)?;
    match format {
        PlyFormat::Ascii => {
            for p in &cloud.points {
                writeln!(w, "{} {} {}", p[0], p[1], p[2]).map_err(to_err)?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for p in &cloud.points {
                for v in p {
                    w.write_all(&v.to_le_bytes()).map_err(to_err)?;
                }
            }
        }
    }
    w.flush().map_err(to_err)
}

/// Export a colored cloud (binary little-endian, float coordinates + RGB).
///
/// Used by `--export-ply` to visualize heatmaps: callers supply one RGB
/// triplet per point.
pub fn write_colored_point_cloud(
    path: &Path,
    points: &[Vec3],
    colors: &[[u8; 3]],
) -> Result<(), SceneError> {
    assert_eq!(points.len(), colors.len());
    let to_err = |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(to_err)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )
    .map_err(to_err)?;
    for (p, c) in points.iter().zip(colors) {
        for v in p {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(to_err)?;
        }
        w.write_all(c).map_err(to_err)?;
    }
    w.flush().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_three_point_ascii() {
        let dir = tmp();
        let path = dir.path().join("tri.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment test cloud\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n",
        )
        .unwrap();
        let cloud = read_point_cloud(&path, "s1").unwrap();
        assert_eq!(cloud.point_count(), 3);
        assert_eq!(
            cloud.points,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn missing_z_property_is_an_error() {
        let dir = tmp();
        let path = dir.path().join("bad.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
        )
        .unwrap();
        let err = read_point_cloud(&path, "s1").unwrap_err();
        assert!(
            err.to_string().contains("missing vertex property z"),
            "{err}"
        );
    }

    #[test]
    fn non_finite_coordinate_names_the_vertex() {
        let dir = tmp();
        let path = dir.path().join("nan.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\nnan 0 0\n",
        )
        .unwrap();
        let err = read_point_cloud(&path, "s1").unwrap_err();
        assert!(err.to_string().contains("vertex 1"), "{err}");
        assert!(err.to_string().contains("x"), "{err}");
    }

    #[test]
    fn skips_extra_scalar_properties() {
        let dir = tmp();
        let path = dir.path().join("rgb.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty uchar red\nproperty float y\nproperty float z\nend_header\n1 255 2 3\n",
        )
        .unwrap();
        let cloud = read_point_cloud(&path, "s1").unwrap();
        assert_eq!(cloud.points, vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("rt.ply");
        let cloud = PointCloud {
            scene_id: "s1".into(),
            points: vec![
                [0.1, -2.75, 3.5e-7],
                [f64::MIN_POSITIVE, 1.0 / 3.0, -0.0],
                [1e9, -1e-9, 42.0],
            ],
        };
        write_point_cloud(&path, &cloud, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_point_cloud(&path, "s1").unwrap();
        for (a, b) in back.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn ascii_round_trip_is_exact_with_shortest_repr() {
        let dir = tmp();
        let path = dir.path().join("rt_ascii.ply");
        let cloud = PointCloud {
            scene_id: "s1".into(),
            points: vec![[0.1, 0.2, 0.30000000000000004], [-1.5, 2.25, -3.125]],
        };
        write_point_cloud(&path, &cloud, PlyFormat::Ascii).unwrap();
        let back = read_point_cloud(&path, "s1").unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn random_clouds_round_trip_in_both_formats() {
        let dir = tmp();
        let mut state = 0x00ddba11u64;
        let mut unit = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2_000_000) as f64 / 1_000_000.0 - 1.0
        };
        for (case, count) in [(0usize, 1usize), (1, 17), (2, 503), (3, 10_000)] {
            let cloud = PointCloud {
                scene_id: "rt".into(),
                points: (0..count)
                    .map(|_| [unit() * 5.0, unit() * 5.0, unit() * 5.0])
                    .collect(),
            };
            for (format, name) in [
                (PlyFormat::BinaryLittleEndian, "bin"),
                (PlyFormat::Ascii, "ascii"),
            ] {
                let path = dir.path().join(format!("rt_{case}_{name}.ply"));
                write_point_cloud(&path, &cloud, format).unwrap();
                let back = read_point_cloud(&path, "rt").unwrap();
                assert_eq!(back.points.len(), cloud.points.len());
                for (a, b) in back.points.iter().zip(&cloud.points) {
                    for k in 0..3 {
                        assert_eq!(a[k].to_bits(), b[k].to_bits(), "case {case} {name}");
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_binary_reports_progress() {
        let dir = tmp();
        let path = dir.path().join("short.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n".to_vec();
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let err = read_point_cloud(&path, "s1").unwrap_err();
        assert!(err.to_string().contains("1 of 2"), "{err}");
    }
}
