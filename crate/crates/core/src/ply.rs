//! PLY reader and writer for colored point clouds.
//!
//! Reads `ascii` and `binary_little_endian` files whose `vertex` element has
//! `x`, `y`, `z` float properties and optionally `red`, `green`, `blue`
//! uchar properties. Any other scalar vertex property is read and returned
//! as an extra channel. Elements after `vertex` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, PlyError, Result};
use crate::geometry::{ColoredPoint, ColoredPointCloud, Point, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Property {
    name: String,
    ty: Scalar,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    has_list: bool,
}

/// A decoded PLY vertex set: the cloud plus any extra scalar channels.
#[derive(Debug, Clone)]
pub struct PlyData {
    pub cloud: ColoredPointCloud,
    pub extra: Vec<(String, Vec<f64>)>,
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<ColoredPointCloud> {
    Ok(load_ply_data(path)?.cloud)
}

pub fn load_ply_data(path: impl AsRef<Path>) -> Result<PlyData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file)).map_err(|source| Error::Ply {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_ply(cloud: &ColoredPointCloud, path: impl AsRef<Path>) -> Result<()> {
    save_ply_with(cloud, &[], PlyEncoding::BinaryLittleEndian, path)
}

/// Writes `cloud` plus extra per-vertex uchar channels (e.g. a `canopy` flag).
pub fn save_ply_with(
    cloud: &ColoredPointCloud,
    extra: &[(&str, &[u8])],
    encoding: PlyEncoding,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    for (name, values) in extra {
        if values.len() != cloud.len() {
            return Err(Error::param(format!(
                "extra channel '{name}' has {} values for {} points",
                values.len(),
                cloud.len()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(&mut w, cloud, extra, encoding)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(
    w: &mut W,
    cloud: &ColoredPointCloud,
    extra: &[(&str, &[u8])],
    encoding: PlyEncoding,
) -> std::io::Result<()> {
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt} 1.0")?;
    writeln!(w, "comment frame_id {}", cloud.frame_id)?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if cloud.has_color {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    for (name, _) in extra {
        writeln!(w, "property uchar {name}")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        match encoding {
            PlyEncoding::Ascii => {
                // `{:?}` prints the shortest round-trip representation
                write!(w, "{:?} {:?} {:?}", p.position.x, p.position.y, p.position.z)?;
                if cloud.has_color {
                    write!(w, " {} {} {}", p.color.0[0], p.color.0[1], p.color.0[2])?;
                }
                for (_, values) in extra {
                    write!(w, " {}", values[i])?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in [p.position.x, p.position.y, p.position.z] {
                    w.write_all(&v.to_le_bytes())?;
                }
                if cloud.has_color {
                    w.write_all(&p.color.0)?;
                }
                for (_, values) in extra {
                    w.write_all(&[values[i]])?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_ply<R: BufRead>(mut r: R) -> std::result::Result<PlyData, PlyError> {
    let mut line_no = 0usize;
    let mut next_line = |r: &mut R| -> std::result::Result<Option<String>, PlyError> {
        let mut s = String::new();
        line_no += 1;
        match r.read_line(&mut s) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(s.trim_end_matches(['\n', '\r']).to_string())),
            Err(e) => Err(PlyError::MalformedHeader {
                line: line_no,
                message: e.to_string(),
            }),
        }
    };

    match next_line(&mut r)? {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(PlyError::BadMagic),
    }
    let mut line = 1usize;
    let mut encoding = None;
    let mut frame_id = String::from("map");
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line += 1;
        let Some(l) = next_line(&mut r)? else {
            return Err(PlyError::MalformedHeader {
                line,
                message: "unexpected end of file before end_header".into(),
            });
        };
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["comment", "frame_id", id, ..] => frame_id = id.to_string(),
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| PlyError::MalformedHeader {
                    line,
                    message: format!("bad element count '{count}'"),
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", _, _, name] => {
                let el = elements.last_mut().ok_or_else(|| PlyError::MalformedHeader {
                    line,
                    message: "property before any element".into(),
                })?;
                if el.name == "vertex" {
                    return Err(PlyError::UnsupportedProperty {
                        line,
                        name: name.to_string(),
                        ty: "list".into(),
                    });
                }
                el.has_list = true;
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| PlyError::MalformedHeader {
                    line,
                    message: "property before any element".into(),
                })?;
                let scalar = Scalar::parse(ty).ok_or_else(|| PlyError::UnsupportedProperty {
                    line,
                    name: name.to_string(),
                    ty: ty.to_string(),
                })?;
                if el.name == "vertex" {
                    let float_ok = matches!(scalar, Scalar::F32 | Scalar::F64);
                    let color = matches!(*name, "red" | "green" | "blue");
                    if (matches!(*name, "x" | "y" | "z") && !float_ok) || (color && scalar != Scalar::U8) {
                        return Err(PlyError::UnsupportedProperty {
                            line,
                            name: name.to_string(),
                            ty: ty.to_string(),
                        });
                    }
                }
                el.props.push(Property {
                    name: name.to_string(),
                    ty: scalar,
                });
            }
            _ => {
                return Err(PlyError::MalformedHeader {
                    line,
                    message: format!("unrecognised header line '{l}'"),
                })
            }
        }
    }
    let encoding = encoding.ok_or(PlyError::MalformedHeader {
        line,
        message: "missing format line".into(),
    })?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(PlyError::MalformedHeader {
            line,
            message: "no vertex element".into(),
        })?;
    let vertex = &elements[vertex_pos];
    let find = |n: &str| vertex.props.iter().position(|p| p.name == n);
    let xyz = [
        find("x").ok_or(PlyError::MissingProperty("x"))?,
        find("y").ok_or(PlyError::MissingProperty("y"))?,
        find("z").ok_or(PlyError::MissingProperty("z"))?,
    ];
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        (r, g, _) => {
            return Err(PlyError::MissingProperty(if r.is_none() {
                "red"
            } else if g.is_none() {
                "green"
            } else {
                "blue"
            }))
        }
    };
    let extra_idx: Vec<usize> = (0..vertex.props.len())
        .filter(|i| !xyz.contains(i) && !rgb.is_some_and(|c| c.contains(i)))
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(vertex.count.min(1 << 24));
    match encoding {
        PlyEncoding::Ascii => {
            // skip elements preceding the vertex block
            for el in &elements[..vertex_pos] {
                for _ in 0..el.count {
                    line += 1;
                    if next_line(&mut r)?.is_none() {
                        return Err(PlyError::Truncated {
                            expected: vertex.count,
                            found: 0,
                            location: format!("line {line}"),
                        });
                    }
                }
            }
            while rows.len() < vertex.count {
                line += 1;
                let Some(l) = next_line(&mut r)? else {
                    return Err(PlyError::Truncated {
                        expected: vertex.count,
                        found: rows.len(),
                        location: format!("line {line}"),
                    });
                };
                if l.trim().is_empty() {
                    continue;
                }
                let vals: std::result::Result<Vec<f64>, _> =
                    l.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| PlyError::BadValue {
                    line,
                    message: e.to_string(),
                })?;
                if vals.len() != vertex.props.len() {
                    return Err(PlyError::BadValue {
                        line,
                        message: format!("expected {} values, found {}", vertex.props.len(), vals.len()),
                    });
                }
                rows.push(vals);
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut offset = 0usize;
            for el in &elements[..vertex_pos] {
                if el.has_list {
                    return Err(PlyError::UnsupportedProperty {
                        line,
                        name: el.name.clone(),
                        ty: "list before vertex element".into(),
                    });
                }
                let skip = el.count * el.props.iter().map(|p| p.ty.size()).sum::<usize>();
                let copied = std::io::copy(&mut (&mut r).take(skip as u64), &mut std::io::sink())
                    .map_err(|e| PlyError::BadValue {
                        line,
                        message: e.to_string(),
                    })? as usize;
                offset += copied;
                if copied < skip {
                    return Err(PlyError::Truncated {
                        expected: vertex.count,
                        found: 0,
                        location: format!("byte offset {offset} after header"),
                    });
                }
            }
            let stride: usize = vertex.props.iter().map(|p| p.ty.size()).sum();
            let mut buf = vec![0u8; stride];
            while rows.len() < vertex.count {
                if let Err(e) = r.read_exact(&mut buf) {
                    return Err(match e.kind() {
                        std::io::ErrorKind::UnexpectedEof => PlyError::Truncated {
                            expected: vertex.count,
                            found: rows.len(),
                            location: format!("byte offset {offset} after header"),
                        },
                        _ => PlyError::BadValue {
                            line,
                            message: e.to_string(),
                        },
                    });
                }
                let mut at = 0;
                let row = vertex
                    .props
                    .iter()
                    .map(|p| {
                        let v = p.ty.decode_le(&buf[at..at + p.ty.size()]);
                        at += p.ty.size();
                        v
                    })
                    .collect();
                offset += stride;
                rows.push(row);
            }
        }
    }

    let mut points = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let pos = Point::new(row[xyz[0]], row[xyz[1]], row[xyz[2]]);
        if !(pos.x.is_finite() && pos.y.is_finite() && pos.z.is_finite()) {
            return Err(PlyError::BadValue {
                line,
                message: format!("vertex {i} has a non-finite coordinate"),
            });
        }
        let color = match rgb {
            Some(c) => {
                let ch = |k: usize| -> std::result::Result<u8, PlyError> {
                    let v = row[c[k]];
                    if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                        Ok(v as u8)
                    } else {
                        Err(PlyError::BadValue {
                            line,
                            message: format!("vertex {i} color channel {v} outside 0..=255"),
                        })
                    }
                };
                Rgb([ch(0)?, ch(1)?, ch(2)?])
            }
            None => Rgb::BLACK,
        };
        points.push(ColoredPoint::new(pos, color));
    }
    let extra = extra_idx
        .iter()
        .map(|&k| (vertex.props[k].name.clone(), rows.iter().map(|r| r[k]).collect()))
        .collect();
    Ok(PlyData {
        cloud: ColoredPointCloud::from_trusted(points, &frame_id, rgb.is_some()),
        extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_points() -> ColoredPointCloud {
        ColoredPointCloud::new(
            vec![
                ColoredPoint::new(Point::new(0.1, 0.2, 0.3), Rgb([1, 2, 3])),
                ColoredPoint::new(Point::new(-1.5, 2.25, 1e-7), Rgb([255, 0, 128])),
                ColoredPoint::new(Point::new(3.0, -4.0, 5.5), Rgb([0, 0, 0])),
            ],
            "vehicle",
        )
        .unwrap()
    }

    fn round_trip(c: &ColoredPointCloud, enc: PlyEncoding) -> PlyData {
        let mut buf = Vec::new();
        write_ply(&mut buf, c, &[], enc).unwrap();
        read_ply(&buf[..]).unwrap()
    }

    #[test]
    fn save_then_load_both_encodings() {
        let c = three_points();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let back = round_trip(&c, enc).cloud;
            assert_eq!(back.frame_id, "vehicle");
            assert_eq!(back.len(), 3);
            for (a, b) in c.points().iter().zip(back.points()) {
                assert!((a.position - b.position).norm() < 1e-6);
                assert_eq!(a.color, b.color);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        save_ply(&three_points(), &path).unwrap();
        assert_eq!(load_ply(&path).unwrap(), three_points());
    }

    #[test]
    fn colorless_file_defaults_to_black() {
        let txt = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let data = read_ply(txt.as_bytes()).unwrap();
        assert!(!data.cloud.has_color);
        assert!(data.cloud.points().iter().all(|p| p.color == Rgb::BLACK));
        assert_eq!(data.cloud.points()[1].position, Point::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn truncated_ascii_body() {
        let mut txt = String::from(
            "ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        );
        for i in 0..9 {
            txt.push_str(&format!("{i} 0 0\n"));
        }
        match read_ply(txt.as_bytes()) {
            Err(PlyError::Truncated { expected: 10, found: 9, .. }) => {}
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_body() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &three_points(), &[], PlyEncoding::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_ply(&buf[..]), Err(PlyError::Truncated { expected: 3, found: 2, .. })));
    }

    #[test]
    fn malformed_inputs_have_distinct_errors() {
        assert!(matches!(read_ply("plx\n".as_bytes()), Err(PlyError::BadMagic)));
        let bad_fmt = "ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(matches!(read_ply(bad_fmt.as_bytes()), Err(PlyError::UnsupportedFormat(_))));
        let bad_ty = "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(
            read_ply(bad_ty.as_bytes()),
            Err(PlyError::UnsupportedProperty { line: 4, .. })
        ));
        let list = "ply\nformat ascii 1.0\nelement vertex 1\nproperty list uchar int idx\nend_header\n";
        assert!(matches!(read_ply(list.as_bytes()), Err(PlyError::UnsupportedProperty { .. })));
        let missing = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(matches!(read_ply(missing.as_bytes()), Err(PlyError::MissingProperty("z"))));
        let junk = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 zz\n";
        assert!(matches!(read_ply(junk.as_bytes()), Err(PlyError::BadValue { line: 8, .. })));
        let no_end = "ply\nformat ascii 1.0\nelement vertex 1\n";
        assert!(matches!(read_ply(no_end.as_bytes()), Err(PlyError::MalformedHeader { .. })));
    }

    #[test]
    fn extra_channels_and_trailing_faces() {
        let c = three_points();
        let flags = [1u8, 0, 1];
        let mut buf = Vec::new();
        write_ply(&mut buf, &c, &[("canopy", &flags)], PlyEncoding::Ascii).unwrap();
        let data = read_ply(&buf[..]).unwrap();
        assert_eq!(data.extra, vec![("canopy".to_string(), vec![1.0, 0.0, 1.0])]);

        let with_faces = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3\n3 0 0 0\n";
        assert_eq!(read_ply(with_faces.as_bytes()).unwrap().cloud.len(), 1);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(pts in prop::collection::vec((prop::array::uniform3(-1e3f64..1e3), prop::array::uniform3(0u8..=255)), 0..50)) {
            let c = ColoredPointCloud::new(pts.iter().map(|(p, col)| ColoredPoint::new(Point::new(p[0], p[1], p[2]), Rgb(*col))).collect(), "f").unwrap();
            for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
                prop_assert_eq!(&round_trip(&c, enc).cloud, &c);
            }
        }
    }
}
