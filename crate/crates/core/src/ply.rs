//! PLY point cloud reader and writer.
//!
//! Reads `ascii` and `binary_little_endian` files. Only the `x`, `y`, `z`
//! properties of the `vertex` element are kept; every other property and
//! element is parsed past and dropped. Writes `x`, `y`, `z` only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
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
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Ply(msg.into())
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &data[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("unterminated header"))?;
        pos += end + 1;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| err("header is not UTF-8"))?;
        Ok(line.trim_end_matches('\r'))
    };

    if next_line()?.trim() != "ply" {
        return Err(err("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let mut words = line.split_whitespace();
        match words.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => Encoding::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Encoding::BinaryLittleEndian,
                    (Some(other), _) => return Err(err(format!("unsupported format '{other}'"))),
                    _ => return Err(err("malformed format line")),
                });
            }
            Some("element") => {
                let name = words.next().ok_or_else(|| err("element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| err(format!("bad count for element '{name}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| err("property before any element"))?;
                let ty = words.next().ok_or_else(|| err("property without type"))?;
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) => {
                            if matches!(count, Scalar::F32 | Scalar::F64) {
                                return Err(err("list count type must be integral"));
                            }
                            Property::List { count, item }
                        }
                        _ => return Err(err("malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| err(format!("unknown type '{ty}'")))?;
                    let name = words.next().ok_or_else(|| err("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(format!("unexpected header keyword '{other}'"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| err("missing format line"))?,
        elements,
        body_offset: pos,
    })
}

struct XyzSlots {
    x: usize,
    y: usize,
    z: usize,
}

fn xyz_slots(element: &Element) -> Result<XyzSlots> {
    let find = |want: &str| {
        element.properties.iter().position(|p| match p {
            Property::Scalar { name, .. } => name == want,
            Property::List { .. } => false,
        })
    };
    match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => Ok(XyzSlots { x, y, z }),
        _ => Err(err("vertex element lacks x, y, z")),
    }
}

/// Parses a PLY document held in memory.
pub fn parse(data: &[u8]) -> Result<PointCloud> {
    let header = parse_header(data)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err("no vertex element"))?;
    let slots = xyz_slots(&header.elements[vertex_pos])?;
    let body = &data[header.body_offset..];
    let points = match header.encoding {
        Encoding::Ascii => read_ascii(body, &header.elements[..=vertex_pos], &slots)?,
        Encoding::BinaryLittleEndian => read_binary(body, &header.elements[..=vertex_pos], &slots)?,
    };
    PointCloud::new(points).map_err(|e| match e {
        Error::NonFinitePoint(i) => err(format!("vertex {i} has a non-finite coordinate")),
        other => other,
    })
}

fn read_ascii(body: &[u8], elements: &[Element], slots: &XyzSlots) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(body).map_err(|_| err("ASCII body is not UTF-8"))?;
    let mut tokens = text.split_ascii_whitespace();
    let mut next_number = || -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| err("unexpected end of data"))?
            .parse::<f64>()
            .map_err(|_| err("malformed number"))
    };
    let (vertex, skipped) = elements.split_last().expect("vertex element present");
    for element in skipped {
        for _ in 0..element.count {
            for prop in &element.properties {
                match prop {
                    Property::Scalar { .. } => {
                        next_number()?;
                    }
                    Property::List { .. } => {
                        let n = list_len(next_number()?)?;
                        for _ in 0..n {
                            next_number()?;
                        }
                    }
                }
            }
        }
    }
    let mut points = Vec::with_capacity(vertex.count.min(1 << 20));
    let mut row = vec![0.0; vertex.properties.len()];
    for _ in 0..vertex.count {
        for (slot, prop) in vertex.properties.iter().enumerate() {
            match prop {
                Property::Scalar { .. } => row[slot] = next_number()?,
                Property::List { .. } => {
                    let n = list_len(next_number()?)?;
                    for _ in 0..n {
                        next_number()?;
                    }
                }
            }
        }
        points.push(Point3::new(row[slots.x], row[slots.y], row[slots.z]));
    }
    Ok(points)
}

fn list_len(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(err("invalid list length"))
    }
}

fn read_binary(body: &[u8], elements: &[Element], slots: &XyzSlots) -> Result<Vec<Point3>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| err("unexpected end of data"))?;
        let out = &body[pos..end];
        pos = end;
        Ok(out)
    };
    let (vertex, skipped) = elements.split_last().expect("vertex element present");
    for element in skipped {
        for _ in 0..element.count {
            for prop in &element.properties {
                match *prop {
                    Property::Scalar { ty, .. } => {
                        take(ty.size())?;
                    }
                    Property::List { count, item } => {
                        let n = list_len(count.read_le(take(count.size())?))?;
                        take(n.checked_mul(item.size()).ok_or_else(|| err("list too long"))?)?;
                    }
                }
            }
        }
    }
    let min_record: usize = vertex
        .properties
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => ty.size(),
            Property::List { count, .. } => count.size(),
        })
        .sum();
    if vertex.count.saturating_mul(min_record) > body.len() {
        return Err(err("vertex count exceeds file size"));
    }
    let mut points = Vec::with_capacity(vertex.count);
    let mut row = vec![0.0; vertex.properties.len()];
    for _ in 0..vertex.count {
        for (slot, prop) in vertex.properties.iter().enumerate() {
            match *prop {
                Property::Scalar { ty, .. } => row[slot] = ty.read_le(take(ty.size())?),
                Property::List { count, item } => {
                    let n = list_len(count.read_le(take(count.size())?))?;
                    take(n.checked_mul(item.size()).ok_or_else(|| err("list too long"))?)?;
                }
            }
        }
        points.push(Point3::new(row[slots.x], row[slots.y], row[slots.z]));
    }
    Ok(points)
}

/// Serializes `cloud` as a PLY document with only `x`, `y`, `z`.
pub fn to_bytes(cloud: &PointCloud, encoding: Encoding, precision: Precision) -> Vec<u8> {
    let ty = match precision {
        Precision::F32 => "float",
        Precision::F64 => "double",
    };
    let format = match encoding {
        Encoding::Ascii => "ascii",
        Encoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty {ty} x\nproperty {ty} y\nproperty {ty} z\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for p in cloud.points() {
        match (encoding, precision) {
            (Encoding::Ascii, Precision::F64) => {
                out.extend_from_slice(format!("{} {} {}\n", p.x, p.y, p.z).as_bytes())
            }
            (Encoding::Ascii, Precision::F32) => out.extend_from_slice(
                format!("{} {} {}\n", p.x as f32, p.y as f32, p.z as f32).as_bytes(),
            ),
            (Encoding::BinaryLittleEndian, Precision::F64) => {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            (Encoding::BinaryLittleEndian, Precision::F32) => {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&data).map_err(|e| match e {
        Error::Ply(msg) => Error::Ply(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: impl AsRef<Path>, cloud: &PointCloud, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(cloud, encoding, Precision::F64)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PointCloud {
        PointCloud::new(vec![
            Point3::new(0.0, 1.5, -2.25),
            Point3::new(1e-7, 123456.789, 3.0),
        ])
        .unwrap()
    }

    #[test]
    fn reads_ascii_with_extra_properties_and_faces() {
        let doc = b"ply\r\nformat ascii 1.0\r\ncomment made by hand\r\nelement vertex 2\r\n\
property float x\r\nproperty uchar red\r\nproperty float y\r\nproperty float z\r\n\
property list uchar int idx\r\nelement face 1\r\nproperty list uchar int vertex_indices\r\nend_header\r\n\
1 255 2 3 2 7 8\r\n4 0 5 6 0\r\n3 0 1 1\r\n";
        let cloud = parse(doc).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn skips_elements_before_vertex_in_binary() {
        let mut doc = b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty list uchar float k\n\
element vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty short s\nend_header\n"
            .to_vec();
        doc.push(2);
        doc.extend_from_slice(&1f32.to_le_bytes());
        doc.extend_from_slice(&2f32.to_le_bytes());
        for c in [7.0f64, 8.0, 9.0] {
            doc.extend_from_slice(&c.to_le_bytes());
        }
        doc.extend_from_slice(&(-3i16).to_le_bytes());
        let cloud = parse(&doc).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(7.0, 8.0, 9.0)]);
    }

    #[test]
    fn float32_vertices() {
        let cloud = sample();
        let bytes = to_bytes(&cloud, Encoding::BinaryLittleEndian, Precision::F32);
        let back = parse(&bytes).unwrap();
        assert_eq!(back.points()[0], Point3::new(0.0, 1.5, -2.25));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse(b"").is_err());
        assert!(parse(b"ply\nformat binary_big_endian 1.0\nend_header\n").is_err());
        assert!(parse(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").is_err());
        assert!(parse(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
        assert!(parse(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 2 3\n").is_err());
        let huge = b"ply\nformat binary_little_endian 1.0\nelement vertex 999999999999\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
        assert!(parse(huge).is_err());
    }

    #[test]
    fn writer_emits_only_xyz() {
        let text = String::from_utf8(to_bytes(&sample(), Encoding::Ascii, Precision::F64)).unwrap();
        assert_eq!(text.matches("property").count(), 3);
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_lossless(
            pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 0..50),
            ascii in any::<bool>(),
        ) {
            let cloud = PointCloud::new(pts.into_iter().map(Point3::from).collect()).unwrap();
            let enc = if ascii { Encoding::Ascii } else { Encoding::BinaryLittleEndian };
            let back = parse(&to_bytes(&cloud, enc, Precision::F64)).unwrap();
            prop_assert_eq!(back.points(), cloud.points());
        }

        #[test]
        fn parser_never_panics(data in prop::collection::vec(any::<u8>(), 0..400)) {
            let mut doc = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
            doc.extend_from_slice(&data);
            let _ = parse(&doc);
            let _ = parse(&data);
        }
    }
}
