//! Minimal PLY reader and writer (ASCII and binary little-endian).
//!
//! Elements are parsed into rows of `f64`; list properties are read and
//! dropped. Only the first element of interest is usually needed by callers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::U32 => f64::from(u32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F32 => f64::from(f32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn format_ascii(self, v: f64) -> String {
        match self {
            Self::F32 => format!("{}", v as f32),
            Self::F64 => format!("{v}"),
            _ => format!("{}", v as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

/// One element block. `rows` holds scalar properties only, in declaration
/// order of the scalar properties.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub rows: Vec<Vec<f64>>,
}

impl Element {
    /// Column index among scalar properties.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::Scalar(_)))
            .position(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

pub fn read(path: &Path) -> Result<Vec<Element>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(path, &bytes)
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Vec<Element>> {
    let err = |m: String| Error::parse(path, m);
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };
    if next_line(&mut pos).as_deref().map(str::trim) != Some("ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line(&mut pos).ok_or_else(|| err("header not terminated".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(err("binary_big_endian PLY is not supported".into()))
                    }
                    other => return Err(err(format!("unknown format {other:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
                rows: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let (Some(count), Some(item)) = (ScalarType::parse(c), ScalarType::parse(i)) else {
                    return Err(err(format!("bad list property types in {line:?}")));
                };
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let t = ScalarType::parse(t).ok_or_else(|| err(format!("unknown type {t:?}")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(t),
                });
            }
            _ => return Err(err(format!("malformed header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line".into()))?;
    let body = &bytes[pos..];
    match format {
        Format::Ascii => {
            let text = String::from_utf8_lossy(body);
            let mut tokens = text.split_whitespace();
            for el in &mut elements {
                for r in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.properties {
                        let mut next = || {
                            tokens.next().ok_or_else(|| err(format!("truncated body in {} row {r}", el.name)))
                        };
                        let mut num = || -> Result<f64> {
                            let t = next()?;
                            t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}")))
                        };
                        match p.kind {
                            PropertyKind::Scalar(_) => row.push(num()?),
                            PropertyKind::List { .. } => {
                                let n = num()? as usize;
                                for _ in 0..n {
                                    num()?;
                                }
                            }
                        }
                    }
                    el.rows.push(row);
                }
            }
        }
        Format::BinaryLittleEndian => {
            let mut off = 0;
            let mut take = |n: usize, what: &str| -> Result<&[u8]> {
                if off + n > body.len() {
                    return Err(err(format!("truncated body while reading {what}")));
                }
                let s = &body[off..off + n];
                off += n;
                Ok(s)
            };
            for el in &mut elements {
                el.rows.reserve(el.count);
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.properties {
                        match p.kind {
                            PropertyKind::Scalar(t) => row.push(t.decode(take(t.size(), &el.name)?)),
                            PropertyKind::List { count, item } => {
                                let n = count.decode(take(count.size(), &el.name)?) as usize;
                                take(n * item.size(), &el.name)?;
                            }
                        }
                    }
                    el.rows.push(row);
                }
            }
        }
    }
    Ok(elements)
}

/// Writes a single element with scalar properties.
pub fn write(path: &Path, format: Format, element: &str, props: &[(&str, ScalarType)], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "ply").unwrap();
    writeln!(
        out,
        "format {} 1.0",
        match format {
            Format::Ascii => "ascii",
            Format::BinaryLittleEndian => "binary_little_endian",
        }
    )
    .unwrap();
    writeln!(out, "element {element} {}", rows.len()).unwrap();
    for (name, t) in props {
        writeln!(out, "property {} {name}", t.name()).unwrap();
    }
    writeln!(out, "end_header").unwrap();
    for row in rows {
        debug_assert_eq!(row.len(), props.len());
        match format {
            Format::Ascii => {
                let line: Vec<String> = row.iter().zip(props).map(|(v, (_, t))| t.format_ascii(*v)).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
            Format::BinaryLittleEndian => {
                for (v, (_, t)) in row.iter().zip(props) {
                    t.encode(*v, &mut out);
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
