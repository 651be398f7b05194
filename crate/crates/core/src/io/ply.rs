use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::obj::finish_mesh;
use super::{create, format_err, open, IoError};
use crate::geometry::{Mesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Vertex `float x y z` plus `uchar red green blue` when colored; faces as
/// `list uchar int vertex_indices`.
pub fn write_ply(path: &Path, mesh: &Mesh, format: PlyFormat) -> Result<(), IoError> {
    let mut out = BufWriter::new(create(path)?);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", mesh.vertices.len())?;
    writeln!(out, "property float x\nproperty float y\nproperty float z")?;
    let colors = mesh.vertex_colors.as_ref();
    if colors.is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(out, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.faces.len())?;
    let rgb = |k: usize| colors.map(|c| c[k].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    for (k, v) in mesh.vertices.iter().enumerate() {
        let p = [v.x as f32, v.y as f32, v.z as f32];
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", p[0], p[1], p[2])?;
                if let Some(c) = rgb(k) {
                    write!(out, " {} {} {}", c[0], c[1], c[2])?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p {
                    out.write_all(&c.to_le_bytes())?;
                }
                if let Some(c) = rgb(k) {
                    out.write_all(&c)?;
                }
            }
        }
    }
    for f in &mesh.faces {
        match format {
            PlyFormat::Ascii => writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                out.write_all(&[3u8])?;
                for i in f {
                    out.write_all(&(*i as i32).to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Result<Self, IoError> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(format_err("ply", format!("unknown type {other}"))),
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
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

enum Source<R: BufRead> {
    Ascii(std::vec::IntoIter<String>, R),
    Binary(R),
}

impl<R: BufRead> Source<R> {
    fn next(&mut self, ty: Scalar) -> Result<f64, IoError> {
        match self {
            Source::Ascii(tokens, input) => loop {
                if let Some(t) = tokens.next() {
                    return t.parse::<f64>().map_err(|_| format_err("ply", format!("bad number {t:?}")));
                }
                let mut line = String::new();
                if input.read_line(&mut line)? == 0 {
                    return Err(format_err("ply", "unexpected end of data"));
                }
                *tokens = line.split_whitespace().map(str::to_owned).collect::<Vec<_>>().into_iter();
            },
            Source::Binary(input) => {
                let mut b = [0u8; 8];
                input.read_exact(&mut b[..ty.size()]).map_err(|_| format_err("ply", "unexpected end of data"))?;
                Ok(ty.decode_le(&b))
            }
        }
    }
}

/// Reads ASCII or binary little-endian PLY. Colors may be `uchar` (0..255) or floats.
pub fn read_ply(path: &Path) -> Result<Mesh, IoError> {
    let mut input = BufReader::new(open(path)?);
    let mut line = String::new();
    let read_line = |input: &mut BufReader<std::fs::File>, line: &mut String| -> Result<(), IoError> {
        line.clear();
        if input.read_line(line)? == 0 {
            return Err(format_err("ply", "truncated header"));
        }
        Ok(())
    };
    read_line(&mut input, &mut line)?;
    if line.trim() != "ply" {
        return Err(format_err("ply", "missing magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        read_line(&mut input, &mut line)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", ..] => binary = Some(false),
            ["format", "binary_little_endian", ..] => binary = Some(true),
            ["format", other, ..] => return Err(format_err("ply", format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format_err("ply", "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => elements
                .last_mut()
                .ok_or_else(|| format_err("ply", "property before element"))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(c)?, Scalar::parse(i)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| format_err("ply", "property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            ["end_header"] => break,
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| format_err("ply", "missing format line"))?;
    let mut src = if binary { Source::Binary(input) } else { Source::Ascii(Vec::new().into_iter(), input) };

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let find = |n: &str| {
            el.props.iter().position(|p| matches!(p, Property::Scalar(name, _) if name == n))
        };
        let xyz = [find("x"), find("y"), find("z")];
        let rgb = [find("red"), find("green"), find("blue")];
        let has_rgb = rgb.iter().all(Option::is_some);
        for _ in 0..el.count {
            let mut scalars = vec![0.0; el.props.len()];
            let mut color_int = [false; 3];
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(_, ty) => {
                        scalars[k] = src.next(*ty)?;
                        if let Some(c) = rgb.iter().position(|&r| r == Some(k)) {
                            color_int[c] = ty.is_integer();
                        }
                    }
                    Property::List(name, cty, ity) => {
                        let n = src.next(*cty)? as usize;
                        let idx: Vec<f64> = (0..n).map(|_| src.next(*ity)).collect::<Result<_, _>>()?;
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(format_err("ply", "face with fewer than 3 indices"));
                            }
                            for t in 1..n - 1 {
                                faces.push([idx[0], idx[t], idx[t + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let [Some(x), Some(y), Some(z)] = xyz else {
                    return Err(format_err("ply", "vertex element lacks x/y/z"));
                };
                vertices.push(Vec3::new(scalars[x], scalars[y], scalars[z]));
                if has_rgb {
                    let c: [f32; 3] = std::array::from_fn(|c| {
                        let v = scalars[rgb[c].unwrap()];
                        (if color_int[c] { v / 255.0 } else { v }) as f32
                    });
                    colors.push(c);
                }
            }
        }
    }
    let n = vertices.len() as f64;
    let faces = faces
        .into_iter()
        .map(|f| {
            if f.iter().any(|&i| i < 0.0 || i >= n) {
                Err(format_err("ply", "face index out of range"))
            } else {
                Ok(f.map(|i| i as u32))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    finish_mesh(vertices, faces, if colors.is_empty() { None } else { Some(colors) }, "ply")
}
