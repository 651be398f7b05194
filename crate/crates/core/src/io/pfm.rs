use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{create, format_err, open, IoError};

/// Float image in top-to-bottom row order, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Writes little-endian PFM (`Pf` for one channel, `PF` for three). PFM stores rows
/// bottom to top.
pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), IoError> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err("pfm", format!("{c} channels"))),
    };
    let mut out = BufWriter::new(create(path)?);
    write!(out, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row_len = img.width * img.channels;
    for row in (0..img.height).rev() {
        for v in &img.data[row * row_len..(row + 1) * row_len] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    let mut input = BufReader::new(open(path)?);
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(format_err("pfm", "truncated header"));
        }
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format_err("pfm", format!("bad magic {t:?}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err("pfm", format!("bad size {s:?}")));
    let width = parse(&tokens[1])?;
    let height = parse(&tokens[2])?;
    let scale: f32 = tokens[3].parse().map_err(|_| format_err("pfm", "bad scale"))?;
    let little = scale < 0.0;

    let row_len = width * channels;
    let mut bytes = vec![0u8; height * row_len * 4];
    input.read_exact(&mut bytes).map_err(|_| format_err("pfm", "truncated pixel data"))?;
    let mut data = vec![0f32; height * row_len];
    for (file_row, chunk) in bytes.chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[row * row_len + k] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok(PfmImage { height, width, channels, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let img = PfmImage { height: 2, width: 3, channels: 1, data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] };
        write_pfm(&path, &img).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), img);
        let raw = std::fs::read(&path).unwrap();
        // First stored row is the bottom one.
        let header_len = "Pf\n3 2\n-1.0\n".len();
        assert_eq!(f32::from_le_bytes(raw[header_len..header_len + 4].try_into().unwrap()), 4.0);
    }

    #[test]
    fn rejects_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pfm");
        std::fs::write(&path, b"PF\n4 4\n-1.0\n\x00\x00").unwrap();
        assert!(read_pfm(&path).is_err());
    }
}
