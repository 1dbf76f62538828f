//! Raster map files: binary PGM (P5) masks and little-endian PFM images.
//! PFM rows are stored bottom-to-top as the format requires.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::render::DepthField;

/// A decoded PFM image, rows top-to-bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::Shape(format!("mask of {} for {width}x{height}", mask.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a P5 mask; any nonzero byte counts as inside.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (fields, offset) = header_fields(&bytes, 4).map_err(|m| Error::parse(path, m))?;
    if fields[0] != "P5" {
        return Err(Error::parse(path, "not a binary PGM"));
    }
    let (w, h, maxval) = (num(&fields[1], path)?, num(&fields[2], path)?, num(&fields[3], path)?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(path, "only 8-bit PGM masks are supported"));
    }
    let body = &bytes[offset..];
    if body.len() < w * h {
        return Err(Error::parse(path, "truncated PGM data"));
    }
    Ok((w, h, body[..w * h].iter().map(|&b| b != 0).collect()))
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<()> {
    if !matches!(img.channels, 1 | 3) || img.data.len() != img.width * img.height * img.channels {
        return Err(Error::Shape(format!(
            "PFM {}x{}x{} with {} values",
            img.width,
            img.height,
            img.channels,
            img.data.len()
        )));
    }
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (fields, offset) = header_fields(&bytes, 4).map_err(|m| Error::parse(path, m))?;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::parse(path, format!("unknown PFM tag {other}"))),
    };
    let (w, h) = (num(&fields[1], path)?, num(&fields[2], path)?);
    let scale: f64 = fields[3].parse().map_err(|_| Error::parse(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let row = w * channels;
    let body = &bytes[offset..];
    if body.len() < 4 * row * h {
        return Err(Error::parse(path, "truncated PFM data"));
    }
    let mut data = vec![0f32; row * h];
    for (k, chunk) in body.chunks_exact(4).take(row * h).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (file_row, col) = (k / row, k % row);
        data[(h - 1 - file_row) * row + col] = v;
    }
    Ok(PfmImage {
        width: w,
        height: h,
        channels,
        data,
    })
}

/// Three-channel PFM of camera-frame normals, zero off the mask.
pub fn write_normal_map(
    path: &Path,
    width: usize,
    height: usize,
    normals: &[Vector3<f64>],
    mask: &[bool],
) -> Result<()> {
    let data = normals
        .iter()
        .zip(mask)
        .flat_map(|(n, &m)| {
            if m {
                [n.x as f32, n.y as f32, n.z as f32]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    write_pfm(
        path,
        &PfmImage {
            width,
            height,
            channels: 3,
            data,
        },
    )
}

/// Single-channel PFM of depths, zero off the mask.
pub fn write_depth_map(path: &Path, width: usize, height: usize, depth: &[f64], mask: &[bool]) -> Result<()> {
    let data = depth
        .iter()
        .zip(mask)
        .map(|(&d, &m)| if m { d as f32 } else { 0.0 })
        .collect();
    write_pfm(
        path,
        &PfmImage {
            width,
            height,
            channels: 1,
            data,
        },
    )
}

/// Writes `field` as a depth PFM plus a sibling PGM mask.
pub fn write_depth_field(path: &Path, field: &DepthField) -> Result<()> {
    write_depth_map(path, field.width, field.height, &field.depth, &field.mask)?;
    write_mask(&path.with_extension("pgm"), field.width, field.height, &field.mask)
}

/// Reads a depth PFM. The mask comes from a sibling `.pgm` when present,
/// otherwise from the positive depths.
pub fn read_depth_map(path: &Path) -> Result<DepthField> {
    let img = read_pfm(path)?;
    if img.channels != 1 {
        return Err(Error::parse(path, "depth maps need one channel"));
    }
    let depth: Vec<f64> = img.data.iter().map(|&d| d as f64).collect();
    let mask_path = path.with_extension("pgm");
    let mask = if mask_path.exists() {
        let (w, h, m) = read_mask(&mask_path)?;
        if (w, h) != (img.width, img.height) {
            return Err(Error::Shape(format!("mask {w}x{h} does not match its depth map")));
        }
        m
    } else {
        depth.iter().map(|&d| d > 0.0).collect()
    };
    DepthField::new(img.width, img.height, depth, mask)
}

fn num(s: &str, path: &Path) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(path, format!("bad header number {s:?}")))
}

/// Splits the first `n` whitespace-separated header tokens; the binary
/// payload starts after the single whitespace byte following the last one.
fn header_fields(bytes: &[u8], n: usize) -> std::result::Result<(Vec<String>, usize), String> {
    let mut fields = Vec::with_capacity(n);
    let mut i = 0;
    while fields.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err("missing image data".into());
    }
    Ok((fields, i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mask: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        write_mask(&p, 4, 3, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), (4, 3, mask));
        let raw = fs::read(&p).unwrap();
        assert!(raw.starts_with(b"P5\n4 3\n255\n"));
    }

    #[test]
    fn pfm_round_trip_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let img = PfmImage {
            width: 2,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        write_pfm(&p, &img).unwrap();
        let raw = fs::read(&p).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert!(raw.starts_with(header));
        // bottom row first
        assert_eq!(&raw[header.len()..header.len() + 4], &3.0f32.to_le_bytes());
        assert_eq!(read_pfm(&p).unwrap(), img);
    }

    #[test]
    fn depth_field_round_trip_keeps_the_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pfm");
        let field = DepthField::new(3, 1, vec![2.5, 0.0, 1.25], vec![true, false, true]).unwrap();
        write_depth_field(&p, &field).unwrap();
        assert_eq!(read_depth_map(&p).unwrap(), field);
        fs::remove_file(p.with_extension("pgm")).unwrap();
        assert_eq!(read_depth_map(&p).unwrap().mask, vec![true, false, true]);
    }

    #[test]
    fn normal_map_zeroes_unmasked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.pfm");
        let n = vec![Vector3::new(0.0, 0.6, -0.8), Vector3::new(1.0, 0.0, 0.0)];
        write_normal_map(&p, 2, 1, &n, &[true, false]).unwrap();
        let img = read_pfm(&p).unwrap();
        assert_eq!(img.channels, 3);
        assert_eq!(img.data, vec![0.0, 0.6, -0.8, 0.0, 0.0, 0.0]);
    }
}
