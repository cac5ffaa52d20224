//! Binary depth images: `"PDPH"`, u32 width, u32 height, then `width·height`
//! f32 depths and `width·height` u16 labels, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::PanoDepth;
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"PDPH";

pub fn write_depth<T: Real, W: Write>(depth: &PanoDepth<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(depth.width as u32).to_le_bytes())?;
    out.write_all(&(depth.height as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(depth.depth.len() * 6);
    for d in &depth.depth {
        buf.extend_from_slice(&d.as_f32().to_le_bytes());
    }
    for l in &depth.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_depth<T: Real, R: Read>(mut input: R, origin: &str) -> Result<PanoDepth<T>> {
    let bad = |field: &str, message: String| Error::Parse {
        path: origin.to_owned(),
        field: Some(field.to_owned()),
        message,
    };
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("magic", "missing PDPH header".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = width * height;
    if bytes.len() != 12 + n * 6 {
        return Err(bad(
            "body",
            format!("expected {} bytes for {width}x{height}, found {}", 12 + n * 6, bytes.len()),
        ));
    }
    let body = &bytes[12..];
    let depth = body[..n * 4]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let labels = body[n * 4..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let img = PanoDepth {
        width,
        height,
        depth,
        labels,
    };
    img.validate()?;
    Ok(img)
}

pub fn save_depth<T: Real>(depth: &PanoDepth<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_depth(depth, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_depth<T: Real>(path: impl AsRef<Path>) -> Result<PanoDepth<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_depth(std::io::BufReader::new(file), &path.display().to_string())
}
