//! Binary params files, little-endian: `"LLLC"`, u32 branch (0 layout,
//! 1 query), u32 in_dim, u32 out_dim, f32 weights row-major, f32 bias.
//! Layout params follow with a decoder block: u32 in_dim, u32 out_dim,
//! f32 weights, f32 bias.

use std::io::{Read, Write};
use std::path::Path;

use super::{Branch, EncoderParams, LinearMap};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"LLLC";

fn write_map<T: Real>(map: &LinearMap<T>, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&(map.in_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(map.out_dim as u32).to_le_bytes());
    for v in map.weights.iter().chain(&map.bias) {
        buf.extend_from_slice(&v.as_f32().to_le_bytes());
    }
}

pub fn write_params<T: Real, W: Write>(params: &EncoderParams<T>, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&params.branch.code().to_le_bytes());
    write_map(&params.encoder, &mut buf);
    if let Some(d) = &params.decoder {
        write_map(d, &mut buf);
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                path: self.origin.to_owned(),
                field: Some(field.to_owned()),
                message: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn map<T: Real>(&mut self, name: &str) -> Result<LinearMap<T>> {
        let in_dim = self.u32(&format!("{name}.in_dim"))? as usize;
        let out_dim = self.u32(&format!("{name}.out_dim"))? as usize;
        let n = in_dim
            .checked_mul(out_dim)
            .and_then(|w| w.checked_add(out_dim))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::InvalidParams(format!("{name} dimensions overflow")))?;
        let values: Vec<T> = self
            .take(n, &format!("{name}.weights"))?
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let (weights, bias) = values.split_at(in_dim * out_dim);
        Ok(LinearMap {
            in_dim,
            out_dim,
            weights: weights.to_vec(),
            bias: bias.to_vec(),
        })
    }
}

pub fn read_params<T: Real, R: Read>(mut input: R, origin: &str) -> Result<EncoderParams<T>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        origin,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            path: origin.to_owned(),
            field: Some("magic".into()),
            message: "missing LLLC header".into(),
        });
    }
    let code = cur.u32("branch")?;
    let branch = Branch::from_code(code).ok_or_else(|| Error::Parse {
        path: origin.to_owned(),
        field: Some("branch".into()),
        message: format!("unknown branch code {code}"),
    })?;
    let encoder = cur.map("encoder")?;
    let decoder = match branch {
        Branch::Layout => Some(cur.map("decoder")?),
        Branch::Query => None,
    };
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            path: origin.to_owned(),
            field: None,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let params = EncoderParams {
        branch,
        encoder,
        decoder,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_params<T: Real>(params: &EncoderParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_params(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Real>(path: impl AsRef<Path>) -> Result<EncoderParams<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(std::io::BufReader::new(file), &path.display().to_string())
}
