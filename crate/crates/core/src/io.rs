//! LSDV binary container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "LSDV"
//! 4       2           version, u16 LE (currently 1)
//! 6       1           kind, u8 (0 volume, 1 k-space, 2 mask, 3 generator checkpoint)
//! 7       1           number of dims n, u8
//! 8       4n          dims, u32 LE each
//! 8+4n    16m         payload: m complex values, (re, im) as f64 LE
//! ```
//!
//! Payload order and dims per kind:
//!
//! * volume `[H, W, T]`: index `h + H*(w + W*t)` (frame-major, h fastest).
//!   Coil maps are stored as a volume with `T = C`.
//! * k-space `[C, H, W, T]`: index `h + H*(w + W*(c + C*t))`.
//! * mask `[W, center_lines]`: `W` values `1+0i` (selected) or `0+0i`,
//!   followed by one value `af+0i`.
//! * checkpoint: see `generator::write_checkpoint`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{CoilSensitivities, KSpaceData, KSpaceDims, SamplingMask};
use crate::volume::{CineVolume, Dims};

pub const MAGIC: [u8; 4] = *b"LSDV";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Volume = 0,
    KSpace = 1,
    Mask = 2,
    Checkpoint = 3,
}

/// Decoded header plus raw payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: u8,
    pub dims: Vec<u32>,
    pub payload: Vec<Complex64>,
}

pub fn encode(kind: Kind, dims: &[u32], payload: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 16 * payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind as u8);
    out.push(u8::try_from(dims.len()).expect("at most 255 dims"));
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for z in payload {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

/// Parses a container; `count` maps the dims to the expected number of
/// complex payload values (`None` on overflow).
pub fn decode(bytes: &[u8], expected: Kind, count: impl Fn(&[u32]) -> Option<usize>) -> Result<Container> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let kind = bytes[6];
    if kind != expected as u8 {
        return Err(Error::WrongKind {
            expected: expected as u8,
            found: kind,
        });
    }
    let ndims = bytes[7] as usize;
    let header = 8 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = count(&dims).ok_or_else(|| Error::DimsOverflow(dims.clone()))?;
    let need = n
        .checked_mul(16)
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::DimsOverflow(dims.clone()))?;
    if bytes.len() < need {
        return Err(Error::Truncated {
            expected: need,
            found: bytes.len(),
        });
    }
    let payload = bytes[header..need]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    Ok(Container {
        kind,
        dims,
        payload,
    })
}

fn product(dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

fn dim32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::InvalidDims(format!("dimension {d} exceeds u32")))
}

pub fn encode_volume(v: &CineVolume) -> Result<Vec<u8>> {
    let d = v.dims();
    Ok(encode(
        Kind::Volume,
        &[dim32(d.h)?, dim32(d.w)?, dim32(d.t)?],
        v.as_slice(),
    ))
}

pub fn decode_volume(bytes: &[u8]) -> Result<CineVolume> {
    let c = decode(bytes, Kind::Volume, |d| if d.len() == 3 { product(d) } else { None })?;
    let dims = Dims::new(c.dims[0] as usize, c.dims[1] as usize, c.dims[2] as usize);
    CineVolume::from_vec(dims, c.payload)
}

pub fn write_volume(path: &Path, v: &CineVolume) -> Result<()> {
    write_atomic(path, &encode_volume(v)?)
}

pub fn read_volume(path: &Path) -> Result<CineVolume> {
    decode_volume(&read_all(path)?)
}

pub fn encode_mask(m: &SamplingMask) -> Result<Vec<u8>> {
    let mut payload: Vec<Complex64> = m
        .selected()
        .iter()
        .map(|&s| Complex64::new(if s { 1.0 } else { 0.0 }, 0.0))
        .collect();
    payload.push(Complex64::new(m.af(), 0.0));
    Ok(encode(
        Kind::Mask,
        &[dim32(m.width())?, dim32(m.center_lines())?],
        &payload,
    ))
}

pub fn decode_mask(bytes: &[u8]) -> Result<SamplingMask> {
    let c = decode(bytes, Kind::Mask, |d| {
        if d.len() == 2 {
            usize::try_from(d[0]).ok()?.checked_add(1)
        } else {
            None
        }
    })?;
    let w = c.dims[0] as usize;
    let mut selected = Vec::with_capacity(w);
    for z in &c.payload[..w] {
        match (z.re, z.im) {
            (r, i) if r == 1.0 && i == 0.0 => selected.push(true),
            (r, i) if r == 0.0 && i == 0.0 => selected.push(false),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "mask entry {z} is neither 0 nor 1"
                )))
            }
        }
    }
    SamplingMask::from_parts(selected, c.dims[1] as usize, c.payload[w].re)
}

pub fn write_mask(path: &Path, m: &SamplingMask) -> Result<()> {
    write_atomic(path, &encode_mask(m)?)
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    decode_mask(&read_all(path)?)
}

pub fn encode_kspace(y: &KSpaceData) -> Result<Vec<u8>> {
    let d = y.dims();
    Ok(encode(
        Kind::KSpace,
        &[dim32(d.coils)?, dim32(d.h)?, dim32(d.w)?, dim32(d.t)?],
        y.as_slice(),
    ))
}

/// K-space files carry samples only; the mask travels in its own file.
pub fn decode_kspace(bytes: &[u8], mask: SamplingMask) -> Result<KSpaceData> {
    let c = decode(bytes, Kind::KSpace, |d| if d.len() == 4 { product(d) } else { None })?;
    let dims = KSpaceDims {
        coils: c.dims[0] as usize,
        h: c.dims[1] as usize,
        w: c.dims[2] as usize,
        t: c.dims[3] as usize,
    };
    KSpaceData::new(dims, c.payload, mask)
}

pub fn write_kspace(path: &Path, y: &KSpaceData) -> Result<()> {
    write_atomic(path, &encode_kspace(y)?)
}

pub fn read_kspace(path: &Path, mask: SamplingMask) -> Result<KSpaceData> {
    decode_kspace(&read_all(path)?, mask)
}

pub fn write_coils(path: &Path, c: &CoilSensitivities) -> Result<()> {
    let v = CineVolume::from_vec(
        Dims::new(c.height(), c.width(), c.n_coils()),
        c.as_slice().to_vec(),
    )?;
    write_volume(path, &v)
}

pub fn read_coils(path: &Path) -> Result<CoilSensitivities> {
    let v = read_volume(path)?;
    let d = v.dims();
    CoilSensitivities::from_vec(d.t, d.h, d.w, v.into_vec())
}

#[allow(dead_code)]
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    read_all(path)
}
