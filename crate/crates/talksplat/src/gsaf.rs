//! Audio feature files.
//!
//! Little-endian: magic `GSAF`, `u32` version (1), `u32` frames `T`, `u32`
//! feature dimension `D`, then `T·D` row-major `f32`.

use std::fs;
use std::path::Path;

use talksplat_core::audio::AudioFeatureTrack;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSAF";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode(track: &AudioFeatureTrack) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + track.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(track.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(track.dim() as u32).to_le_bytes());
    for v in track.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a GSAF payload; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<AudioFeatureTrack> {
    if bytes.len() < HEADER {
        return Err(Error::format(path, format!("truncated header: {} of {HEADER} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected GSAF"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Version { path: path.to_path_buf(), what: "GSAF", found: version, supported: VERSION });
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let expected = t.checked_mul(d).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    let payload = &bytes[HEADER..];
    if payload.len() != expected {
        return Err(Error::format(path, format!("payload is {} bytes, header T={t} D={d} needs {expected}", payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let source = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    AudioFeatureTrack::new(t, d, data, source).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write(path: &Path, track: &AudioFeatureTrack) -> Result<()> {
    fs::write(path, encode(track)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<AudioFeatureTrack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
