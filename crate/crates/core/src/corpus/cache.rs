//! Versioned binary container for cached spectrograms.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "EMSP" | version u32 | sample_rate u32 | window u32 | shift u32
//! | fft_size u32 | f_max f64 | log_floor f64 | frames u32 | bins u32
//! | frames*bins f32 values, row-major over time
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::{Spectrogram, SpectrogramMeta};
use crate::error::{CoreError, Result};

pub const SPEC_MAGIC: &[u8; 4] = b"EMSP";
pub const SPEC_VERSION: u32 = 1;

pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| CoreError::data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let m = &spec.meta;
    w.write_all(SPEC_MAGIC)?;
    w.write_all(&SPEC_VERSION.to_le_bytes())?;
    w.write_all(&m.sample_rate.to_le_bytes())?;
    w.write_all(&(m.window as u32).to_le_bytes())?;
    w.write_all(&(m.shift as u32).to_le_bytes())?;
    w.write_all(&(m.fft_size as u32).to_le_bytes())?;
    w.write_all(&m.f_max_hz.to_le_bytes())?;
    w.write_all(&m.log_floor.to_le_bytes())?;
    w.write_all(&(m.frames as u32).to_le_bytes())?;
    w.write_all(&(m.bins as u32).to_le_bytes())?;
    for &v in spec.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let file = File::open(path)
        .map_err(|e| CoreError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| CoreError::data(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SPEC_MAGIC {
        return Err(bad("not an EMSP container".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != SPEC_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let sample_rate = read_u32(&mut r)?;
    let window = read_u32(&mut r)? as usize;
    let shift = read_u32(&mut r)? as usize;
    let fft_size = read_u32(&mut r)? as usize;
    r.read_exact(&mut f64buf)?;
    let f_max_hz = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let log_floor = f64::from_le_bytes(f64buf);
    let frames = read_u32(&mut r)? as usize;
    let bins = read_u32(&mut r)? as usize;

    let count = frames
        .checked_mul(bins)
        .ok_or_else(|| bad("value count overflow".into()))?;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)
        .map_err(|_| bad("truncated value block".into()))?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();

    Spectrogram::from_values(
        SpectrogramMeta {
            sample_rate,
            window,
            shift,
            fft_size,
            f_max_hz,
            log_floor,
            frames,
            bins,
        },
        values,
    )
    .map_err(|e| bad(e.to_string()))
}
