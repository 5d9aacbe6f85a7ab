//! Single-channel 16-bit PCM WAV reading and writing.
//!
//! Only the format the pipeline produces and consumes is supported:
//! RIFF/WAVE, PCM (format tag 1), mono, 16-bit signed little-endian.
//! Samples are normalized by 32768 to [-1, 1).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{CoreError, Result};

const SCALE: f64 = 32768.0;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_tag(r: &mut impl Read) -> Result<[u8; 4]> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads a mono 16-bit PCM WAV file into a normalized [`AudioClip`].
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let file = File::open(path)
        .map_err(|e| CoreError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let bad = |msg: &str| CoreError::data(format!("{}: {msg}", path.display()));

    if &read_tag(&mut r)? != b"RIFF" {
        return Err(bad("not a RIFF file"));
    }
    let _riff_len = read_u32(&mut r)?;
    if &read_tag(&mut r)? != b"WAVE" {
        return Err(bad("not a WAVE file"));
    }

    let mut sample_rate = 0u32;
    let mut have_fmt = false;
    loop {
        let tag = match read_tag(&mut r) {
            Ok(t) => t,
            Err(_) => return Err(bad("no data chunk")),
        };
        let len = read_u32(&mut r)?;
        match &tag {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let format = read_u16(&mut r)?;
                let channels = read_u16(&mut r)?;
                sample_rate = read_u32(&mut r)?;
                let _byte_rate = read_u32(&mut r)?;
                let _block_align = read_u16(&mut r)?;
                let bits = read_u16(&mut r)?;
                if format != 1 {
                    return Err(bad("only PCM (format 1) is supported"));
                }
                if channels != 1 {
                    return Err(bad("only mono audio is supported"));
                }
                if bits != 16 {
                    return Err(bad("only 16-bit samples are supported"));
                }
                // Skip any fmt extension bytes.
                let mut rest = vec![0u8; len as usize - 16];
                r.read_exact(&mut rest)?;
                have_fmt = true;
            }
            b"data" => {
                if !have_fmt {
                    return Err(bad("data chunk before fmt chunk"));
                }
                if len % 2 != 0 {
                    return Err(bad("odd data chunk length"));
                }
                let mut raw = vec![0u8; len as usize];
                r.read_exact(&mut raw)
                    .map_err(|_| bad("truncated data chunk"))?;
                let samples: Vec<f64> = raw
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / SCALE)
                    .collect();
                return AudioClip::new(samples, sample_rate);
            }
            _ => {
                // Unknown chunk; chunks are word-aligned.
                let skip = len as usize + (len as usize & 1);
                let mut junk = vec![0u8; skip];
                r.read_exact(&mut junk)?;
            }
        }
    }
}

/// Writes a clip as mono 16-bit PCM. Samples are clamped to [-1, 1).
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| CoreError::data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);

    let n = clip.samples.len() as u32;
    let data_len = n * 2;
    let sr = clip.sample_rate;

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sr.to_le_bytes())?;
    w.write_all(&(sr * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in &clip.samples {
        let q = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
