use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

/// Decodes a RIFF/WAVE file to a mono clip. Integer PCM (8/16/24/32-bit) and
/// 32-bit float are accepted; stereo is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    check_codec(bytes)?;
    let reader = WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (1 or 2 supported)",
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / full_scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )));
        }
    };
    let channels = spec.channels as usize;
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    if mono.is_empty() {
        return Err(Error::Decode("no sample frames".into()));
    }
    AudioClip::new(mono, spec.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a mono 16-bit PCM file.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let ctx = || format!("writing {}", path.display());
    let mut w = WavWriter::create(path, spec).map_err(|e| hound_io(e, ctx()))?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) as f64 * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| hound_io(e, ctx()))?;
    }
    w.finalize().map_err(|e| hound_io(e, ctx()))
}

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

/// Rejects codecs other than PCM/float by their `fmt ` tag. Structural
/// problems are left for the full parser to report.
fn check_codec(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Ok(());
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
        if id == b"fmt " {
            if pos + 8 + 16 > bytes.len() {
                return Ok(());
            }
            let body = &bytes[pos + 8..];
            let tag = u16::from_le_bytes([body[0], body[1]]);
            let bits = u16::from_le_bytes([body[14], body[15]]);
            return match tag {
                FORMAT_PCM | FORMAT_FLOAT | FORMAT_EXTENSIBLE => Ok(()),
                other => Err(Error::UnsupportedFormat(format!(
                    "codec tag {other:#06x} with {bits} bits per sample"
                ))),
            };
        }
        pos = pos.saturating_add(8).saturating_add(len + (len & 1));
    }
    Ok(())
}

fn hound_io(e: hound::Error, context: String) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(context, io),
        other => Error::Format(format!("{context}: {other}")),
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedFormat("codec not supported".into()),
        hound::Error::FormatError(m) => Error::Decode(m.to_string()),
        hound::Error::IoError(io) => Error::Decode(format!("truncated or unreadable data: {io}")),
        other => Error::Decode(other.to_string()),
    }
}
