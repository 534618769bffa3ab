//! Audio ingest and the log-Mel front end.

mod cryf;
mod manifest;
mod mel;
mod resample;
mod wav;

pub use cryf::{decode_cryf, encode_cryf, read_cryf, write_cryf, CRYF_MAGIC};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, Label, ManifestEntry, Split};
pub use mel::{
    hz_to_mel, log_mel, mel_filterbank, mel_to_hz, spectral_summary, LogMel, MelFilter, MelProfile,
    Spectrogram,
};
pub use resample::resample;
pub use wav::{decode_wav, read_wav, write_wav};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Mono PCM clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Contract("clip must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Clip with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f32) -> Result<Self> {
        AudioClip::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }
}

/// Cuts `clip` into frames of `frame_s` seconds every `hop_s` seconds. A
/// trailing remainder shorter than one frame is dropped; a clip shorter than
/// one frame yields no frames.
pub fn frame_clip(clip: &AudioClip, frame_s: f64, hop_s: f64) -> Result<Vec<AudioClip>> {
    let rate = clip.sample_rate() as f64;
    let frame = (frame_s * rate).round() as usize;
    let hop = (hop_s * rate).round() as usize;
    if frame == 0 || hop == 0 {
        return Err(Error::Contract(format!(
            "frame {frame_s} s and hop {hop_s} s must span at least one sample"
        )));
    }
    if clip.len() < frame {
        return Ok(Vec::new());
    }
    let count = (clip.len() - frame) / hop + 1;
    (0..count)
        .map(|i| {
            AudioClip::new(
                clip.samples()[i * hop..i * hop + frame].to_vec(),
                clip.sample_rate(),
            )
        })
        .collect()
}

/// Resamples to the profile rate, cuts into example windows and
/// computes one spectrogram per window.
pub fn spectrograms_for_clip(clip: &AudioClip, front: &LogMel) -> Result<Vec<Spectrogram>> {
    let p = front.profile();
    let clip = resample(clip, p.sample_rate)?;
    frame_clip(&clip, p.example_window_s, p.example_hop_s)?
        .iter()
        .map(|f| front.compute(f))
        .collect()
}

/// One summary embedding (per-band mean and std) per example window:
/// an F×(2·mels) matrix.
pub fn summary_features(clip: &AudioClip, front: &LogMel) -> Result<Tensor<f32>> {
    let specs = spectrograms_for_clip(clip, front)?;
    let dim = 2 * front.profile().n_mels;
    let data: Vec<f32> = specs.iter().flat_map(spectral_summary).collect();
    Tensor::new(&[specs.len(), dim], data)
}
