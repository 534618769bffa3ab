use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AudioClip;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Log-Mel analysis parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MelProfile {
    pub name: &'static str,
    pub sample_rate: u32,
    pub n_mels: usize,
    pub fft_window_s: f64,
    pub fft_hop_s: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub log_offset: f64,
    pub example_window_s: f64,
    pub example_hop_s: f64,
    /// (frames, mels)
    pub target_shape: (usize, usize),
}

impl MelProfile {
    /// Backbone input: 1 s at 8 kHz to 64×64. The nominal 8 kHz upper edge is
    /// clamped to Nyquist when the filterbank is built.
    pub fn blazenet() -> Self {
        MelProfile {
            name: "blazenet",
            sample_rate: 8000,
            n_mels: 64,
            fft_window_s: 0.064,
            fft_hop_s: 0.01475,
            fmin: 0.0,
            fmax: 8000.0,
            log_offset: 0.01,
            example_window_s: 1.0,
            example_hop_s: 1.0,
            target_shape: (64, 64),
        }
    }

    /// Backbone input for 5 s examples: window and hop scaled by 5 so the
    /// output stays 64×64.
    pub fn blazenet_5s() -> Self {
        MelProfile {
            name: "blazenet-5s",
            fft_window_s: 0.32,
            fft_hop_s: 0.07375,
            example_window_s: 5.0,
            example_hop_s: 5.0,
            ..Self::blazenet()
        }
    }

    /// Embedding-network input: 1 s at 16 kHz, 25 ms / 10 ms STFT, first 96
    /// frames kept.
    pub fn embedding() -> Self {
        MelProfile {
            name: "embedding",
            sample_rate: 16000,
            n_mels: 64,
            fft_window_s: 0.025,
            fft_hop_s: 0.01,
            fmin: 125.0,
            fmax: 7500.0,
            log_offset: 0.01,
            example_window_s: 1.0,
            example_hop_s: 1.0,
            target_shape: (96, 64),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "blazenet" => Some(Self::blazenet()),
            "blazenet-5s" => Some(Self::blazenet_5s()),
            "embedding" => Some(Self::embedding()),
            _ => None,
        }
    }

    pub fn window_len(&self) -> usize {
        (self.fft_window_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.fft_hop_s * self.sample_rate as f64).round() as usize
    }

    pub fn example_len(&self) -> usize {
        (self.example_window_s * self.sample_rate as f64).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    /// Upper band edge after clamping to Nyquist.
    pub fn effective_fmax(&self) -> f64 {
        self.fmax.min(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("profile {}: {m}", self.name)));
        if self.sample_rate == 0 || self.n_mels == 0 {
            return bad("sample rate and mel count must be positive".into());
        }
        if self.target_shape.0 == 0 || self.target_shape.1 == 0 {
            return bad(format!(
                "target shape {:?} must be positive",
                self.target_shape
            ));
        }
        if self.target_shape.1 != self.n_mels {
            return bad(format!(
                "target shape {:?} disagrees with {} mels",
                self.target_shape, self.n_mels
            ));
        }
        if self.fft_window_s <= self.fft_hop_s || self.hop_len() == 0 {
            return bad("fft window must exceed the hop".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.effective_fmax()) {
            return bad(format!(
                "fmin {} must be below fmax {}",
                self.fmin,
                self.effective_fmax()
            ));
        }
        let available = self.frames_available();
        if available < self.target_shape.0 {
            return bad(format!(
                "only {available} frames per example, need {}",
                self.target_shape.0
            ));
        }
        Ok(())
    }

    /// STFT frames produced by one example without padding.
    pub fn frames_available(&self) -> usize {
        let (n, w, h) = (self.example_len(), self.window_len(), self.hop_len());
        if n < w || h == 0 {
            0
        } else {
            1 + (n - w) / h
        }
    }
}

/// Log-Mel spectrogram, frames × mels.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Tensor<f32>,
    profile: MelProfile,
}

impl Spectrogram {
    pub fn new(data: Tensor<f32>, profile: MelProfile) -> Result<Self> {
        let (f, m) = profile.target_shape;
        if data.shape() != [f, m] {
            return Err(Error::Dimension(format!(
                "spectrogram {:?} does not match profile shape {:?}",
                data.shape(),
                profile.target_shape
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("spectrogram entry".into()));
        }
        Ok(Spectrogram { data, profile })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn profile(&self) -> &MelProfile {
        &self.profile
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn mels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn get(&self, frame: usize, mel: usize) -> f32 {
        self.data.data()[frame * self.mels() + mel]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter stored sparsely from `start` bin.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

/// HTK-scale triangular filterbank over the `n_fft/2 + 1` magnitude bins,
/// peak weight 1, no area normalization.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Vec<MelFilter> {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let full: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect();
            let start = full.iter().position(|&w| w > 0.0).unwrap_or(0);
            let end = full.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
            MelFilter {
                start,
                weights: full[start..end].to_vec(),
                center_hz: center,
            }
        })
        .collect()
}

/// Precomputed window, FFT plan and filterbank for one profile.
pub struct LogMel {
    profile: MelProfile,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filters: Vec<MelFilter>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("profile", &self.profile)
            .finish_non_exhaustive()
    }
}

impl LogMel {
    pub fn new(profile: MelProfile) -> Result<Self> {
        profile.validate()?;
        let fmax = profile.effective_fmax();
        if fmax < profile.fmax {
            log::info!(
                "profile {}: fmax {} Hz clamped to Nyquist {} Hz",
                profile.name,
                profile.fmax,
                fmax
            );
        }
        let win = profile.window_len();
        // Periodic Hann.
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
            .collect();
        let n_fft = profile.fft_size();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let filters = mel_filterbank(
            profile.sample_rate,
            n_fft,
            profile.n_mels,
            profile.fmin,
            fmax,
        );
        Ok(LogMel {
            profile,
            window,
            fft,
            filters,
        })
    }

    pub fn profile(&self) -> &MelProfile {
        &self.profile
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    /// Magnitude STFT → mel filterbank → `ln(energy + log_offset)`.
    pub fn compute(&self, frame: &AudioClip) -> Result<Spectrogram> {
        let p = &self.profile;
        if frame.sample_rate() != p.sample_rate {
            return Err(Error::ProfileMismatch(format!(
                "clip at {} Hz, profile {} expects {} Hz",
                frame.sample_rate(),
                p.name,
                p.sample_rate
            )));
        }
        if frame.len() != p.example_len() {
            return Err(Error::ProfileMismatch(format!(
                "clip has {} samples, profile {} expects {}",
                frame.len(),
                p.name,
                p.example_len()
            )));
        }
        let (n_frames, n_mels) = p.target_shape;
        let (win, hop, n_fft) = (p.window_len(), p.hop_len(), p.fft_size());
        let samples = frame.samples();
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut mags = vec![0.0f64; n_fft / 2 + 1];
        let mut out = Vec::with_capacity(n_frames * n_mels);
        for t in 0..n_frames {
            let seg = &samples[t * hop..t * hop + win];
            for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                *b = Complex::new(*s as f64 * w, 0.0);
            }
            buf[win..].fill(Complex::new(0.0, 0.0));
            self.fft.process(&mut buf);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for f in &self.filters {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&mags[f.start..])
                    .map(|(w, m)| w * m)
                    .sum();
                out.push((e + p.log_offset).ln() as f32);
            }
        }
        Spectrogram::new(Tensor::new(&[n_frames, n_mels], out)?, p.clone())
    }
}

/// One-shot convenience around [`LogMel`].
pub fn log_mel(frame: &AudioClip, profile: &MelProfile) -> Result<Spectrogram> {
    LogMel::new(profile.clone())?.compute(frame)
}

/// Per-band mean and standard deviation over time: a fixed-size summary
/// embedding of `2·mels` values.
pub fn spectral_summary(spec: &Spectrogram) -> Vec<f32> {
    let (f, m) = (spec.frames(), spec.mels());
    let mut out = Vec::with_capacity(2 * m);
    let mut stds = Vec::with_capacity(m);
    for b in 0..m {
        let col: Vec<f64> = (0..f).map(|t| spec.get(t, b) as f64).collect();
        let mean = col.iter().sum::<f64>() / f as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
        out.push(mean as f32);
        stds.push(var.sqrt() as f32);
    }
    out.extend(stds);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn blazenet_profile_arithmetic() {
        let p = MelProfile::blazenet();
        assert_eq!(p.window_len(), 512);
        assert_eq!(p.hop_len(), 118);
        assert_eq!(p.fft_size(), 512);
        // 1 + floor((8000 - 512) / 118)
        assert_eq!(p.frames_available(), 64);
        assert_eq!(p.effective_fmax(), 4000.0);
        let q = MelProfile::blazenet_5s();
        assert_eq!(
            (q.window_len(), q.hop_len(), q.example_len()),
            (2560, 590, 40000)
        );
        assert_eq!(q.frames_available(), 64);
        let e = MelProfile::embedding();
        assert_eq!((e.window_len(), e.hop_len()), (400, 160));
        assert_eq!(e.frames_available(), 98);
    }

    #[test]
    fn shapes_per_profile() {
        for p in [
            MelProfile::blazenet(),
            MelProfile::blazenet_5s(),
            MelProfile::embedding(),
        ] {
            let clip = tone(440.0, p.sample_rate, p.example_len(), 0.3);
            let s = log_mel(&clip, &p).unwrap();
            assert_eq!((s.frames(), s.mels()), p.target_shape, "{}", p.name);
        }
    }

    #[test]
    fn silence_is_log_offset() {
        let p = MelProfile::blazenet();
        let s = log_mel(&AudioClip::new(vec![0.0; 8000], 8000).unwrap(), &p).unwrap();
        let expect = (0.01f64).ln() as f32;
        assert!(s.data().data().iter().all(|&v| v == expect));
        assert!((expect + 4.6052).abs() < 1e-4);
    }

    #[test]
    fn rate_mismatch_is_profile_error() {
        let clip = tone(440.0, 16000, 16000, 0.3);
        assert!(matches!(
            log_mel(&clip, &MelProfile::blazenet()),
            Err(Error::ProfileMismatch(_))
        ));
        let short = tone(440.0, 8000, 4000, 0.3);
        assert!(matches!(
            log_mel(&short, &MelProfile::blazenet()),
            Err(Error::ProfileMismatch(_))
        ));
    }

    #[test]
    fn filterbank_structure() {
        for p in [MelProfile::blazenet(), MelProfile::embedding()] {
            let fb = mel_filterbank(
                p.sample_rate,
                p.fft_size(),
                p.n_mels,
                p.fmin,
                p.effective_fmax(),
            );
            assert_eq!(fb.len(), 64);
            for w in fb.windows(2) {
                assert!(w[1].center_hz > w[0].center_hz);
            }
            for f in &fb {
                assert!(!f.weights.is_empty(), "empty filter at {} Hz", f.center_hz);
                // Stored support is contiguous and strictly positive.
                assert!(f.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
            }
        }
    }

    #[test]
    fn tone_energy_lands_near_its_band() {
        let p = MelProfile::blazenet();
        let lm = LogMel::new(p.clone()).unwrap();
        let s = lm.compute(&tone(1000.0, 8000, 8000, 0.5)).unwrap();
        let row: Vec<f32> = (0..64).map(|m| s.get(10, m)).collect();
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
        let center = lm.filters()[best].center_hz;
        assert!((center - 1000.0).abs() < 60.0, "peak filter at {center} Hz");
    }

    #[test]
    fn hz_mel_round_trip() {
        for hz in [0.0, 125.0, 1000.0, 4000.0, 7500.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn summary_has_two_values_per_band() {
        let p = MelProfile::blazenet();
        let s = log_mel(&AudioClip::new(vec![0.0; 8000], 8000).unwrap(), &p).unwrap();
        let v = spectral_summary(&s);
        assert_eq!(v.len(), 128);
        assert!(v[64..].iter().all(|&x| x == 0.0));
    }
}
