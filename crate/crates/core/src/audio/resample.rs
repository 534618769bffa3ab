use super::AudioClip;
use crate::error::{Error, Result};

/// Half-width of the anti-alias filter, in taps per unit decimation ratio.
const TAPS_PER_RATIO: f64 = 16.0;
/// Cutoff as a fraction of the output Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;

/// Resamples with a Blackman-windowed sinc low-pass (only when decimating)
/// followed by linear interpolation. Output length is
/// `round(len · target_rate / source_rate)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Contract(
            "target sample rate must be positive".into(),
        ));
    }
    let src_rate = clip.sample_rate();
    if src_rate == target_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / src_rate as f64;
    let out_len = ((clip.len() as f64 * ratio).round() as usize).max(1);

    let filtered: Vec<f64> = if ratio < 1.0 {
        lowpass(clip.samples(), CUTOFF_FRACTION * 0.5 * ratio, 1.0 / ratio)
    } else {
        clip.samples().iter().map(|&v| v as f64).collect()
    };

    let last = filtered.len() - 1;
    let step = src_rate as f64 / target_rate as f64;
    let out: Vec<f32> = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            (filtered[i0] * (1.0 - frac) + filtered[i1] * frac).clamp(-1.0, 1.0) as f32
        })
        .collect();
    AudioClip::new(out, target_rate)
}

/// FIR low-pass with normalized cutoff `fc` (cycles/sample), unit DC gain,
/// zero-extended at the edges.
fn lowpass(x: &[f32], fc: f64, decimation: f64) -> Vec<f64> {
    let half = (TAPS_PER_RATIO * decimation).ceil() as isize;
    let n = (2 * half + 1) as f64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64;
            let sinc = if k == 0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let m = (k + half) as f64;
            let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * m / (n - 1.0)).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * m / (n - 1.0)).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);

    let len = x.len() as isize;
    (0..len)
        .map(|i| {
            let lo = (i - half).max(0);
            let hi = (i + half).min(len - 1);
            (lo..=hi)
                .map(|j| taps[(j - i + half) as usize] * x[j as usize] as f64)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> AudioClip {
        let s = (0..n)
            .map(|i| {
                (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32
            })
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    /// FFT-peak oracle: frequency of the largest magnitude bin.
    fn peak_hz(clip: &AudioClip) -> (f64, f64) {
        let n = clip.len();
        let mut buf: Vec<Complex<f64>> = clip
            .samples()
            .iter()
            .map(|&v| Complex::new(v as f64, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (bin, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let bin_hz = clip.sample_rate() as f64 / n as f64;
        (bin as f64 * bin_hz, bin_hz)
    }

    #[test]
    fn identity_rate() {
        let c = sine(440.0, 8000, 800, 0.5);
        assert_eq!(resample(&c, 8000).unwrap(), c);
    }

    #[test]
    fn halving_length() {
        let c = sine(440.0, 16000, 16000, 0.5);
        let r = resample(&c, 8000).unwrap();
        assert_eq!(r.len(), 8000);
        assert_eq!(r.sample_rate(), 8000);
    }

    #[test]
    fn sine_peak_survives_decimation() {
        let c = sine(440.0, 16000, 16000, 0.5);
        let r = resample(&c, 8000).unwrap();
        let (hz, bin) = peak_hz(&r);
        assert!((hz - 440.0).abs() <= bin, "peak at {hz} Hz");
    }

    #[test]
    fn upsampling_length_and_peak() {
        let c = sine(300.0, 8000, 8000, 0.5);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.len(), 16000);
        let (hz, bin) = peak_hz(&r);
        assert!((hz - 300.0).abs() <= bin);
    }

    #[test]
    fn out_of_band_tone_is_attenuated() {
        // 6 kHz is above the 4 kHz output Nyquist; it must not alias strongly.
        let c = sine(6000.0, 16000, 16000, 0.5);
        let r = resample(&c, 8000).unwrap();
        let rms =
            (r.samples().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        assert!(rms < 0.01, "rms {rms}");
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resample(&sine(1.0, 8000, 10, 0.1), 0).is_err());
    }
}
