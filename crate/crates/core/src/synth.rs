//! Seeded synthetic audio: cry-like harmonic bursts, distractor noise and
//! tones, labeled corpora and weakly labeled multi-segment files.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{write_wav, AudioClip, DatasetManifest, Label, ManifestEntry, Split};
use crate::error::{Error, Result};

fn peak_normalize(mut x: Vec<f64>, peak: f64) -> Vec<f32> {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// Amplitude-modulated harmonic burst with f0 in 350–550 Hz and mild
/// vibrato over a faint noise floor.
pub fn cry_clip<R: Rng>(rng: &mut R, sample_rate: u32, duration_s: f64) -> Result<AudioClip> {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let f0 = rng.gen_range(350.0..550.0);
    let vib_rate = rng.gen_range(4.0..7.0);
    let vib_depth = rng.gen_range(0.01..0.04);
    let burst_rate = rng.gen_range(2.0..4.0);
    let burst_phase = rng.gen_range(0.0..1.0);
    let harmonics = rng.gen_range(3..=6);
    let nyquist = sr / 2.0;
    let mut phase = 0.0;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
        phase += 2.0 * PI * f / sr;
        let env = (PI * (burst_rate * t + burst_phase)).sin().powi(2);
        let mut v = 0.0;
        for h in 1..=harmonics {
            if f * h as f64 >= nyquist {
                break;
            }
            v += (h as f64 * phase).sin() / h as f64;
        }
        let noise: f64 = StandardNormal.sample(rng);
        x.push(env * v + 0.005 * noise);
    }
    let peak = rng.gen_range(0.3..0.8);
    AudioClip::new(peak_normalize(x, peak), sample_rate)
}

/// Either band-limited noise (a random one-pole filter) or one or two
/// steady tones.
pub fn other_clip<R: Rng>(rng: &mut R, sample_rate: u32, duration_s: f64) -> Result<AudioClip> {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut x = Vec::with_capacity(n);
    if rng.gen_bool(0.5) {
        let a: f64 = rng.gen_range(0.05..0.95);
        let highpass = rng.gen_bool(0.5);
        let (mut lp, mut prev) = (0.0, 0.0);
        for _ in 0..n {
            let w: f64 = StandardNormal.sample(rng);
            lp += a * (w - lp);
            x.push(if highpass { w - prev } else { lp });
            prev = w;
        }
    } else {
        let tones: Vec<(f64, f64)> = (0..rng.gen_range(1..=2))
            .map(|_| (rng.gen_range(100.0..0.45 * sr), rng.gen_range(0.3..1.0)))
            .collect();
        for i in 0..n {
            let t = i as f64 / sr;
            x.push(
                tones
                    .iter()
                    .map(|(f, a)| a * (2.0 * PI * f * t).sin())
                    .sum(),
            );
        }
    }
    let peak = rng.gen_range(0.2..0.6);
    AudioClip::new(peak_normalize(x, peak), sample_rate)
}

/// 8:1:1 assignment by position within a class.
pub fn split_for(index: usize) -> Split {
    match index % 10 {
        8 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Writes `n_cry + n_other` one-clip WAV files under `dir/wav` plus
/// `dir/manifest.csv` (paths relative to `dir`).
pub fn write_corpus(
    dir: &Path,
    n_cry: usize,
    n_other: usize,
    sample_rate: u32,
    duration_s: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)
        .map_err(|e| Error::io(format!("creating {}", wav_dir.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (label, count) in [(Label::Cry, n_cry), (Label::Other, n_other)] {
        for i in 0..count {
            let clip = match label {
                Label::Cry => cry_clip(&mut rng, sample_rate, duration_s)?,
                Label::Other => other_clip(&mut rng, sample_rate, duration_s)?,
            };
            let rel = PathBuf::from("wav").join(format!("{}_{i:04}.wav", label.as_str()));
            write_wav(&dir.join(&rel), &clip)?;
            entries.push(ManifestEntry {
                path: rel,
                label,
                split: split_for(i),
            });
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    let mpath = dir.join("manifest.csv");
    std::fs::write(&mpath, manifest.to_csv())
        .map_err(|e| Error::io(format!("writing {}", mpath.display()), e))?;
    Ok(manifest)
}

/// A weakly labeled file of `segments` one-second pieces. Abnormal files
/// carry exactly one cry segment at a random position, which is returned.
pub fn bag_clip<R: Rng>(
    rng: &mut R,
    sample_rate: u32,
    segments: usize,
    abnormal: bool,
) -> Result<(AudioClip, Option<usize>)> {
    if segments == 0 {
        return Err(Error::Contract("a bag needs at least one segment".into()));
    }
    let planted = abnormal.then(|| rng.gen_range(0..segments));
    let mut samples = Vec::new();
    for s in 0..segments {
        let piece = if Some(s) == planted {
            cry_clip(rng, sample_rate, 1.0)?
        } else {
            other_clip(rng, sample_rate, 1.0)?
        };
        samples.extend_from_slice(piece.samples());
    }
    Ok((AudioClip::new(samples, sample_rate)?, planted))
}

/// Writes `n_abnormal + n_normal` bag files under `dir/wav` plus a
/// manifest with the 8:1:1 split; returns the manifest and the planted
/// segment of every entry.
pub fn write_bag_corpus(
    dir: &Path,
    n_abnormal: usize,
    n_normal: usize,
    segments: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<(DatasetManifest, Vec<Option<usize>>)> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)
        .map_err(|e| Error::io(format!("creating {}", wav_dir.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut planted = Vec::new();
    for (label, count) in [(Label::Cry, n_abnormal), (Label::Other, n_normal)] {
        for i in 0..count {
            let (clip, p) = bag_clip(&mut rng, sample_rate, segments, label.is_cry())?;
            let rel = PathBuf::from("wav").join(format!("bag_{}_{i:04}.wav", label.as_str()));
            write_wav(&dir.join(&rel), &clip)?;
            entries.push(ManifestEntry {
                path: rel,
                label,
                split: split_for(i),
            });
            planted.push(p);
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    let mpath = dir.join("manifest.csv");
    std::fs::write(&mpath, manifest.to_csv())
        .map_err(|e| Error::io(format!("writing {}", mpath.display()), e))?;
    Ok((manifest, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{load_manifest, read_wav};

    #[test]
    fn clips_have_requested_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = cry_clip(&mut rng, 8000, 1.0).unwrap();
            let o = other_clip(&mut rng, 16000, 0.5).unwrap();
            assert_eq!((c.len(), o.len()), (8000, 8000));
            assert!(c
                .samples()
                .iter()
                .chain(o.samples())
                .all(|v| v.abs() <= 0.8));
        }
    }

    #[test]
    fn bags_plant_one_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (clip, p) = bag_clip(&mut rng, 8000, 5, true).unwrap();
        assert_eq!(clip.len(), 40000);
        assert!(p.unwrap() < 5);
        assert_eq!(bag_clip(&mut rng, 8000, 5, false).unwrap().1, None);
    }

    #[test]
    fn corpus_is_deterministic_and_split() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = write_corpus(a.path(), 10, 10, 8000, 1.0, 7).unwrap();
        write_corpus(b.path(), 10, 10, 8000, 1.0, 7).unwrap();
        assert_eq!(m.split(Split::Train).count(), 16);
        assert_eq!(m.split(Split::Val).count(), 2);
        assert_eq!(m.split(Split::Test).count(), 2);
        let back = load_manifest(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(back.len(), 20);
        for e in &m.entries {
            let x = std::fs::read(a.path().join(&e.path)).unwrap();
            let y = std::fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(read_wav(&back.entries[0].path).unwrap().len(), 8000);
    }
}
