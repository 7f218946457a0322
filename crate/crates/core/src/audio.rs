//! Mono audio clips: WAV I/O, peak normalization, segmentation, resampling.
//!
//! Everything upstream of the models runs at [`RENDER_RATE`]; the tone
//! encoder consumes audio resampled to [`ENCODER_RATE`]. Level handling is
//! deliberately boring: clips are peak-normalized to a fixed dBFS target so
//! that the networks never see level as a free variable.


use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sample rate of the amp renderer and generator. [Hz]
pub const RENDER_RATE: u32 = 44_100;
/// Sample rate of the tone-encoder frontend. [Hz]
pub const ENCODER_RATE: u32 = 16_000;
/// Corpus-wide peak normalization target. [dBFS]
pub const TARGET_DBFS: f64 = -12.0;
/// Peaks below this are treated as silence; normalizing silence is an error.
pub const SILENCE_PEAK: f64 = 1e-9;

/// What a clip is used as. Purely informational; no op changes behavior on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clean,
    Wet,
    Reference,
}

/// A mono audio buffer plus its sample rate.
#[derive(Clone, Debug)]
pub struct AudioClip<S> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
    pub role: Role,
}

impl<S: Scalar> AudioClip<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32, role: Role) -> Self {
        Self { samples, sample_rate, role }
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &v| m.max(v.to_f().abs()))
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Rejects clips containing non-finite samples.
    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().any(|v| !v.to_f().is_finite()) {
            return Err(Error::Invalid("audio clip contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// dB (relative full scale) -> linear amplitude.
pub fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Linear amplitude -> dB. Amplitudes at or below zero are an error.
pub fn amp_to_db(amp: f64) -> Result<f64> {
    if amp <= 0.0 {
        return Err(Error::Invalid(format!("amp_to_db: non-positive amplitude {amp}")));
    }
    Ok(20.0 * amp.log10())
}

/// Scale `x` so its peak sits at `target_dbfs`.
///
/// Errors on empty, non-finite, or silent input (peak < [`SILENCE_PEAK`]).
/// Idempotent: renormalizing keeps the peak at the target.
pub fn peak_normalize<S: Scalar>(x: &[S], target_dbfs: f64) -> Result<Vec<S>> {
    if x.is_empty() {
        return Err(Error::Invalid("peak_normalize: empty input".into()));
    }
    let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.to_f().abs()));
    if !peak.is_finite() {
        return Err(Error::Invalid("peak_normalize: non-finite samples".into()));
    }
    if peak < SILENCE_PEAK {
        return Err(Error::Invalid(format!(
            "peak_normalize: input is silent (peak {peak:.3e} < {SILENCE_PEAK:.0e})"
        )));
    }
    let scale = db_to_amp(target_dbfs) / peak;
    Ok(x.iter().map(|&v| S::from_f(v.to_f() * scale)).collect())
}

/// Split `x` into consecutive segments of exactly `seg_len` samples.
///
/// The trailing remainder is dropped; input shorter than one segment yields
/// an empty list. `seg_len == 0` is an error.
pub fn segment<S: Scalar>(x: &[S], seg_len: usize) -> Result<Vec<Vec<S>>> {
    if seg_len == 0 {
        return Err(Error::Invalid("segment: segment length must be positive".into()));
    }
    Ok(x.chunks_exact(seg_len).map(|c| c.to_vec()).collect())
}

/// Windowed-sinc resampler.
///
/// Output length rule: `floor(len * to / from)`. The kernel is a Blackman
/// windowed sinc with cutoff at 0.45 of the lower Nyquist, normalized per
/// output phase so DC gain is exactly one. Alias rejection of the window
/// (-74 dB sidelobes) comfortably clears a -60 dB spur budget, and the
/// transition band stays below the target Nyquist.
///
/// Computation is done in f64 regardless of `S` so resampled corpora are
/// identical across pipeline scalar types.
pub fn resample<S: Scalar>(x: &[S], from: u32, to: u32) -> Result<Vec<S>> {
    if from == 0 || to == 0 {
        return Err(Error::Invalid(format!("resample: zero rate ({from} -> {to})")));
    }
    if from == to {
        return Ok(x.to_vec());
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }

    let out_len = ((x.len() as u128 * to as u128) / from as u128) as usize;
    let ratio = to as f64 / from as f64; // output samples per input sample
    let band = ratio.min(1.0);
    let nu = 0.45 * band; // kernel cutoff, cycles per input sample
    let half = (45.0 / band).ceil(); // kernel half-width, input samples
    let step = from as f64 / to as f64;

    let xs: Vec<f64> = x.iter().map(|&v| v.to_f()).collect();
    let n_in = xs.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 * step;
        let lo = ((center - half).ceil() as isize).max(0);
        let hi = ((center + half).floor() as isize).min(n_in - 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for i in lo..=hi {
            let t = i as f64 - center;
            let k = sinc(2.0 * nu * t) * blackman(t / half);
            acc += k * xs[i as usize];
            wsum += k;
        }
        out.push(S::from_f(acc / wsum));
    }
    Ok(out)
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let pu = std::f64::consts::PI * u;
        pu.sin() / pu
    }
}

/// Blackman window on [-1, 1], zero at the edges.
fn blackman(r: f64) -> f64 {
    let pr = std::f64::consts::PI * r;
    0.42 + 0.5 * pr.cos() + 0.08 * (2.0 * pr).cos()
}

/// WAV read/write. Mono only; 16-bit PCM and 32-bit float are supported.
pub mod wav {
    use std::path::Path;

    use super::{AudioClip, Role};
    use crate::error::{Error, Result};
    use crate::scalar::Scalar;

    fn map_hound(path: &Path, e: hound::Error) -> Error {
        match e {
            hound::Error::IoError(source) => Error::Io { path: path.to_path_buf(), source },
            other => Error::Invalid(format!("{}: {other}", path.display())),
        }
    }

    /// Read a mono WAV (16-bit PCM or 32-bit float). Non-mono files and
    /// non-finite samples are rejected.
    pub fn read_mono<S: Scalar>(path: &Path, role: Role) -> Result<AudioClip<S>> {
        let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Invalid(format!(
                "{}: expected mono, got {} channels",
                path.display(),
                spec.channels
            )));
        }
        let samples: Vec<S> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(|v| S::from_f(v as f64)))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?,
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| S::from_f(v as f64 / 32768.0)))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?,
            (fmt, bits) => {
                return Err(Error::Invalid(format!(
                    "{}: unsupported WAV format {fmt:?}/{bits} bits (want PCM16 or float32)",
                    path.display()
                )))
            }
        };
        let clip = AudioClip::new(samples, spec.sample_rate, role);
        clip.validate()?;
        Ok(clip)
    }

    /// Write 16-bit PCM. Samples are clamped to [-1, 1] before quantization.
    pub fn write_pcm16<S: Scalar>(path: &Path, samples: &[S], sample_rate: u32) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
        for &v in samples {
            let q = (v.to_f().clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(q).map_err(|e| map_hound(path, e))?;
        }
        writer.finalize().map_err(|e| map_hound(path, e))
    }

    /// Write 32-bit float WAV (bit-exact round trip for f32 pipelines).
    pub fn write_f32<S: Scalar>(path: &Path, samples: &[S], sample_rate: u32) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
        for &v in samples {
            writer.write_sample(v.to_f() as f32).map_err(|e| map_hound(path, e))?;
        }
        writer.finalize().map_err(|e| map_hound(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hann-windowed amplitude spectrum via phasor-recurrence DFT
    /// (independent of any FFT library).
    fn dft_amps(x: &[f64], max_bin: usize) -> Vec<f64> {
        let n = x.len();
        let w: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();
        let xw: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        let mut amps = Vec::with_capacity(max_bin);
        for k in 0..max_bin {
            let th = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (rot_c, rot_s) = (th.cos(), th.sin());
            let (mut pc, mut ps) = (1.0f64, 0.0f64);
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for &v in &xw {
                re += v * pc;
                im += v * ps;
                let npc = pc * rot_c - ps * rot_s;
                ps = pc * rot_s + ps * rot_c;
                pc = npc;
            }
            amps.push((re * re + im * im).sqrt());
        }
        amps
    }

    fn sine(freq: f64, amp: f64, rate: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn test_db_to_amp_known_points() {
        assert!((db_to_amp(0.0) - 1.0).abs() < 1e-12);
        assert!((db_to_amp(-6.0206) - 0.5).abs() < 1e-6);
        assert!((db_to_amp(-12.0) - 0.251_188_643).abs() < 1e-9);
        assert!((amp_to_db(0.5).unwrap() + 6.0206).abs() < 1e-4);
        assert!(amp_to_db(0.0).is_err());
    }

    #[test]
    fn test_peak_normalize_hits_target() {
        let x: Vec<f64> = sine(440.0, 0.9, 44_100, 4_410);
        let y = peak_normalize(&x, TARGET_DBFS).unwrap();
        let peak = y.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((peak - db_to_amp(TARGET_DBFS)).abs() < 1e-9, "peak {peak}");
    }

    #[test]
    fn test_peak_normalize_rejects_silence_and_empty() {
        assert!(peak_normalize(&[0.0f64; 128], TARGET_DBFS).is_err());
        assert!(peak_normalize(&[] as &[f64], TARGET_DBFS).is_err());
        assert!(peak_normalize(&[f64::NAN], TARGET_DBFS).is_err());
    }

    #[test]
    fn test_segment_counts_and_tail_drop() {
        let x = vec![1.0f64; 10];
        let segs = segment(&x, 3).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 3));
        assert!(segment(&x, 11).unwrap().is_empty());
        assert!(segment(&x, 0).is_err());
    }

    #[test]
    fn test_resample_length_rule() {
        // 3.5 s at 44.1 kHz -> exactly 56_000 samples at 16 kHz.
        let x = vec![0.1f32; 154_350];
        let y = resample(&x, RENDER_RATE, ENCODER_RATE).unwrap();
        assert_eq!(y.len(), 56_000);
        // Same rate passes through untouched.
        let z = resample(&x, RENDER_RATE, RENDER_RATE).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn test_resample_pure_tone_alias_floor() {
        // A 1 kHz tone must come through with all spurs below -60 dB.
        let x = sine(1000.0, 0.5, RENDER_RATE, 60_000);
        let y: Vec<f64> = resample(&x, RENDER_RATE, ENCODER_RATE).unwrap();
        let n = 8192;
        let mid = &y[4096..4096 + n];
        let amps = dft_amps(mid, n / 2);
        // 1 kHz is bin-centered: 1000 / (16000 / 8192) = 512.
        let fund_bin = 512;
        let fund = amps[fund_bin];
        let worst = amps
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k as isize - fund_bin as isize).unsigned_abs() > 4)
            .map(|(_, &a)| a)
            .fold(0.0f64, f64::max);
        assert!(fund > 0.1, "fundamental missing: {fund}");
        let rel_db = 20.0 * (worst / fund).log10();
        assert!(rel_db < -60.0, "worst spur {rel_db:.1} dB relative to fundamental");
    }

    #[test]
    fn test_resample_suppresses_out_of_band_tone() {
        // 10 kHz lies above the 8 kHz target Nyquist; it must not fold back.
        let x = sine(10_000.0, 0.5, RENDER_RATE, 60_000);
        let y: Vec<f64> = resample(&x, RENDER_RATE, ENCODER_RATE).unwrap();
        let n = 8192;
        let amps = dft_amps(&y[4096..4096 + n], n / 2);
        let worst = amps.iter().fold(0.0f64, |m, &a| m.max(a));
        // Hann-windowed amplitude of an in-band 0.5 tone would be ~0.25 * n / 2.
        let full_scale = 0.25 * n as f64 / 2.0;
        let rel_db = 20.0 * (worst / full_scale).log10();
        assert!(rel_db < -60.0, "folded residue at {rel_db:.1} dB");
    }

    #[test]
    fn test_wav_roundtrip_f32_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x: Vec<f32> = sine(440.0, 0.25, 44_100, 1000).iter().map(|&v| v as f32).collect();
        wav::write_f32(&path, &x, 44_100).unwrap();
        let clip: AudioClip<f32> = wav::read_mono(&path, Role::Clean).unwrap();
        assert_eq!(clip.sample_rate, 44_100);
        assert_eq!(clip.samples, x);
    }

    #[test]
    fn test_wav_roundtrip_pcm16_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x: Vec<f64> = sine(440.0, 0.25, 44_100, 1000);
        wav::write_pcm16(&path, &x, 44_100).unwrap();
        let clip: AudioClip<f64> = wav::read_mono(&path, Role::Clean).unwrap();
        for (a, b) in clip.samples.iter().zip(&x) {
            assert!((a - b).abs() <= 1.0 / 32_767.0);
        }
    }

    #[test]
    fn test_wav_rejects_stereo_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..64 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(wav::read_mono::<f32>(&stereo, Role::Clean).is_err());

        let nan = dir.path().join("nan.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&nan, spec).unwrap();
        w.write_sample(f32::NAN).unwrap();
        w.finalize().unwrap();
        assert!(wav::read_mono::<f32>(&nan, Role::Clean).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_peak_normalize_idempotent(scale in 1e-4f64..1e3, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            prop_assume!(x.iter().any(|v| v.abs() > SILENCE_PEAK * 10.0));
            let once = peak_normalize(&x, TARGET_DBFS).unwrap();
            let twice = peak_normalize(&once, TARGET_DBFS).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
