//! Log-mel spectrogram frontend for the tone encoder.
//!
//! Audio is analyzed at 16 kHz with 25 ms Hann windows hopped every 10 ms,
//! zero-padded to a 1024-point FFT, projected onto 128 triangular mel
//! filters (HTK scale, unit-peak triangles) covering 0..8 kHz, and mapped
//! through a floored natural log. Output is channel-major, `[mel][frame]`,
//! so each mel channel is a contiguous time series ready for 1-D
//! convolution over time.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Power values below this are clamped before the log, so digital silence
/// maps to ln(1e-10) ~= -23.026 instead of -inf.
pub const LOG_FLOOR: f64 = 1e-10;

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    /// Analysis rate; clips must already be resampled to this. [Hz]
    pub sample_rate: u32,
    pub n_mels: usize,
    /// Analysis window length. [samples]
    pub win_len: usize,
    /// Hop between adjacent frames. [samples]
    pub hop: usize,
    /// FFT size; windows shorter than this are zero-padded. [samples]
    pub fft_len: usize,
    /// Lowest filter edge. [Hz]
    pub fmin: f64,
    /// Highest filter edge. [Hz]
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::ENCODER_RATE,
            n_mels: 128,
            win_len: 400,
            hop: 160,
            fft_len: 1024,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("mel: n_mels must be positive".into()));
        }
        if self.win_len == 0 || self.hop == 0 {
            return Err(Error::Config("mel: win_len and hop must be positive".into()));
        }
        if !self.fft_len.is_power_of_two() || self.fft_len < self.win_len {
            return Err(Error::Config(format!(
                "mel: fft_len {} must be a power of two >= win_len {}",
                self.fft_len, self.win_len
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "mel: need 0 <= fmin < fmax <= {nyquist}, got {}..{}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    /// Number of full analysis windows in a clip of `len` samples.
    pub fn n_frames_for(&self, len: usize) -> Result<usize> {
        if len < self.win_len {
            return Err(Error::Invalid(format!(
                "mel: clip of {len} samples shorter than window {}",
                self.win_len
            )));
        }
        Ok((len - self.win_len) / self.hop + 1)
    }
}

// ── Mel scale ───────────────────────────────────────────────────────────

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

// ── Filterbank ──────────────────────────────────────────────────────────

/// Precomputed window and sparse filterbank; build once, apply per clip.
pub struct MelBank<S: Scalar> {
    cfg: MelConfig,
    window: Vec<S>,
    /// Per filter: first FFT bin touched, then that filter's weights.
    filters: Vec<(usize, Vec<S>)>,
    centers_hz: Vec<f64>,
}

impl<S: Scalar> MelBank<S> {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let window: Vec<S> = (0..cfg.win_len)
            .map(|i| {
                let w = 0.5
                    * (1.0
                        - (2.0 * std::f64::consts::PI * i as f64 / cfg.win_len as f64).cos());
                S::from_f(w)
            })
            .collect();

        let n_bins = cfg.fft_len / 2 + 1;
        let hz_per_bin = cfg.sample_rate as f64 / cfg.fft_len as f64;
        let (m_lo, m_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(cfg.n_mels);
        let mut centers_hz = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            centers_hz.push(mid);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * hz_per_bin;
                let w = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(S::from_f(w));
                } else if start.is_some() {
                    break;
                }
            }
            let start = start.ok_or_else(|| {
                Error::Config(format!(
                    "mel: filter {m} covers no FFT bin (triangle {lo:.1}..{hi:.1} Hz \
                     narrower than bin spacing {hz_per_bin:.1} Hz)"
                ))
            })?;
            filters.push((start, weights));
        }
        Ok(Self { cfg, window, filters, centers_hz })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center frequency of mel channel `m`. [Hz]
    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Log-mel spectrogram of `x`, channel-major.
    pub fn compute(&self, x: &[S]) -> Result<MelSpec<S>> {
        let cfg = &self.cfg;
        let n_frames = cfg.n_frames_for(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("mel: non-finite samples".into()));
        }
        let n_bins = cfg.fft_len / 2 + 1;
        let fft = S::fft_forward(cfg.fft_len);

        let floor = S::from_f(LOG_FLOOR);
        let mut data = vec![S::zero(); cfg.n_mels * n_frames];
        let mut buf = vec![Complex::new(S::zero(), S::zero()); cfg.fft_len];
        let mut power = vec![S::zero(); n_bins];
        for t in 0..n_frames {
            let frame = &x[t * cfg.hop..t * cfg.hop + cfg.win_len];
            for (slot, (&v, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(v * w, S::zero());
            }
            for slot in buf.iter_mut().skip(cfg.win_len) {
                *slot = Complex::new(S::zero(), S::zero());
            }
            fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(buf.iter().take(n_bins)) {
                *p = c.norm_sqr();
            }
            for (m, (start, weights)) in self.filters.iter().enumerate() {
                let mut acc = S::zero();
                for (w, p) in weights.iter().zip(&power[*start..]) {
                    acc += *w * *p;
                }
                data[m * n_frames + t] = acc.max(floor).ln();
            }
        }
        Ok(MelSpec { n_mels: cfg.n_mels, n_frames, data })
    }
}

/// Channel-major log-mel grid: `data[m * n_frames + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec<S> {
    pub n_mels: usize,
    pub n_frames: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> MelSpec<S> {
    /// Contiguous time series of one mel channel.
    pub fn channel(&self, m: usize) -> &[S] {
        &self.data[m * self.n_frames..(m + 1) * self.n_frames]
    }
}

/// One-shot convenience wrapper over [`MelBank`].
pub fn mel_frontend<S: Scalar>(x: &[S], cfg: &MelConfig) -> Result<MelSpec<S>> {
    MelBank::new(*cfg)?.compute(x)
}
