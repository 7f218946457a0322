//! Short-time Fourier transform and the complex spectral training loss.
//!
//! The loss is the mean, over every (frame, bin) cell of a one-sided STFT,
//! of the complex-magnitude difference |STFT(yhat) - STFT(y)|. Because the
//! difference is taken on complex spectra (not magnitudes), the loss is
//! phase-sensitive: flipping the sign of a signal is maximally penalized
//! even though magnitude spectra match. An L1-over-real/imaginary variant
//! is available behind [`SpectralLossKind`].
//!
//! Forward transforms run on rustfft; the analytic gradient uses the
//! adjoint property of the (linear) STFT via an unnormalized inverse FFT.
//! Tests cross-check both loss and gradient against a naive O(N^2) DFT.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// STFT analysis parameters. Defaults: 2048-sample window, 512-sample hop,
/// periodic Hann, no center padding (frames cover `floor((T - W)/H) + 1`).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    /// Pad `window_len / 2` zeros on both ends before framing.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_len: 2048, hop: 512, center: false }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || !self.window_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "stft window length must be a power of two >= 2, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "stft hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    /// One-sided bin count (2048 -> 1025).
    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    fn padded<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        if self.center {
            let pad = self.window_len / 2;
            let mut y = vec![S::zero(); x.len() + 2 * pad];
            y[pad..pad + x.len()].copy_from_slice(x);
            y
        } else {
            x.to_vec()
        }
    }

    fn n_frames_for(&self, padded_len: usize) -> Result<usize> {
        if padded_len < self.window_len {
            return Err(Error::Invalid(format!(
                "stft input of {padded_len} samples is shorter than one {}-sample window",
                self.window_len
            )));
        }
        Ok((padded_len - self.window_len) / self.hop + 1)
    }
}

/// One-sided complex spectrogram, frame-major: `data[frame * n_bins + bin]`.
#[derive(Clone, Debug)]
pub struct Spectrogram<S> {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex<S>>,
}

impl<S: Scalar> Spectrogram<S> {
    pub fn magnitudes(&self) -> Vec<S> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window computed in f64 and cast to `S`.
fn hann<S: Scalar>(n: usize) -> Vec<S> {
    (0..n)
        .map(|i| {
            let c = (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            S::from_f(0.5 * (1.0 - c))
        })
        .collect()
}

/// One-sided STFT of a real signal.
pub fn stft<S: Scalar>(x: &[S], cfg: &StftConfig) -> Result<Spectrogram<S>> {
    cfg.validate()?;
    let padded = cfg.padded(x);
    let n_frames = cfg.n_frames_for(padded.len())?;
    let n = cfg.window_len;
    let n_bins = cfg.n_bins();
    let win = hann::<S>(n);

    let fft = S::fft_forward(n);
    let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for f in 0..n_frames {
        let s = f * cfg.hop;
        for i in 0..n {
            buf[i] = Complex::new(padded[s + i] * win[i], S::zero());
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram { n_frames, n_bins, data })
}

/// Which per-cell penalty the spectral loss applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralLossKind {
    /// |X - Y| (complex magnitude). The default objective.
    #[default]
    ComplexMag,
    /// |Re(X - Y)| + |Im(X - Y)|.
    L1ReIm,
}

fn check_same_len<S: Scalar>(yhat: &[S], y: &[S]) -> Result<()> {
    if yhat.len() != y.len() {
        return Err(Error::Invalid(format!(
            "spectral loss: length mismatch (estimate {}, target {})",
            yhat.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Mean per-cell spectral difference between an estimate and a target.
pub fn complex_stft_loss<S: Scalar>(
    yhat: &[S],
    y: &[S],
    cfg: &StftConfig,
    kind: SpectralLossKind,
) -> Result<S> {
    check_same_len(yhat, y)?;
    let sh = stft(yhat, cfg)?;
    let sy = stft(y, cfg)?;
    let mut acc = S::zero();
    for (a, b) in sh.data.iter().zip(&sy.data) {
        let d = a - b;
        acc += match kind {
            SpectralLossKind::ComplexMag => d.norm(),
            SpectralLossKind::L1ReIm => d.re.abs() + d.im.abs(),
        };
    }
    Ok(acc / S::from_n(sh.data.len()))
}

/// Loss plus its analytic gradient with respect to `yhat`.
///
/// The STFT is linear, so the gradient is the STFT adjoint applied to the
/// per-cell subgradients: for each frame, an unnormalized inverse FFT of the
/// (zero-extended) one-sided subgradient spectrum, windowed and scattered
/// back onto the sample axis. Cells where the difference is exactly zero
/// contribute a zero subgradient.
pub fn complex_stft_loss_grad<S: Scalar>(
    yhat: &[S],
    y: &[S],
    cfg: &StftConfig,
    kind: SpectralLossKind,
) -> Result<(S, Vec<S>)> {
    check_same_len(yhat, y)?;
    cfg.validate()?;
    let padded_h = cfg.padded(yhat);
    let padded_y = cfg.padded(y);
    let n_frames = cfg.n_frames_for(padded_h.len())?;
    let n = cfg.window_len;
    let n_bins = cfg.n_bins();
    let win = hann::<S>(n);
    let cells = S::from_n(n_frames * n_bins);

    let fft = S::fft_forward(n);
    let ifft = S::fft_inverse(n);

    let mut buf_h = vec![Complex::new(S::zero(), S::zero()); n];
    let mut buf_y = vec![Complex::new(S::zero(), S::zero()); n];
    let mut gbuf = vec![Complex::new(S::zero(), S::zero()); n];
    let mut grad_padded = vec![S::zero(); padded_h.len()];
    let mut loss = S::zero();

    for f in 0..n_frames {
        let s = f * cfg.hop;
        for i in 0..n {
            buf_h[i] = Complex::new(padded_h[s + i] * win[i], S::zero());
            buf_y[i] = Complex::new(padded_y[s + i] * win[i], S::zero());
        }
        fft.process(&mut buf_h);
        fft.process(&mut buf_y);

        for g in gbuf.iter_mut() {
            *g = Complex::new(S::zero(), S::zero());
        }
        for k in 0..n_bins {
            let d = buf_h[k] - buf_y[k];
            match kind {
                SpectralLossKind::ComplexMag => {
                    let m = d.norm();
                    loss += m;
                    if m > S::zero() {
                        gbuf[k] = d / m;
                    }
                }
                SpectralLossKind::L1ReIm => {
                    loss += d.re.abs() + d.im.abs();
                    gbuf[k] = Complex::new(sign(d.re), sign(d.im));
                }
            }
        }
        // Adjoint of the one-sided analysis: unnormalized sum over kept bins.
        ifft.process(&mut gbuf);
        for i in 0..n {
            grad_padded[s + i] += gbuf[i].re * win[i] / cells;
        }
    }

    let grad = if cfg.center {
        let pad = cfg.window_len / 2;
        grad_padded[pad..pad + yhat.len()].to_vec()
    } else {
        grad_padded
    };
    Ok((loss / cells, grad))
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(N^2) DFT spectral loss, written from the definition.
    fn naive_loss(yhat: &[f64], y: &[f64], cfg: &StftConfig, kind: SpectralLossKind) -> f64 {
        let n = cfg.window_len;
        let n_bins = n / 2 + 1;
        let frames = (yhat.len() - n) / cfg.hop + 1;
        let w: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();
        let mut acc = 0.0;
        for f in 0..frames {
            let s = f * cfg.hop;
            for k in 0..n_bins {
                let (mut hr, mut hi, mut yr, mut yi) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    let th = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    let (c, si) = (th.cos(), th.sin());
                    hr += yhat[s + i] * w[i] * c;
                    hi += yhat[s + i] * w[i] * si;
                    yr += y[s + i] * w[i] * c;
                    yi += y[s + i] * w[i] * si;
                }
                let (dr, di) = (hr - yr, hi - yi);
                acc += match kind {
                    SpectralLossKind::ComplexMag => (dr * dr + di * di).sqrt(),
                    SpectralLossKind::L1ReIm => dr.abs() + di.abs(),
                };
            }
        }
        acc / (frames * n_bins) as f64
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    const SMALL: StftConfig = StftConfig { window_len: 256, hop: 64, center: false };

    #[test]
    fn test_frame_count_default_config() {
        let x = vec![0.25f32; 4096];
        let s = stft(&x, &StftConfig::default()).unwrap();
        assert_eq!(s.n_frames, 5);
        assert_eq!(s.n_bins, 1025);
    }

    #[test]
    fn test_frame_count_with_center_padding() {
        let x = vec![0.25f32; 4096];
        let cfg = StftConfig { window_len: 256, hop: 64, center: true };
        let s = stft(&x, &cfg).unwrap();
        assert_eq!(s.n_frames, 4096 / 64 + 1);
    }

    #[test]
    fn test_loss_identity_is_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_vec(&mut rng, 1024);
        let b = rand_vec(&mut rng, 1024);
        assert_eq!(complex_stft_loss(&a, &a, &SMALL, SpectralLossKind::ComplexMag).unwrap(), 0.0);
        let ab = complex_stft_loss(&a, &b, &SMALL, SpectralLossKind::ComplexMag).unwrap();
        let ba = complex_stft_loss(&b, &a, &SMALL, SpectralLossKind::ComplexMag).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn test_loss_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_vec(&mut rng, 1024);
        let b = rand_vec(&mut rng, 1024);
        for kind in [SpectralLossKind::ComplexMag, SpectralLossKind::L1ReIm] {
            let fast = complex_stft_loss(&a, &b, &SMALL, kind).unwrap();
            let slow = naive_loss(&a, &b, &SMALL, kind);
            assert!(
                (fast - slow).abs() / slow.abs() < 1e-5,
                "{kind:?}: fast {fast} vs naive {slow}"
            );
        }
    }

    #[test]
    fn test_sine_vs_zero_equals_mean_magnitude() {
        let x: Vec<f64> = (0..2048)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 44_100.0).sin())
            .collect();
        let zeros = vec![0.0f64; x.len()];
        let loss = complex_stft_loss(&x, &zeros, &SMALL, SpectralLossKind::ComplexMag).unwrap();
        let naive = naive_loss(&x, &zeros, &SMALL, SpectralLossKind::ComplexMag);
        assert!((loss - naive).abs() / naive < 1e-5);
        assert!(loss > 0.0);
    }

    #[test]
    fn test_phase_sensitivity_sign_flip() {
        // Magnitude spectra of y and -y are identical; the complex loss
        // must still see the full 2*|STFT(y)| gap.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = rand_vec(&mut rng, 1024);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let zeros = vec![0.0f64; y.len()];
        let flip = complex_stft_loss(&neg, &y, &SMALL, SpectralLossKind::ComplexMag).unwrap();
        let mag = complex_stft_loss(&y, &zeros, &SMALL, SpectralLossKind::ComplexMag).unwrap();
        assert!((flip - 2.0 * mag).abs() / flip < 1e-9, "flip {flip} vs 2*mag {}", 2.0 * mag);
    }

    #[test]
    fn test_parseval_per_frame() {
        // Windowed frame energy equals (1/N) * one-sided spectral energy
        // with interior bins counted twice.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 512;
        let x = rand_vec(&mut rng, n);
        let cfg = StftConfig { window_len: n, hop: n, center: false };
        let s = stft(&x, &cfg).unwrap();
        assert_eq!(s.n_frames, 1);
        let w: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();
        let time_energy: f64 = x.iter().zip(&w).map(|(v, wi)| (v * wi) * (v * wi)).sum();
        let mut spec_energy = s.data[0].norm_sqr() + s.data[n / 2].norm_sqr();
        for k in 1..n / 2 {
            spec_energy += 2.0 * s.data[k].norm_sqr();
        }
        spec_energy /= n as f64;
        assert!(
            (time_energy - spec_energy).abs() / time_energy < 1e-9,
            "time {time_energy} vs spec {spec_energy}"
        );
    }

    #[test]
    fn test_error_cases() {
        let x = vec![0.0f64; 512];
        let y = vec![0.0f64; 513];
        assert!(complex_stft_loss(&x, &y, &SMALL, SpectralLossKind::ComplexMag).is_err());
        assert!(stft(&x[..100], &SMALL).is_err());
        assert!(stft(&x, &StftConfig { window_len: 300, hop: 64, center: false }).is_err());
        assert!(stft(&x, &StftConfig { window_len: 256, hop: 0, center: false }).is_err());
        assert!(stft(&x, &StftConfig { window_len: 256, hop: 257, center: false }).is_err());
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let yhat = rand_vec(&mut rng, 640);
        let y = rand_vec(&mut rng, 640);
        for kind in [SpectralLossKind::ComplexMag, SpectralLossKind::L1ReIm] {
            let (_, grad) = complex_stft_loss_grad(&yhat, &y, &SMALL, kind).unwrap();
            let h = 1e-6;
            for probe in 0..48 {
                let idx = (probe * 13) % yhat.len();
                let mut plus = yhat.clone();
                plus[idx] += h;
                let mut minus = yhat.clone();
                minus[idx] -= h;
                let lp = complex_stft_loss(&plus, &y, &SMALL, kind).unwrap();
                let lm = complex_stft_loss(&minus, &y, &SMALL, kind).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
                assert!(
                    (fd - grad[idx]).abs() / denom < 1e-3,
                    "{kind:?} idx {idx}: analytic {} vs fd {fd}",
                    grad[idx]
                );
            }
        }
    }

    #[test]
    fn test_gradient_with_center_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cfg = StftConfig { window_len: 256, hop: 64, center: true };
        let yhat = rand_vec(&mut rng, 300);
        let y = rand_vec(&mut rng, 300);
        let (_, grad) = complex_stft_loss_grad(&yhat, &y, &cfg, SpectralLossKind::ComplexMag).unwrap();
        assert_eq!(grad.len(), yhat.len());
        let h = 1e-6;
        for idx in [0usize, 150, 299] {
            let mut plus = yhat.clone();
            plus[idx] += h;
            let mut minus = yhat.clone();
            minus[idx] -= h;
            let lp = complex_stft_loss(&plus, &y, &cfg, SpectralLossKind::ComplexMag).unwrap();
            let lm = complex_stft_loss(&minus, &y, &cfg, SpectralLossKind::ComplexMag).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
            assert!((fd - grad[idx]).abs() / denom < 1e-3);
        }
    }
}
