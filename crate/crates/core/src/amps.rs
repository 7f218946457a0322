//! Virtual amplifier chains: the rendering targets the models must emulate.
//!
//! Each amp is an offline chain
//!
//! ```text
//! pre_gain -> waveshaper -> tone stack -> power sat -> DC block -> cab IR -> trim
//! ```
//!
//! with deliberately audible parameter spread across three gain classes.
//! The bank carries nine "seen" amps (three per class) used for generator
//! training plus two held-out "unseen" amps (one high-gain, one low-gain)
//! reserved for zero-shot evaluation. Rendering is deterministic and
//! stateless across calls; configs are plain data and serialize to JSON.
//!
//! Rendering runs in `f64` regardless of the pipeline scalar so corpora are
//! byte-identical however the models are instantiated.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hard ceiling the rendered peak must stay under for any finite input.
pub const PEAK_CEILING: f64 = 4.0;
/// DC-blocker corner frequency. [Hz]
pub const DC_BLOCK_HZ: f64 = 10.0;
/// Cabinet impulse responses may not exceed this many taps.
pub const MAX_CAB_TAPS: usize = 2048;

// ── Waveshapers ─────────────────────────────────────────────────────────

/// Memoryless nonlinearity at the heart of each chain. All variants are
/// bounded, so the post-shaper level is independent of input level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Waveshaper {
    /// y = tanh(drive * x). Symmetric, odd harmonics only.
    Tanh { drive: f64 },
    /// y = tanh(drive * x + asymmetry) - tanh(asymmetry). The bias shifts
    /// the operating point, producing even harmonics and a DC component
    /// (removed later by the DC blocker).
    AsymmetricTanh { drive: f64, asymmetry: f64 },
    /// y = clamp(x, -level, level). Exactly linear below the threshold.
    HardClip { level: f64 },
    /// y = 1.5 * c(drive * x) with c(u) = u - u^3/3 clamped to +-2/3:
    /// the classic cubic soft clipper, rescaled to saturate at +-1.
    SoftClipCubic { drive: f64 },
}

impl Waveshaper {
    pub fn shape(&self, x: f64) -> f64 {
        match *self {
            Waveshaper::Tanh { drive } => (drive * x).tanh(),
            Waveshaper::AsymmetricTanh { drive, asymmetry } => {
                (drive * x + asymmetry).tanh() - asymmetry.tanh()
            }
            Waveshaper::HardClip { level } => x.clamp(-level, level),
            Waveshaper::SoftClipCubic { drive } => {
                let u = (drive * x).clamp(-1.0, 1.0);
                1.5 * (u - u * u * u / 3.0)
            }
        }
    }

    /// sup |shape(x)| over all real x; finite for every variant.
    pub fn output_bound(&self) -> f64 {
        match *self {
            Waveshaper::Tanh { .. } => 1.0,
            Waveshaper::AsymmetricTanh { asymmetry, .. } => 1.0 + asymmetry.tanh().abs(),
            Waveshaper::HardClip { level } => level,
            Waveshaper::SoftClipCubic { .. } => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Waveshaper::Tanh { drive } => drive > 0.0 && drive.is_finite(),
            Waveshaper::AsymmetricTanh { drive, asymmetry } => {
                drive > 0.0 && drive.is_finite() && asymmetry.abs() <= 2.0
            }
            Waveshaper::HardClip { level } => level > 0.0 && level.is_finite(),
            Waveshaper::SoftClipCubic { drive } => drive > 0.0 && drive.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid waveshaper parameters: {self:?}")))
        }
    }
}

// ── Tone stack ──────────────────────────────────────────────────────────

/// Low-shelf + mid-peak + high-shelf EQ (RBJ cookbook biquads, shelf slope 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneStackConfig {
    pub low_hz: f64,
    pub low_gain_db: f64,
    pub mid_hz: f64,
    pub mid_gain_db: f64,
    pub mid_q: f64,
    pub high_hz: f64,
    pub high_gain_db: f64,
}

impl ToneStackConfig {
    /// Flat (0 dB everywhere) stack; biquads reduce to exact identities.
    pub fn flat() -> Self {
        Self {
            low_hz: 120.0,
            low_gain_db: 0.0,
            mid_hz: 600.0,
            mid_gain_db: 0.0,
            mid_q: 0.7,
            high_hz: 3200.0,
            high_gain_db: 0.0,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq_guard = 0.45 * sample_rate as f64;
        for (name, f) in [("low_hz", self.low_hz), ("mid_hz", self.mid_hz), ("high_hz", self.high_hz)] {
            if !(20.0..=nyq_guard).contains(&f) {
                return Err(Error::Config(format!(
                    "tone stack {name} = {f} Hz outside (20, {nyq_guard}) at fs {sample_rate}"
                )));
            }
        }
        for (name, g) in [
            ("low_gain_db", self.low_gain_db),
            ("mid_gain_db", self.mid_gain_db),
            ("high_gain_db", self.high_gain_db),
        ] {
            if !(-24.0..=24.0).contains(&g) {
                return Err(Error::Config(format!("tone stack {name} = {g} dB outside +-24 dB")));
            }
        }
        if !(0.1..=4.0).contains(&self.mid_q) {
            return Err(Error::Config(format!("tone stack mid_q = {} outside (0.1, 4)", self.mid_q)));
        }
        Ok(())
    }
}

/// Direct-form II transposed biquad.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl Biquad {
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }
}

fn normalized(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Biquad {
    Biquad { b0: b0 / a0, b1: b1 / a0, b2: b2 / a0, a1: a1 / a0, a2: a2 / a0, s1: 0.0, s2: 0.0 }
}

fn low_shelf(fs: f64, f0: f64, gain_db: f64) -> Biquad {
    let a = 10f64.powf(gain_db / 40.0);
    let w = 2.0 * std::f64::consts::PI * f0 / fs;
    let (cw, sw) = (w.cos(), w.sin());
    let alpha = sw / 2.0 * 2f64.sqrt(); // shelf slope 1
    let sq = 2.0 * a.sqrt() * alpha;
    normalized(
        a * ((a + 1.0) - (a - 1.0) * cw + sq),
        2.0 * a * ((a - 1.0) - (a + 1.0) * cw),
        a * ((a + 1.0) - (a - 1.0) * cw - sq),
        (a + 1.0) + (a - 1.0) * cw + sq,
        -2.0 * ((a - 1.0) + (a + 1.0) * cw),
        (a + 1.0) + (a - 1.0) * cw - sq,
    )
}

fn high_shelf(fs: f64, f0: f64, gain_db: f64) -> Biquad {
    let a = 10f64.powf(gain_db / 40.0);
    let w = 2.0 * std::f64::consts::PI * f0 / fs;
    let (cw, sw) = (w.cos(), w.sin());
    let alpha = sw / 2.0 * 2f64.sqrt();
    let sq = 2.0 * a.sqrt() * alpha;
    normalized(
        a * ((a + 1.0) + (a - 1.0) * cw + sq),
        -2.0 * a * ((a - 1.0) + (a + 1.0) * cw),
        a * ((a + 1.0) + (a - 1.0) * cw - sq),
        (a + 1.0) - (a - 1.0) * cw + sq,
        2.0 * ((a - 1.0) - (a + 1.0) * cw),
        (a + 1.0) - (a - 1.0) * cw - sq,
    )
}

fn peaking(fs: f64, f0: f64, gain_db: f64, q: f64) -> Biquad {
    let a = 10f64.powf(gain_db / 40.0);
    let w = 2.0 * std::f64::consts::PI * f0 / fs;
    let (cw, sw) = (w.cos(), w.sin());
    let alpha = sw / (2.0 * q);
    normalized(
        1.0 + alpha * a,
        -2.0 * cw,
        1.0 - alpha * a,
        1.0 + alpha / a,
        -2.0 * cw,
        1.0 - alpha / a,
    )
}

struct ToneStack {
    stages: [Biquad; 3],
}

impl ToneStack {
    fn new(cfg: &ToneStackConfig, fs: f64) -> Self {
        Self {
            stages: [
                low_shelf(fs, cfg.low_hz, cfg.low_gain_db),
                peaking(fs, cfg.mid_hz, cfg.mid_gain_db, cfg.mid_q),
                high_shelf(fs, cfg.high_hz, cfg.high_gain_db),
            ],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        self.stages.iter_mut().fold(x, |v, bq| bq.process(v))
    }

    /// Empirical L1 norm of the impulse response: a rigorous amplification
    /// bound for the peak-ceiling check (tail past 16k samples negligible
    /// at the allowed Q range).
    fn l1_norm(cfg: &ToneStackConfig, fs: f64) -> f64 {
        let mut ts = ToneStack::new(cfg, fs);
        let mut acc = 0.0;
        for n in 0..16_384 {
            let x = if n == 0 { 1.0 } else { 0.0 };
            acc += ts.process(x).abs();
        }
        acc
    }
}

// ── DC blocker ──────────────────────────────────────────────────────────

/// First-order high-pass at [`DC_BLOCK_HZ`], unity gain at Nyquist.
/// Placed after the last nonlinearity: asymmetric shaping and power-stage
/// saturation both introduce DC that must not reach the corpus.
struct DcBlocker {
    r: f64,
    g: f64,
    x1: f64,
    y1: f64,
}

impl DcBlocker {
    fn new(fs: f64) -> Self {
        let r = (-2.0 * std::f64::consts::PI * DC_BLOCK_HZ / fs).exp();
        Self { r, g: (1.0 + r) / 2.0, x1: 0.0, y1: 0.0 }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.g * (x - self.x1) + self.r * self.y1;
        self.x1 = x;
        self.y1 = y;
        y
    }
}

// ── Cabinet impulse responses ───────────────────────────────────────────

/// Synthesize a cabinet IR: a direct spike plus exponentially decaying
/// noise, low-passed around `lowpass_hz`, zero-summed (no DC throughput),
/// and L1-normalized so convolution never amplifies peak level.
pub fn synthesize_cab_ir(seed: u64, taps: usize, lowpass_hz: f64) -> Result<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    if taps == 0 || taps > MAX_CAB_TAPS {
        return Err(Error::Config(format!("cab IR taps {taps} outside 1..={MAX_CAB_TAPS}")));
    }
    if !(500.0..=12_000.0).contains(&lowpass_hz) {
        return Err(Error::Config(format!("cab lowpass {lowpass_hz} Hz outside 500..=12000")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let fs = crate::audio::RENDER_RATE as f64;
    let tau = taps as f64 / 5.0; // decay constant, samples

    let mut ir: Vec<f64> = (0..taps)
        .map(|i| {
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let env = (-(i as f64) / tau).exp();
            0.6 * noise * env
        })
        .collect();
    ir[0] += 1.0; // direct sound

    // One-pole low pass shapes the speaker roll-off.
    let k = 1.0 - (-2.0 * std::f64::consts::PI * lowpass_hz / fs).exp();
    let mut state = 0.0;
    for v in ir.iter_mut() {
        state += k * (*v - state);
        *v = state;
    }

    if taps > 1 {
        let mean = ir.iter().sum::<f64>() / taps as f64;
        for v in ir.iter_mut() {
            *v -= mean;
        }
    }
    let l1: f64 = ir.iter().map(|v| v.abs()).sum();
    if l1 <= 0.0 {
        return Err(Error::Numeric("degenerate cab IR (zero energy)".into()));
    }
    for v in ir.iter_mut() {
        *v /= l1;
    }
    Ok(ir)
}

// ── Amp chain configuration ─────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainClass {
    HighGain,
    LowGain,
    Crunch,
}

impl std::fmt::Display for GainClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainClass::HighGain => "high_gain",
            GainClass::LowGain => "low_gain",
            GainClass::Crunch => "crunch",
        })
    }
}

/// Full parameter snapshot of one virtual amp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpChainConfig {
    pub amp_id: String,
    pub gain_class: GainClass,
    /// Seen amps participate in generator training; unseen amps are
    /// reserved for zero-shot evaluation.
    pub seen: bool,
    pub pre_gain: f64,
    pub waveshaper: Waveshaper,
    pub tone_stack: ToneStackConfig,
    /// Secondary power-stage saturation drive; 0 disables the stage.
    pub power_sat: f64,
    /// Seed the cabinet IR was synthesized from (provenance).
    pub cab_seed: u64,
    pub cab_ir: Vec<f64>,
    pub output_trim: f64,
}

impl AmpChainConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.amp_id.is_empty() {
            return Err(Error::Config("amp_id must not be empty".into()));
        }
        if !(self.pre_gain > 0.0 && self.pre_gain <= 200.0) {
            return Err(Error::Config(format!(
                "{}: pre_gain {} outside (0, 200]",
                self.amp_id, self.pre_gain
            )));
        }
        self.waveshaper.validate()?;
        self.tone_stack.validate(sample_rate)?;
        if !(self.power_sat >= 0.0 && self.power_sat <= 10.0) {
            return Err(Error::Config(format!(
                "{}: power_sat {} outside [0, 10]",
                self.amp_id, self.power_sat
            )));
        }
        if self.cab_ir.is_empty() || self.cab_ir.len() > MAX_CAB_TAPS {
            return Err(Error::Config(format!(
                "{}: cab IR has {} taps, want 1..={MAX_CAB_TAPS}",
                self.amp_id,
                self.cab_ir.len()
            )));
        }
        if self.cab_ir.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{}: cab IR contains non-finite taps", self.amp_id)));
        }
        if !(self.output_trim > 0.0 && self.output_trim <= 4.0) {
            return Err(Error::Config(format!(
                "{}: output_trim {} outside (0, 4]",
                self.amp_id, self.output_trim
            )));
        }
        let bound = self.peak_bound(sample_rate);
        if bound > PEAK_CEILING {
            return Err(Error::Config(format!(
                "{}: worst-case output peak {bound:.3} exceeds ceiling {PEAK_CEILING}",
                self.amp_id
            )));
        }
        Ok(())
    }

    /// Structural worst-case output peak for any finite input: the shaper
    /// output bound pushed through the L1 norms of every later stage.
    pub fn peak_bound(&self, sample_rate: u32) -> f64 {
        let fs = sample_rate as f64;
        let b_shaper = self.waveshaper.output_bound();
        let b_stack = b_shaper * ToneStack::l1_norm(&self.tone_stack, fs);
        let b_sat = if self.power_sat > 0.0 {
            let d = self.power_sat;
            // |tanh(d x)/tanh(d)| <= min(|x| d, 1) / tanh(d)
            (b_stack * d).min(1.0) / d.tanh()
        } else {
            b_stack
        };
        let b_dc = 2.0 * b_sat; // DC-blocker impulse response has L1 <= 2
        let l1_cab: f64 = self.cab_ir.iter().map(|v| v.abs()).sum();
        self.output_trim * l1_cab * b_dc
    }
}

// ── Rendering ───────────────────────────────────────────────────────────

/// Same-length convolution `x (*) ir`, truncated to `x.len()` samples.
/// Short kernels run directly; longer ones use FFT overlap-add.
fn convolve_same(x: &[f64], ir: &[f64]) -> Vec<f64> {
    if ir.len() <= 32 || x.len() < 4 * ir.len() {
        let mut y = vec![0.0; x.len()];
        for (n, out) in y.iter_mut().enumerate() {
            let kmax = ir.len().min(n + 1);
            let mut acc = 0.0;
            for k in 0..kmax {
                acc += ir[k] * x[n - k];
            }
            *out = acc;
        }
        return y;
    }

    let nfft = (4 * ir.len()).next_power_of_two().max(4096);
    let seg = nfft - ir.len() + 1;
    let fft = f64::fft_forward(nfft);
    let ifft = f64::fft_inverse(nfft);

    let mut h = vec![Complex::new(0.0, 0.0); nfft];
    for (i, &v) in ir.iter().enumerate() {
        h[i].re = v;
    }
    fft.process(&mut h);

    let mut y = vec![0.0; x.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let scale = 1.0 / nfft as f64;
    let mut start = 0;
    while start < x.len() {
        let end = (start + seg).min(x.len());
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i;
            *slot = Complex::new(if idx < end { x[idx] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (b, hh) in buf.iter_mut().zip(&h) {
            *b *= *hh;
        }
        ifft.process(&mut buf);
        for i in 0..nfft {
            let idx = start + i;
            if idx < x.len() {
                y[idx] += buf[i].re * scale;
            }
        }
        start = end;
    }
    y
}

/// Render a clean signal through an amp chain. Deterministic, stateless
/// across calls (filters start from rest every time), output length equals
/// input length, and the output peak stays below [`PEAK_CEILING`] for any
/// finite input by construction of [`AmpChainConfig::peak_bound`].
pub fn render(x: &[f64], sample_rate: u32, cfg: &AmpChainConfig) -> Result<Vec<f64>> {
    cfg.validate(sample_rate)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("{}: input contains non-finite samples", cfg.amp_id)));
    }
    let fs = sample_rate as f64;
    let mut stack = ToneStack::new(&cfg.tone_stack, fs);
    let mut dc = DcBlocker::new(fs);
    let sat_norm = if cfg.power_sat > 0.0 { cfg.power_sat.tanh() } else { 1.0 };

    let mut v: Vec<f64> = x
        .iter()
        .map(|&s| {
            let mut u = cfg.waveshaper.shape(cfg.pre_gain * s);
            u = stack.process(u);
            if cfg.power_sat > 0.0 {
                u = (cfg.power_sat * u).tanh() / sat_norm;
            }
            dc.process(u)
        })
        .collect();

    v = convolve_same(&v, &cfg.cab_ir);
    for s in v.iter_mut() {
        *s *= cfg.output_trim;
    }
    Ok(v)
}

// ── THD measurement ─────────────────────────────────────────────────────

/// Total harmonic distortion of a (roughly) sinusoidal signal at `f0`:
/// the RMS amplitude of harmonics 2..=10 over the fundamental amplitude,
/// measured with Hann-windowed projections. Harmonics at or above the
/// analysis guard (0.45 fs) are skipped.
pub fn measure_thd(x: &[f64], sample_rate: u32, f0: f64) -> Result<f64> {
    if !(20.0..2000.0).contains(&f0) {
        return Err(Error::Invalid(format!("measure_thd: f0 {f0} Hz outside (20, 2000)")));
    }
    let fs = sample_rate as f64;
    let min_len = (10.0 * fs / f0).ceil() as usize;
    if x.len() < min_len {
        return Err(Error::Invalid(format!(
            "measure_thd: need at least 10 periods ({min_len} samples), got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("measure_thd: non-finite samples".into()));
    }

    let n = x.len();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect();

    let project = |freq: f64| -> f64 {
        let th = -2.0 * std::f64::consts::PI * freq / fs;
        let (rc, rs) = (th.cos(), th.sin());
        let (mut pc, mut ps) = (1.0f64, 0.0f64);
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for i in 0..n {
            let v = x[i] * w[i];
            re += v * pc;
            im += v * ps;
            let npc = pc * rc - ps * rs;
            ps = pc * rs + ps * rc;
            pc = npc;
        }
        (re * re + im * im).sqrt()
    };

    let fund = project(f0);
    if fund < 1e-12 * n as f64 {
        return Err(Error::Numeric(format!("measure_thd: no fundamental at {f0} Hz")));
    }
    let mut harm_pow = 0.0;
    for h in 2..=10 {
        let fh = f0 * h as f64;
        if fh >= 0.45 * fs {
            break;
        }
        let a = project(fh);
        harm_pow += a * a;
    }
    Ok(harm_pow.sqrt() / fund)
}

// ── The bank ────────────────────────────────────────────────────────────

/// Build the fixed 11-amp bank: nine seen (three per gain class) and two
/// unseen (one high-gain, one low-gain) whose parameters sit inside the
/// spread of their seen classmates.
pub fn amp_bank() -> Vec<AmpChainConfig> {
    struct Spec {
        id: &'static str,
        class: GainClass,
        seen: bool,
        pre: f64,
        ws: Waveshaper,
        ts: [f64; 7], // low_hz, low_db, mid_hz, mid_db, mid_q, high_hz, high_db
        sat: f64,
        cab_seed: u64,
        cab_lp: f64,
        trim: f64,
    }
    use GainClass::*;
    use Waveshaper::*;
    let specs = [
        Spec { id: "high_a", class: HighGain, seen: true, pre: 40.0, ws: Tanh { drive: 1.0 }, ts: [110.0, 3.0, 700.0, -4.0, 0.8, 3600.0, 4.0], sat: 1.3, cab_seed: 0xA1, cab_lp: 4800.0, trim: 0.9 },
        Spec { id: "high_b", class: HighGain, seen: true, pre: 55.0, ws: AsymmetricTanh { drive: 1.0, asymmetry: 0.35 }, ts: [140.0, 4.0, 550.0, -6.0, 1.1, 4200.0, 5.0], sat: 1.5, cab_seed: 0xA2, cab_lp: 5400.0, trim: 0.85 },
        Spec { id: "high_c", class: HighGain, seen: true, pre: 30.0, ws: HardClip { level: 0.8 }, ts: [95.0, 2.0, 850.0, -3.0, 0.7, 3200.0, 3.0], sat: 1.1, cab_seed: 0xA3, cab_lp: 4400.0, trim: 0.95 },
        Spec { id: "crunch_a", class: Crunch, seen: true, pre: 6.0, ws: Tanh { drive: 1.0 }, ts: [120.0, 2.0, 650.0, 2.0, 0.9, 3000.0, 2.0], sat: 0.9, cab_seed: 0xB1, cab_lp: 5000.0, trim: 0.95 },
        Spec { id: "crunch_b", class: Crunch, seen: true, pre: 8.0, ws: SoftClipCubic { drive: 1.0 }, ts: [100.0, 3.0, 500.0, 1.5, 0.8, 3500.0, 3.0], sat: 1.0, cab_seed: 0xB2, cab_lp: 5600.0, trim: 0.9 },
        Spec { id: "crunch_c", class: Crunch, seen: true, pre: 5.0, ws: AsymmetricTanh { drive: 1.0, asymmetry: 0.2 }, ts: [130.0, 1.5, 750.0, 2.5, 1.0, 2800.0, 1.5], sat: 0.8, cab_seed: 0xB3, cab_lp: 4600.0, trim: 1.0 },
        Spec { id: "low_a", class: LowGain, seen: true, pre: 1.6, ws: Tanh { drive: 1.0 }, ts: [110.0, 1.5, 600.0, -1.0, 0.7, 3400.0, 2.5], sat: 0.6, cab_seed: 0xC1, cab_lp: 5200.0, trim: 1.0 },
        Spec { id: "low_b", class: LowGain, seen: true, pre: 2.2, ws: SoftClipCubic { drive: 0.5 }, ts: [90.0, 2.5, 700.0, -2.0, 0.8, 3800.0, 3.5], sat: 0.65, cab_seed: 0xC2, cab_lp: 5800.0, trim: 1.0 },
        Spec { id: "low_c", class: LowGain, seen: true, pre: 1.3, ws: HardClip { level: 0.9 }, ts: [150.0, 2.0, 450.0, -1.5, 0.9, 3100.0, 2.0], sat: 0.7, cab_seed: 0xC3, cab_lp: 4900.0, trim: 1.0 },
        Spec { id: "unseen_high", class: HighGain, seen: false, pre: 45.0, ws: Tanh { drive: 1.0 }, ts: [125.0, 3.5, 620.0, -5.0, 0.9, 3900.0, 4.5], sat: 1.4, cab_seed: 0xD1, cab_lp: 5100.0, trim: 0.9 },
        Spec { id: "unseen_low", class: LowGain, seen: false, pre: 1.9, ws: Tanh { drive: 1.0 }, ts: [100.0, 2.0, 650.0, -1.5, 0.75, 3600.0, 3.0], sat: 0.65, cab_seed: 0xD2, cab_lp: 5500.0, trim: 1.0 },
    ];

    specs
        .into_iter()
        .map(|s| AmpChainConfig {
            amp_id: s.id.to_string(),
            gain_class: s.class,
            seen: s.seen,
            pre_gain: s.pre,
            waveshaper: s.ws,
            tone_stack: ToneStackConfig {
                low_hz: s.ts[0],
                low_gain_db: s.ts[1],
                mid_hz: s.ts[2],
                mid_gain_db: s.ts[3],
                mid_q: s.ts[4],
                high_hz: s.ts[5],
                high_gain_db: s.ts[6],
            },
            power_sat: s.sat,
            cab_seed: s.cab_seed,
            cab_ir: synthesize_cab_ir(s.cab_seed, 256, s.cab_lp).expect("bank cab IR"),
            output_trim: s.trim,
        })
        .collect()
}

/// Serialize a bank to JSON (schema: array of [`AmpChainConfig`] records;
/// unknown keys rejected on load).
pub fn save_bank(path: &Path, bank: &[AmpChainConfig]) -> Result<()> {
    let json = serde_json::to_string_pretty(bank)
        .map_err(|e| Error::Config(format!("bank serialization: {e}")))?;
    std::fs::write(path, json).map_err(Error::io(path))
}

pub fn load_bank(path: &Path) -> Result<Vec<AmpChainConfig>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let bank: Vec<AmpChainConfig> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut ids = std::collections::BTreeSet::new();
    for amp in &bank {
        amp.validate(crate::audio::RENDER_RATE)?;
        if !ids.insert(amp.amp_id.clone()) {
            return Err(Error::Config(format!("duplicate amp_id {}", amp.amp_id)));
        }
    }
    Ok(bank)
}
