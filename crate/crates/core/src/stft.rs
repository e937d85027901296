//! Short-time Fourier transform with perfect reconstruction.
//!
//! Signals are padded with `win_len - hop` leading zeros so that every
//! original sample is covered by a full set of overlapping frames, which
//! makes `istft(stft(x)) == x` hold on the whole signal. Frame `t` starts at
//! original sample `t * hop - (win_len - hop)`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array4};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// Square-root periodic Hann for both analysis and synthesis.
    SqrtHann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate: 16_000,
            win_len: 512,
            hop: 256,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    /// Half-overlap square-root Hann at the given window length.
    pub fn with_window(sample_rate: u32, win_len: usize) -> Self {
        StftConfig {
            sample_rate,
            win_len,
            hop: win_len / 2,
            window: Window::SqrtHann,
        }
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    pub fn pad_front(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn frames_for(&self, len: usize) -> usize {
        (self.pad_front() + len - 1) / self.hop + 1
    }

    /// First original sample influenced by frame `t` (may be negative).
    pub fn frame_start(&self, t: usize) -> isize {
        (t * self.hop) as isize - self.pad_front() as isize
    }

    /// The overlap-add envelope `sum_k w_a w_s` when it is constant.
    pub fn cola_constant(&self) -> Result<f64> {
        if self.win_len < 2 || self.win_len % 2 != 0 {
            return Err(invalid(format!("win_len must be even and >= 2, got {}", self.win_len)));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(invalid(format!("hop must lie in 1..=win_len, got {}", self.hop)));
        }
        if self.sample_rate == 0 {
            return Err(invalid("sample_rate must be positive"));
        }
        let w = self.window.coefficients(self.win_len);
        let envelope: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.win_len)
                    .step_by(self.hop)
                    .map(|k| w[k] * w[k])
                    .sum::<f64>()
            })
            .collect();
        let c = envelope[0];
        if c <= 0.0 || envelope.iter().any(|e| (e - c).abs() > 1e-10 * c) {
            return Err(invalid(format!(
                "window/hop pair ({}, {}) violates the overlap-add condition",
                self.win_len, self.hop
            )));
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.cola_constant().map(|_| ())
    }
}

/// Complex spectrogram `[T frames, F bins]` of a real signal of `len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    pub len: usize,
}

impl Spectrogram {
    pub fn zeros(config: StftConfig, len: usize) -> Self {
        Spectrogram {
            data: Array2::zeros((config.frames_for(len), config.bins())),
            config,
            len,
        }
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn ensure_compatible(&self, other: &Spectrogram, context: &'static str) -> Result<()> {
        if self.config != other.config || self.len != other.len {
            return Err(invalid(format!("{context}: spectrograms use different configurations")));
        }
        if self.data.dim() != other.data.dim() {
            return Err(shape_err(
                context,
                format!("{:?}", self.data.dim()),
                format!("{:?}", other.data.dim()),
            ));
        }
        Ok(())
    }

    /// Scaled copy.
    pub fn scaled(&self, g: f64) -> Spectrogram {
        Spectrogram {
            data: self.data.mapv(|z| z * g),
            config: self.config,
            len: self.len,
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl std::ops::Add for &Spectrogram {
    type Output = Spectrogram;
    fn add(self, rhs: &Spectrogram) -> Spectrogram {
        assert_eq!(self.data.dim(), rhs.data.dim(), "spectrogram shapes differ");
        Spectrogram {
            data: &self.data + &rhs.data,
            config: self.config,
            len: self.len,
        }
    }
}

/// Planned transforms for one configuration. Cheap to clone and `Sync`.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Arc<[f64]>,
    cola: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        let cola = config.cola_constant()?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            config,
            window: config.window.coefficients(config.win_len).into(),
            cola,
            forward: planner.plan_fft_forward(config.win_len),
            inverse: planner.plan_fft_inverse(config.win_len),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn stft(&self, signal: &[f64]) -> Result<Spectrogram> {
        let cfg = &self.config;
        if signal.len() < cfg.win_len {
            return Err(invalid(format!(
                "signal of {} samples is shorter than the {}-sample window",
                signal.len(),
                cfg.win_len
            )));
        }
        let frames = cfg.frames_for(signal.len());
        let bins = cfg.bins();
        let pad = cfg.pad_front();
        let mut data = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.win_len];
        for t in 0..frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                let idx = (t * cfg.hop + n) as isize - pad as isize;
                let x = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(x * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                data[[t, k]] = buf[k];
            }
        }
        Ok(Spectrogram {
            data,
            config: *cfg,
            len: signal.len(),
        })
    }

    pub fn istft(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if spec.config != *cfg {
            return Err(invalid("spectrogram was computed with a different STFT configuration"));
        }
        let frames = cfg.frames_for(spec.len);
        if spec.data.dim() != (frames, cfg.bins()) {
            return Err(shape_err(
                "istft",
                format!("({frames}, {})", cfg.bins()),
                format!("{:?}", spec.data.dim()),
            ));
        }
        let n_fft = cfg.win_len;
        let pad = cfg.pad_front();
        let scale = 1.0 / (n_fft as f64 * self.cola);
        let mut out = vec![0.0; spec.len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            let row = spec.data.row(t);
            buf[0] = row[0];
            for k in 1..n_fft / 2 {
                buf[k] = row[k];
                buf[n_fft - k] = row[k].conj();
            }
            buf[n_fft / 2] = row[n_fft / 2];
            self.inverse.process(&mut buf);
            for (n, z) in buf.iter().enumerate() {
                let idx = (t * cfg.hop + n) as isize - pad as isize;
                if idx >= 0 && (idx as usize) < out.len() {
                    out[idx as usize] += z.re * self.window[n] * scale;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Stft::istft`] for a signal of `len` samples, with the
    /// real and imaginary parts of each bin treated as independent reals.
    /// Maps a gradient over time samples onto a gradient over bins.
    pub fn istft_adjoint(&self, grad: &[f64]) -> Array2<Complex64> {
        let cfg = &self.config;
        let frames = cfg.frames_for(grad.len());
        let bins = cfg.bins();
        let n_fft = cfg.win_len;
        let pad = cfg.pad_front();
        let scale = 1.0 / (n_fft as f64 * self.cola);
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                let idx = (t * cfg.hop + n) as isize - pad as isize;
                let g = if idx >= 0 && (idx as usize) < grad.len() {
                    grad[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(g * self.window[n] * scale, 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                let weight = if k == 0 || k == n_fft / 2 { 1.0 } else { 2.0 };
                out[[t, k]] = buf[k] * weight;
            }
        }
        out
    }
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.stft(signal)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.config)?.istft(spec)
}

/// Real/imaginary parts of `Q` microphone spectra, `[B, T, F, 2Q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub data: Array4<f64>,
}

impl FeatureBlock {
    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    /// Concatenates single-item blocks along the batch axis.
    pub fn concat(blocks: &[&FeatureBlock]) -> Result<FeatureBlock> {
        let first = blocks.first().ok_or_else(|| invalid("cannot concatenate zero blocks"))?;
        let (_, t, f, c) = first.data.dim();
        let total: usize = blocks.iter().map(|b| b.batch()).sum();
        let mut data = Array4::zeros((total, t, f, c));
        let mut at = 0;
        for b in blocks {
            if b.data.dim() != (b.batch(), t, f, c) {
                return Err(shape_err(
                    "feature concat",
                    format!("(_, {t}, {f}, {c})"),
                    format!("{:?}", b.data.dim()),
                ));
            }
            data.slice_mut(ndarray::s![at..at + b.batch(), .., .., ..]).assign(&b.data);
            at += b.batch();
        }
        Ok(FeatureBlock { data })
    }
}

pub fn stack_features(specs: &[Spectrogram]) -> Result<FeatureBlock> {
    let first = specs.first().ok_or_else(|| invalid("need at least one spectrogram"))?;
    for s in &specs[1..] {
        first.ensure_compatible(s, "stack_features")?;
    }
    let (t, f) = first.data.dim();
    let q = specs.len();
    let mut data = Array4::zeros((1, t, f, 2 * q));
    for (qi, s) in specs.iter().enumerate() {
        for ((ti, fi), z) in s.data.indexed_iter() {
            data[[0, ti, fi, 2 * qi]] = z.re;
            data[[0, ti, fi, 2 * qi + 1]] = z.im;
        }
    }
    Ok(FeatureBlock { data })
}

/// Inverse of [`stack_features`] for batch item `b`.
pub fn unstack_features(block: &FeatureBlock, b: usize, config: StftConfig, len: usize) -> Result<Vec<Spectrogram>> {
    let (batch, t, f, c) = block.data.dim();
    if b >= batch || c % 2 != 0 {
        return Err(shape_err("unstack_features", format!("item < {batch}, even channels"), format!("item {b}, {c} channels")));
    }
    Ok((0..c / 2)
        .map(|q| {
            let data = Array2::from_shape_fn((t, f), |(ti, fi)| {
                Complex64::new(block.data[[b, ti, fi, 2 * q]], block.data[[b, ti, fi, 2 * q + 1]])
            });
            Spectrogram { data, config, len }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let s = stft(&vec![0.0; 2048], &StftConfig::default()).unwrap();
        assert_eq!(s.bins(), 257);
        assert!(s.data.iter().all(|z| z.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bin_centered_sinusoid_concentrates() {
        let cfg = StftConfig::with_window(16_000, 128);
        let k0 = 10;
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 128.0).cos())
            .collect();
        let s = stft(&x, &cfg).unwrap();
        let t = s.frames() / 2;
        let row = s.data.row(t);
        let (peak, _) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        assert_eq!(peak, k0);
        // sqrt-Hann leaks into neighbours only
        let far = row
            .iter()
            .enumerate()
            .filter(|(k, _)| k.abs_diff(k0) > 2)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max);
        assert!(far < 0.05 * row[k0].norm());
    }

    #[test]
    fn parseval_with_window_energy() {
        let cfg = StftConfig::with_window(16_000, 256);
        let x = noise(16_000, 3);
        let s = stft(&x, &cfg).unwrap();
        let n = cfg.win_len;
        let spectral: f64 = s
            .data
            .indexed_iter()
            .map(|((_, k), z)| {
                let w = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                w * z.norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        // sum_t w^2 is the COLA constant at every covered sample
        let temporal: f64 = x.iter().map(|v| v * v).sum::<f64>() * cfg.cola_constant().unwrap();
        assert!((spectral - temporal).abs() / temporal < 1e-6);
    }

    #[test]
    fn round_trip_is_exact() {
        for (win, len) in [(512, 16_000), (128, 4_001), (256, 256), (14, 29)] {
            let cfg = StftConfig::with_window(16_000, win);
            let x = noise(len, win as u64);
            let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
            assert_eq!(y.len(), x.len());
            assert!(rel_err(&y, &x) < 1e-12, "win {win}");
        }
    }

    #[test]
    fn istft_is_linear() {
        let cfg = StftConfig::with_window(16_000, 128);
        let a = stft(&noise(3000, 1), &cfg).unwrap();
        let b = stft(&noise(3000, 2), &cfg).unwrap();
        let lhs = istft(&(&a + &b)).unwrap();
        let ra = istft(&a).unwrap();
        let rb = istft(&b).unwrap();
        for i in 0..lhs.len() {
            assert_abs_diff_eq!(lhs[i], ra[i] + rb[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn hop_shift_aligns_frames() {
        let cfg = StftConfig::with_window(16_000, 128);
        let x = noise(4000, 9);
        let mut shifted = vec![0.0; cfg.hop];
        shifted.extend_from_slice(&x);
        let a = stft(&x, &cfg).unwrap();
        let b = stft(&shifted, &cfg).unwrap();
        for t in 0..a.frames() {
            for k in 0..a.bins() {
                assert!((a.data[[t, k]] - b.data[[t + 1, k]]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_short_signal_and_bad_configs() {
        let cfg = StftConfig::default();
        assert!(stft(&[0.0; 100], &cfg).is_err());
        let bad = StftConfig { hop: 512, ..cfg };
        assert!(bad.validate().is_err());
        let odd = StftConfig { win_len: 511, hop: 255, ..cfg };
        assert!(odd.validate().is_err());
        let s = stft(&noise(1024, 0), &StftConfig::with_window(16_000, 128)).unwrap();
        assert!(Stft::new(cfg).unwrap().istft(&s).is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        // <istft(Z), g> == <Z, istft_adjoint(g)> with Re/Im as separate reals
        let cfg = StftConfig::with_window(16_000, 16);
        let engine = Stft::new(cfg).unwrap();
        let len = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = Spectrogram::zeros(cfg, len);
        z.data.mapv_inplace(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let g = noise(len, 6);
        let x = engine.istft(&z).unwrap();
        let lhs: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = engine.istft_adjoint(&g);
        let rhs: f64 = z.data.iter().zip(adj.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn stacking_layout() {
        let cfg = StftConfig::with_window(16_000, 64);
        let x = noise(1000, 4);
        let real_only = stft(&x, &cfg).unwrap();
        let mut re = real_only.clone();
        re.data.mapv_inplace(|z| Complex64::new(z.re, 0.0));
        let block = stack_features(&[re.clone()]).unwrap();
        assert_eq!(block.channels(), 2);
        assert!(block.data.index_axis(ndarray::Axis(3), 1).iter().all(|v| *v == 0.0));

        let specs: Vec<_> = (0..4).map(|q| stft(&noise(1000, q), &cfg).unwrap()).collect();
        let block = stack_features(&specs).unwrap();
        assert_eq!(block.data.dim(), (1, specs[0].frames(), 33, 8));
        let back = unstack_features(&block, 0, cfg, 1000).unwrap();
        assert_eq!(back, specs);

        let other = stft(&noise(1200, 1), &cfg).unwrap();
        assert!(stack_features(&[specs[0].clone(), other]).is_err());
    }
}
