//! Windowed-sinc fractional delay and sample-rate conversion.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Taps of the propagation delay filter.
pub const DELAY_TAPS: usize = 64;
/// Zero crossings on each side of the resampling kernel.
const RESAMPLE_HALF_WIDTH: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `[-half, half]`, zero outside.
fn blackman(u: f64, half: f64) -> f64 {
    if u.abs() >= half {
        return 0.0;
    }
    let a = PI * u / half;
    0.42 + 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

/// Windowed-sinc kernel for a fractional shift `frac` in `[0, 1)`.
///
/// Tap `k` multiplies `x[n - I - (k - (taps/2 - 1))]`, where `I` is the
/// integer part of the delay. The kernel has unit DC gain.
pub fn delay_kernel(frac: f64, taps: usize) -> Vec<f64> {
    let half = taps as f64 / 2.0;
    let center = (taps / 2 - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let u = k as f64 - center - frac;
            sinc(u) * blackman(u, half)
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Delays `signal` by `delay` samples (any non-negative real) and scales it
/// by `gain`. The output has the input's length.
pub fn fractional_delay(signal: &[f64], delay: f64, gain: f64, taps: usize) -> Result<Vec<f64>> {
    if !(delay >= 0.0) || !delay.is_finite() {
        return Err(invalid(format!("delay must be finite and non-negative, got {delay}")));
    }
    if taps < 4 || taps % 2 != 0 {
        return Err(invalid("delay filter needs an even number of taps >= 4"));
    }
    let whole = delay.floor();
    let frac = delay - whole;
    let whole = whole as isize;
    let h = delay_kernel(frac, taps);
    let center = (taps / 2 - 1) as isize;
    let n = signal.len() as isize;
    let out = (0..n)
        .map(|i| {
            let acc: f64 = h
                .iter()
                .enumerate()
                .filter_map(|(k, hk)| {
                    let src = i - whole - (k as isize - center);
                    (0..n).contains(&src).then(|| hk * signal[src as usize])
                })
                .sum();
            gain * acc
        })
        .collect();
    Ok(out)
}

/// Band-limited resampling from `from_hz` to `to_hz`.
pub fn resample(signal: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(invalid("sample rates must be positive"));
    }
    if from_hz == to_hz {
        return Ok(signal.to_vec());
    }
    let ratio = to_hz as f64 / from_hz as f64;
    // cutoff relative to the input Nyquist
    let cutoff = ratio.min(1.0);
    let support = RESAMPLE_HALF_WIDTH / cutoff;
    let out_len = ((signal.len() as f64) * ratio).round() as usize;
    let n = signal.len() as isize;
    let out = (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = ((t - support).ceil() as isize).max(0);
            let hi = ((t + support).floor() as isize).min(n - 1);
            (lo..=hi)
                .map(|i| {
                    let u = t - i as f64;
                    signal[i as usize] * cutoff * sinc(cutoff * u) * blackman(u, support)
                })
                .sum()
        })
        .collect();
    Ok(out)
}
