//! Complex time-frequency masks applied to the reference channel.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{shape_err, Result};
use crate::stft::Spectrogram;

/// Complex gain per `[frame, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub data: Array2<Complex64>,
}

impl Mask {
    pub fn constant(frames: usize, bins: usize, value: Complex64) -> Self {
        Mask {
            data: Array2::from_elem((frames, bins), value),
        }
    }

    pub fn from_real(gains: Array2<f64>) -> Self {
        Mask {
            data: gains.mapv(|g| Complex64::new(g, 0.0)),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }
}

/// `Zhat[t, f] = M[t, f] * Y[t, f]`.
pub fn apply_mask(mask: &Mask, reference: &Spectrogram) -> Result<Spectrogram> {
    if mask.data.dim() != reference.data.dim() {
        return Err(shape_err(
            "apply_mask",
            format!("{:?}", reference.data.dim()),
            format!("{:?}", mask.data.dim()),
        ));
    }
    let mut out = reference.clone();
    out.data.zip_mut_with(&mask.data, |y, m| *y *= m);
    Ok(out)
}
