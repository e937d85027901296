//! Directivity patterns.
//!
//! A pattern maps an azimuth angle (radians, zero elevation) to a linear
//! amplitude gain. Analytic patterns are sums of primitives (simplified or
//! general DMA polynomials, rectangular arcs) normalized so that their
//! maximum is one. The suppression floor is kept separate from the analytic
//! math and is applied only when gains are sampled or assigned to sources.

mod recipe;

pub use recipe::{gen_recipe, gen_recipe_a, Recipe, RecipeConfig};

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default number of pattern samples fed to the network.
pub const DEFAULT_L: usize = 72;
/// Default maximum suppression, in dB.
pub const DEFAULT_FLOOR_DB: f64 = -20.0;
/// Angular grid used to find the normalizer of a combination (0.5 degrees).
pub const NORMALIZER_GRID: usize = 720;

const ANGLE_EPS: f64 = 1e-12;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Converts a floor in dB to a linear amplitude gain.
pub fn floor_gain(floor_db: f64) -> Result<f64> {
    if !(floor_db <= 0.0) {
        return Err(invalid(format!("floor must be <= 0 dB, got {floor_db}")));
    }
    Ok(10f64.powf(floor_db / 20.0))
}

/// `max(gain, 10^(floor_db/20))`.
pub fn apply_floor(gain: f64, floor_db: f64) -> Result<f64> {
    Ok(gain.max(floor_gain(floor_db)?))
}

pub fn apply_floor_slice(gains: &mut [f64], floor_db: f64) -> Result<()> {
    let floor = floor_gain(floor_db)?;
    for g in gains {
        *g = g.max(floor);
    }
    Ok(())
}

/// `|mu + (1 - mu) cos(theta - theta_s)|^J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimplifiedDmaFields")]
pub struct SimplifiedDma {
    pub mu: f64,
    pub theta_s: f64,
    pub order_j: u32,
}

#[derive(Deserialize)]
struct SimplifiedDmaFields {
    mu: f64,
    theta_s: f64,
    order_j: u32,
}

impl TryFrom<SimplifiedDmaFields> for SimplifiedDma {
    type Error = Error;
    fn try_from(f: SimplifiedDmaFields) -> Result<Self> {
        SimplifiedDma::new(f.mu, f.theta_s, f.order_j)
    }
}

impl SimplifiedDma {
    pub fn new(mu: f64, theta_s: f64, order_j: u32) -> Result<Self> {
        let spec = SimplifiedDma {
            mu,
            theta_s: wrap_angle(theta_s),
            order_j,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// First-order cardioid steered towards `theta_s`.
    pub fn cardioid(theta_s: f64) -> Self {
        SimplifiedDma {
            mu: 0.5,
            theta_s: wrap_angle(theta_s),
            order_j: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if self.order_j < 1 {
            return Err(invalid("DMA order must be at least 1"));
        }
        if !self.theta_s.is_finite() {
            return Err(invalid("steering angle must be finite"));
        }
        Ok(())
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let base = self.mu + (1.0 - self.mu) * (theta - self.theta_s).cos();
        base.abs().powi(self.order_j as i32)
    }
}

/// Validating evaluation of the simplified DMA pattern.
pub fn eval_simplified_dma(spec: &SimplifiedDma, theta: f64) -> Result<f64> {
    spec.validate()?;
    Ok(spec.eval(theta))
}

/// `sum_j a_j cos^j(theta - theta_s)`; may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneralDmaFields")]
pub struct GeneralDma {
    pub coeffs: Vec<f64>,
    pub theta_s: f64,
}

#[derive(Deserialize)]
struct GeneralDmaFields {
    coeffs: Vec<f64>,
    theta_s: f64,
}

impl TryFrom<GeneralDmaFields> for GeneralDma {
    type Error = Error;
    fn try_from(f: GeneralDmaFields) -> Result<Self> {
        GeneralDma::new(f.coeffs, f.theta_s)
    }
}

impl GeneralDma {
    pub fn new(coeffs: Vec<f64>, theta_s: f64) -> Result<Self> {
        let spec = GeneralDma {
            coeffs,
            theta_s: wrap_angle(theta_s),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(invalid("general DMA needs at least one coefficient"));
        }
        if self.coeffs.iter().any(|a| !a.is_finite()) {
            return Err(invalid("general DMA coefficients must be finite"));
        }
        Ok(())
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let c = (theta - self.theta_s).cos();
        // Horner
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc * c + a)
    }
}

pub fn eval_general_dma(spec: &GeneralDma, theta: f64) -> Result<f64> {
    spec.validate()?;
    Ok(spec.eval(theta))
}

/// Unit gain on the counter-clockwise arc from `theta_start` to
/// `theta_end` (inclusive), zero elsewhere. `theta_start > theta_end`
/// describes an arc that wraps through 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RectFields")]
pub struct RectSpec {
    pub theta_start: f64,
    pub theta_end: f64,
}

#[derive(Deserialize)]
struct RectFields {
    theta_start: f64,
    theta_end: f64,
}

impl TryFrom<RectFields> for RectSpec {
    type Error = Error;
    fn try_from(f: RectFields) -> Result<Self> {
        RectSpec::new(f.theta_start, f.theta_end)
    }
}

impl RectSpec {
    pub fn new(theta_start: f64, theta_end: f64) -> Result<Self> {
        if !theta_start.is_finite() || !theta_end.is_finite() {
            return Err(invalid("rectangle bounds must be finite"));
        }
        Ok(RectSpec {
            theta_start: wrap_angle(theta_start),
            theta_end: wrap_angle(theta_end),
        })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let theta = wrap_angle(theta);
        let inside = if self.theta_start <= self.theta_end {
            theta >= self.theta_start - ANGLE_EPS && theta <= self.theta_end + ANGLE_EPS
        } else {
            theta >= self.theta_start - ANGLE_EPS || theta <= self.theta_end + ANGLE_EPS
        };
        // boundary handling near the wrap point
        let near = |a: f64| {
            let d = (theta - a).abs();
            d <= ANGLE_EPS || (TAU - d) <= ANGLE_EPS
        };
        if inside || near(self.theta_start) || near(self.theta_end) {
            1.0
        } else {
            0.0
        }
    }
}

pub fn eval_rect(spec: &RectSpec, theta: f64) -> f64 {
    spec.eval(theta)
}

/// One primitive of a combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    DmaSimplified(SimplifiedDma),
    DmaGeneral(GeneralDma),
    Rect(RectSpec),
}

impl Component {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            Component::DmaSimplified(s) => s.eval(theta),
            Component::DmaGeneral(s) => s.eval(theta),
            Component::Rect(s) => s.eval(theta),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Component::DmaSimplified(s) => s.validate(),
            Component::DmaGeneral(s) => s.validate(),
            Component::Rect(_) => Ok(()),
        }
    }
}

impl From<SimplifiedDma> for Component {
    fn from(s: SimplifiedDma) -> Self {
        Component::DmaSimplified(s)
    }
}

impl From<GeneralDma> for Component {
    fn from(s: GeneralDma) -> Self {
        Component::DmaGeneral(s)
    }
}

impl From<RectSpec> for Component {
    fn from(s: RectSpec) -> Self {
        Component::Rect(s)
    }
}

/// A max-normalized combination of primitives with a suppression floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnalyticPatternFields")]
pub struct AnalyticPattern {
    components: Vec<Component>,
    normalizer: f64,
    floor: f64,
}

/// Wire form; `normalizer` is recomputed when absent and `floor` defaults
/// to the -20 dB suppression.
#[derive(Deserialize)]
struct AnalyticPatternFields {
    components: Vec<Component>,
    #[serde(default)]
    normalizer: Option<f64>,
    #[serde(default)]
    floor: Option<f64>,
}

impl TryFrom<AnalyticPatternFields> for AnalyticPattern {
    type Error = Error;
    fn try_from(f: AnalyticPatternFields) -> Result<Self> {
        let mut p = combine(f.components)?;
        if let Some(n) = f.normalizer {
            if !(n > 0.0 && n.is_finite()) {
                return Err(invalid("normalizer must be positive"));
            }
            p.normalizer = n;
        }
        if let Some(floor) = f.floor {
            p = p.with_floor(floor)?;
        }
        Ok(p)
    }
}

impl AnalyticPattern {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Linear floor gain.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Omnidirectional (unit gain everywhere).
    pub fn omni() -> Self {
        combine(vec![Component::DmaSimplified(SimplifiedDma {
            mu: 1.0,
            theta_s: 0.0,
            order_j: 1,
        })])
        .expect("omni pattern is non-degenerate")
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&floor) {
            return Err(invalid(format!("linear floor must lie in [0, 1], got {floor}")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn with_floor_db(self, floor_db: f64) -> Result<Self> {
        let floor = floor_gain(floor_db)?;
        self.with_floor(floor)
    }

    /// Un-normalized component sum.
    pub fn raw_sum(&self, theta: f64) -> f64 {
        self.components.iter().map(|c| c.eval(theta)).sum()
    }

    /// Normalized gain in `[0, 1]`, without the floor.
    pub fn eval(&self, theta: f64) -> f64 {
        (self.raw_sum(theta) / self.normalizer).clamp(0.0, 1.0)
    }

    /// Normalized and floored gain; this is what sources are weighted by.
    pub fn gain(&self, theta: f64) -> f64 {
        self.eval(theta).max(self.floor)
    }

    pub fn sample(&self, l: usize) -> Result<PatternVector> {
        sample_pattern(self, l)
    }
}

/// Max-normalizes the sum of `components`.
pub fn combine(components: Vec<Component>) -> Result<AnalyticPattern> {
    if components.is_empty() {
        return Err(invalid("a pattern needs at least one component"));
    }
    for c in &components {
        c.validate()?;
    }
    let normalizer = (0..NORMALIZER_GRID)
        .map(|i| {
            let theta = TAU * i as f64 / NORMALIZER_GRID as f64;
            components.iter().map(|c| c.eval(theta)).sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::DegeneratePattern);
    }
    Ok(AnalyticPattern {
        components,
        normalizer,
        floor: floor_gain(DEFAULT_FLOOR_DB)?,
    })
}

/// `L` gains sampled uniformly over `[0, 2π)`, index 0 at angle 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternVectorFields")]
pub struct PatternVector {
    l: usize,
    gains: Vec<f64>,
}

#[derive(Deserialize)]
struct PatternVectorFields {
    l: usize,
    gains: Vec<f64>,
}

impl TryFrom<PatternVectorFields> for PatternVector {
    type Error = Error;
    fn try_from(f: PatternVectorFields) -> Result<Self> {
        if f.l != f.gains.len() {
            return Err(invalid(format!(
                "pattern declares l = {} but carries {} gains",
                f.l,
                f.gains.len()
            )));
        }
        PatternVector::new(f.gains)
    }
}

impl PatternVector {
    /// Gains must be finite and within `[0, 1]`.
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.len() < 2 {
            return Err(invalid("a pattern vector needs at least two gains"));
        }
        if let Some((i, g)) = gains
            .iter()
            .enumerate()
            .find(|(_, g)| !(0.0..=1.0).contains(*g))
        {
            return Err(invalid(format!("gain {i} = {g} lies outside [0, 1]")));
        }
        Ok(PatternVector {
            l: gains.len(),
            gains,
        })
    }

    pub fn constant(l: usize, gain: f64) -> Result<Self> {
        PatternVector::new(vec![gain; l])
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn angle(&self, i: usize) -> f64 {
        TAU * i as f64 / self.l as f64
    }

    pub fn interp(&self, theta: f64) -> f64 {
        interp_pattern(self, theta)
    }

    pub fn apply_floor(&mut self, floor_db: f64) -> Result<()> {
        apply_floor_slice(&mut self.gains, floor_db)
    }

    /// `angle_deg,gain_linear,gain_db` rows for polar plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,gain_linear,gain_db\n");
        for (i, g) in self.gains.iter().enumerate() {
            let db = if *g > 0.0 { 20.0 * g.log10() } else { f64::NEG_INFINITY };
            let _ = writeln!(out, "{},{},{}", self.angle(i).to_degrees(), g, db);
        }
        out
    }
}

/// Floored evaluation of `p` at `theta_i = 2πi/L`.
pub fn sample_pattern(p: &AnalyticPattern, l: usize) -> Result<PatternVector> {
    if l < 4 {
        return Err(invalid(format!("need at least 4 pattern samples, got {l}")));
    }
    let gains = (0..l).map(|i| p.gain(TAU * i as f64 / l as f64)).collect();
    Ok(PatternVector { l, gains })
}

/// Circular linear interpolation between adjacent samples.
pub fn interp_pattern(v: &PatternVector, theta: f64) -> f64 {
    let l = v.l;
    let pos = wrap_angle(theta) * l as f64 / TAU;
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return v.gains[nearest as usize % l];
    }
    let i = pos.floor() as usize % l;
    let frac = pos - pos.floor();
    v.gains[i] * (1.0 - frac) + v.gains[(i + 1) % l] * frac
}

/// Anything that can weight a source arriving from a given direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternSource {
    Vector(PatternVector),
    Analytic(AnalyticPattern),
}

impl PatternSource {
    /// Gain assigned to a source at `theta`. Analytic patterns are evaluated
    /// at the exact angle, vectors are interpolated.
    pub fn gain(&self, theta: f64) -> f64 {
        match self {
            PatternSource::Analytic(p) => p.gain(theta),
            PatternSource::Vector(v) => v.interp(theta),
        }
    }

    /// Conditioning vector of length `l`.
    pub fn to_vector(&self, l: usize) -> Result<PatternVector> {
        match self {
            PatternSource::Analytic(p) => sample_pattern(p, l),
            PatternSource::Vector(v) if v.len() == l => Ok(v.clone()),
            PatternSource::Vector(v) => {
                let gains = (0..l)
                    .map(|i| v.interp(TAU * i as f64 / l as f64))
                    .collect();
                PatternVector::new(gains)
            }
        }
    }
}

impl From<AnalyticPattern> for PatternSource {
    fn from(p: AnalyticPattern) -> Self {
        PatternSource::Analytic(p)
    }
}

impl From<PatternVector> for PatternSource {
    fn from(v: PatternVector) -> Self {
        PatternSource::Vector(v)
    }
}
