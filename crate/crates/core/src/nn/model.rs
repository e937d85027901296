//! Pattern-conditioned mask estimators.
//!
//! Both architectures share one backbone: a dense input projection, a
//! bidirectional LSTM running across frequency (independently per frame),
//! a unidirectional LSTM running forward in time (independently per bin),
//! and a dense head producing the real and imaginary mask parts.
//!
//! * `PvJnf` maps the pattern vector to the initial hidden states of the
//!   frequency LSTM (forward half, backward half), once per frame.
//! * `FilmJnf` maps the pattern to per-feature `alpha`, `beta` and applies
//!   `alpha * x + beta` between the two recurrent stages.
//!
//! Patterns are either static (`[1, L]`) or per-frame (`[T, L]`). Nothing
//! couples frames except the forward-in-time LSTM, so masks are causal.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{split_columns, Cell, CellTrace, Linear, Lstm};
use crate::error::{invalid, shape_err, Error, Result};
use crate::mask::Mask;
use crate::stft::FeatureBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    PvJnf,
    FilmJnf,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pv-jnf" => Ok(Arch::PvJnf),
            "film-jnf" => Ok(Arch::FilmJnf),
            other => Err(invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    #[default]
    Lstm,
    /// Recurrences replaced by per-step dense maps.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub arch: Arch,
    /// Microphones.
    pub q: usize,
    /// Pattern samples.
    pub l: usize,
    /// Frequency bins.
    pub f: usize,
    pub input_width: usize,
    pub bilstm_hidden: usize,
    pub unilstm_hidden: usize,
    pub feature_width: usize,
    #[serde(default)]
    pub mask_bound: Option<f64>,
    #[serde(default)]
    pub cell: CellKind,
}

impl ArchConfig {
    pub fn new(arch: Arch, q: usize, l: usize, f: usize) -> Self {
        ArchConfig {
            arch,
            q,
            l,
            f,
            input_width: 64,
            bilstm_hidden: 256,
            unilstm_hidden: 128,
            feature_width: 512,
            mask_bound: None,
            cell: CellKind::Lstm,
        }
    }

    pub fn with_hidden(mut self, bilstm: usize, unilstm: usize) -> Self {
        self.bilstm_hidden = bilstm;
        self.feature_width = 2 * bilstm;
        self.unilstm_hidden = unilstm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.q,
            self.l,
            self.f,
            self.input_width,
            self.bilstm_hidden,
            self.unilstm_hidden,
        ];
        if dims.iter().any(|d| *d == 0) {
            return Err(invalid("all architecture dimensions must be >= 1"));
        }
        if self.feature_width != 2 * self.bilstm_hidden {
            return Err(invalid(format!(
                "feature_width ({}) must equal 2 x bilstm_hidden ({})",
                self.feature_width, self.bilstm_hidden
            )));
        }
        if let Some(b) = self.mask_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid("mask_bound must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    /// Pattern -> initial hidden states `[forward | backward]`.
    InitialState(Linear),
    Film { alpha: Linear, beta: Linear },
}

/// Every trainable array of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input: Linear,
    pub freq_fwd: Cell,
    pub freq_bwd: Cell,
    pub cond: Conditioning,
    pub time: Cell,
    pub output: Linear,
}

fn cell_init(kind: CellKind, inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Cell {
    match kind {
        CellKind::Lstm => Cell::Lstm(Lstm::init(inputs, hidden, rng)),
        CellKind::Dense => Cell::Dense(Linear::init(inputs, hidden, rng)),
    }
}

impl ModelParams {
    /// Random initialization. The backbone draws from `seed` alone and the
    /// conditioning layers from a derived stream, so both architectures
    /// share identical backbones for equal seeds.
    pub fn init(cfg: &ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h1 = cfg.bilstm_hidden;
        let input = Linear::init(2 * cfg.q, cfg.input_width, &mut rng);
        let freq_fwd = cell_init(cfg.cell, cfg.input_width, h1, &mut rng);
        let freq_bwd = cell_init(cfg.cell, cfg.input_width, h1, &mut rng);
        let time = cell_init(cfg.cell, cfg.feature_width, cfg.unilstm_hidden, &mut rng);
        let output = Linear::init(cfg.unilstm_hidden, 2, &mut rng);

        let mut cond_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        let cond = match cfg.arch {
            Arch::PvJnf => Conditioning::InitialState(Linear::init(cfg.l, 2 * h1, &mut cond_rng)),
            Arch::FilmJnf => {
                let mut alpha = Linear::init(cfg.l, cfg.feature_width, &mut cond_rng);
                alpha.bias.fill(1.0);
                let beta = Linear::init(cfg.l, cfg.feature_width, &mut cond_rng);
                Conditioning::Film { alpha, beta }
            }
        };
        Ok(ModelParams {
            input,
            freq_fwd,
            freq_bwd,
            cond,
            time,
            output,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let lin = |l: &Linear| Linear::zeros(l.inputs(), l.outputs());
        ModelParams {
            input: lin(&self.input),
            freq_fwd: self.freq_fwd.zeros_like(),
            freq_bwd: self.freq_bwd.zeros_like(),
            cond: match &self.cond {
                Conditioning::InitialState(p) => Conditioning::InitialState(lin(p)),
                Conditioning::Film { alpha, beta } => Conditioning::Film {
                    alpha: lin(alpha),
                    beta: lin(beta),
                },
            },
            time: self.time.zeros_like(),
            output: lin(&self.output),
        }
    }

    /// Turns conditioning into a no-op: zero pattern-to-state map for
    /// `PvJnf`, `alpha = 1`, `beta = 0` for `FilmJnf`.
    pub fn neutralize_conditioning(&mut self) {
        match &mut self.cond {
            Conditioning::InitialState(p) => {
                p.weight.fill(0.0);
                p.bias.fill(0.0);
            }
            Conditioning::Film { alpha, beta } => {
                alpha.weight.fill(0.0);
                alpha.bias.fill(1.0);
                beta.weight.fill(0.0);
                beta.bias.fill(0.0);
            }
        }
    }

    /// `(name, shape, values)` for every array, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.weight"), l.weight.shape().to_vec(), l.weight.as_slice().expect("standard layout")));
            out.push((format!("{name}.bias"), l.bias.shape().to_vec(), l.bias.as_slice().expect("standard layout")));
        }
        fn cell<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, c: &'a Cell) {
            match c {
                Cell::Lstm(l) => {
                    out.push((format!("{name}.w_input"), l.w_input.shape().to_vec(), l.w_input.as_slice().expect("standard layout")));
                    out.push((format!("{name}.w_hidden"), l.w_hidden.shape().to_vec(), l.w_hidden.as_slice().expect("standard layout")));
                    out.push((format!("{name}.bias"), l.bias.shape().to_vec(), l.bias.as_slice().expect("standard layout")));
                }
                Cell::Dense(d) => lin(out, name, d),
            }
        }
        lin(&mut out, "input", &self.input);
        cell(&mut out, "freq_fwd", &self.freq_fwd);
        cell(&mut out, "freq_bwd", &self.freq_bwd);
        match &self.cond {
            Conditioning::InitialState(p) => lin(&mut out, "cond.state", p),
            Conditioning::Film { alpha, beta } => {
                lin(&mut out, "cond.alpha", alpha);
                lin(&mut out, "cond.beta", beta);
            }
        }
        cell(&mut out, "time", &self.time);
        lin(&mut out, "output", &self.output);
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, l: &'a mut Linear) {
            out.push((format!("{name}.weight"), l.weight.as_slice_mut().expect("standard layout")));
            out.push((format!("{name}.bias"), l.bias.as_slice_mut().expect("standard layout")));
        }
        fn cell<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, c: &'a mut Cell) {
            match c {
                Cell::Lstm(l) => {
                    out.push((format!("{name}.w_input"), l.w_input.as_slice_mut().expect("standard layout")));
                    out.push((format!("{name}.w_hidden"), l.w_hidden.as_slice_mut().expect("standard layout")));
                    out.push((format!("{name}.bias"), l.bias.as_slice_mut().expect("standard layout")));
                }
                Cell::Dense(d) => lin(out, name, d),
            }
        }
        lin(&mut out, "input", &mut self.input);
        cell(&mut out, "freq_fwd", &mut self.freq_fwd);
        cell(&mut out, "freq_bwd", &mut self.freq_bwd);
        match &mut self.cond {
            Conditioning::InitialState(p) => lin(&mut out, "cond.state", p),
            Conditioning::Film { alpha, beta } => {
                lin(&mut out, "cond.alpha", alpha);
                lin(&mut out, "cond.beta", beta);
            }
        }
        cell(&mut out, "time", &mut self.time);
        lin(&mut out, "output", &mut self.output);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// FiLM: `alpha ⊙ x + beta` with `alpha`, `beta` broadcast over every
/// leading position. `x` is `[positions..., width]` flattened to
/// `[positions, width]`.
pub fn film_modulate(x: &ArrayView2<f64>, alpha: &[f64], beta: &[f64]) -> Result<Array2<f64>> {
    let w = x.ncols();
    if alpha.len() != w || beta.len() != w {
        return Err(shape_err(
            "film_modulate",
            format!("alpha/beta width {w}"),
            format!("{}/{}", alpha.len(), beta.len()),
        ));
    }
    let mut y = x.to_owned();
    for mut row in y.rows_mut() {
        for ((v, a), b) in row.iter_mut().zip(alpha).zip(beta) {
            *v = a * *v + b;
        }
    }
    Ok(y)
}

/// Conditioning input for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternBatch {
    /// `[B, L]`.
    Static(Array2<f64>),
    /// `[B, T, L]`.
    PerFrame(Array3<f64>),
}

impl PatternBatch {
    pub fn batch(&self) -> usize {
        match self {
            PatternBatch::Static(p) => p.nrows(),
            PatternBatch::PerFrame(p) => p.dim().0,
        }
    }

    /// `[1, L]` or `[T, L]` rows for item `b`.
    pub fn item(&self, b: usize) -> Array2<f64> {
        match self {
            PatternBatch::Static(p) => p.slice(s![b..b + 1, ..]).to_owned(),
            PatternBatch::PerFrame(p) => p.index_axis(Axis(0), b).to_owned(),
        }
    }
}

/// Activations of one item needed by [`backward_item`].
#[derive(Debug, Clone)]
pub struct ItemCache {
    frames: usize,
    bins: usize,
    input: Array2<f64>,
    pattern: Option<Array2<f64>>,
    fwd_trace: CellTrace,
    bwd_trace: CellTrace,
    /// BiLSTM output `[T, F, W]`.
    features: Array3<f64>,
    film: Option<(Array2<f64>, Array2<f64>)>,
    time_trace: CellTrace,
    time_out: Array2<f64>,
    raw: Array2<f64>,
}

fn check_finite<'a, I: IntoIterator<Item = &'a f64>>(values: I, layer: &'static str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { layer })
    }
}

/// Expands `[1, W]` or `[T, W]` rows to `[T, W]`.
fn per_frame_rows(rows: &Array2<f64>, frames: usize) -> Array2<f64> {
    if rows.nrows() == frames {
        rows.clone()
    } else {
        rows.broadcast((frames, rows.ncols())).expect("single row").to_owned()
    }
}

fn validate_item(cfg: &ArchConfig, features: &ArrayView3<f64>, pattern: Option<&Array2<f64>>) -> Result<()> {
    let (t, f, c) = features.dim();
    if f != cfg.f || c != 2 * cfg.q {
        return Err(shape_err(
            "network input",
            format!("[T, {}, {}]", cfg.f, 2 * cfg.q),
            format!("[{t}, {f}, {c}]"),
        ));
    }
    if t == 0 {
        return Err(invalid("network input has no frames"));
    }
    check_finite(features.iter(), "input features")?;
    if let Some(p) = pattern {
        if p.ncols() != cfg.l || (p.nrows() != 1 && p.nrows() != t) {
            return Err(shape_err(
                "pattern input",
                format!("[1 or {t}, {}]", cfg.l),
                format!("{:?}", p.dim()),
            ));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("pattern gains must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// Forward pass for one item. `pattern = None` runs the unconditioned
/// backbone (zero initial states, no modulation).
pub fn forward_item(
    params: &ModelParams,
    cfg: &ArchConfig,
    features: &ArrayView3<f64>,
    pattern: Option<&Array2<f64>>,
) -> Result<(Mask, ItemCache)> {
    validate_item(cfg, features, pattern)?;
    let (frames, bins, chans) = features.dim();
    let h1 = cfg.bilstm_hidden;
    let width = cfg.feature_width;

    let input = features
        .to_shape((frames * bins, chans))
        .map_err(|e| invalid(e.to_string()))?
        .to_owned();
    let projected = params.input.forward(&input.view());
    let projected = projected
        .into_shape_with_order((frames, bins, cfg.input_width))
        .map_err(|e| invalid(e.to_string()))?;

    let (h0_fwd, h0_bwd) = match (&params.cond, pattern) {
        (Conditioning::InitialState(map), Some(p)) => {
            let states = per_frame_rows(&map.forward(&p.view()), frames);
            (Some(split_columns(&states, 0, h1)), Some(split_columns(&states, h1, h1)))
        }
        _ => (None, None),
    };
    let steps: Vec<Array2<f64>> = (0..bins)
        .map(|f| projected.slice(s![.., f, ..]).to_owned())
        .collect();
    let reversed: Vec<Array2<f64>> = steps.iter().rev().cloned().collect();
    let (hf, fwd_trace) = params.freq_fwd.forward(steps, h0_fwd);
    let (hb, bwd_trace) = params.freq_bwd.forward(reversed, h0_bwd);

    let mut feats = Array3::<f64>::zeros((frames, bins, width));
    for f in 0..bins {
        feats.slice_mut(s![.., f, ..h1]).assign(&hf[f]);
        feats.slice_mut(s![.., f, h1..]).assign(&hb[bins - 1 - f]);
    }
    check_finite(feats.iter(), "frequency BiLSTM")?;

    let film = match (&params.cond, pattern) {
        (Conditioning::Film { alpha, beta }, Some(p)) => Some((
            per_frame_rows(&alpha.forward(&p.view()), frames),
            per_frame_rows(&beta.forward(&p.view()), frames),
        )),
        _ => None,
    };
    let time_steps: Vec<Array2<f64>> = (0..frames)
        .map(|t| {
            let x = feats.index_axis(Axis(0), t);
            match &film {
                Some((a, b)) => film_modulate(
                    &x,
                    a.row(t).as_slice().expect("standard layout"),
                    b.row(t).as_slice().expect("standard layout"),
                )
                .expect("widths checked at construction"),
                None => x.to_owned(),
            }
        })
        .collect();
    let (h2, time_trace) = params.time.forward(time_steps, None);
    let mut time_out = Array2::<f64>::zeros((frames * bins, cfg.unilstm_hidden));
    for (t, h) in h2.iter().enumerate() {
        time_out.slice_mut(s![t * bins..(t + 1) * bins, ..]).assign(h);
    }
    check_finite(time_out.iter(), "time UniLSTM")?;

    let raw = params.output.forward(&time_out.view());
    check_finite(raw.iter(), "output projection")?;

    let mut mask = Array2::<Complex64>::zeros((frames, bins));
    for ((t, f), m) in mask.indexed_iter_mut() {
        let r = raw.row(t * bins + f);
        let z = Complex64::new(r[0], r[1]);
        *m = match cfg.mask_bound {
            Some(bound) => z / (1.0 + z.norm_sqr() / (bound * bound)).sqrt(),
            None => z,
        };
    }
    let cache = ItemCache {
        frames,
        bins,
        input,
        pattern: pattern.cloned(),
        fwd_trace,
        bwd_trace,
        features: feats,
        film,
        time_trace,
        time_out,
        raw,
    };
    Ok((Mask { data: mask }, cache))
}

/// Accumulates `dL/dparams` into `grad` given `dL/dmask` (real and
/// imaginary parts as independent reals).
pub fn backward_item(
    params: &ModelParams,
    cfg: &ArchConfig,
    cache: &ItemCache,
    grad_mask: &Array2<Complex64>,
    grad: &mut ModelParams,
) {
    let (frames, bins) = (cache.frames, cache.bins);
    let h1 = cfg.bilstm_hidden;

    let mut graw = Array2::<f64>::zeros((frames * bins, 2));
    for ((t, f), g) in grad_mask.indexed_iter() {
        let i = t * bins + f;
        let (gr, gi) = match cfg.mask_bound {
            Some(bound) => {
                // M = m * s, s = (1 + |m|^2 / b^2)^(-1/2)
                let (mr, mi) = (cache.raw[[i, 0]], cache.raw[[i, 1]]);
                let b2 = bound * bound;
                let sc = 1.0 / (1.0 + (mr * mr + mi * mi) / b2).sqrt();
                let dot = mr * g.re + mi * g.im;
                let k = -sc * sc * sc / b2 * dot;
                (sc * g.re + k * mr, sc * g.im + k * mi)
            }
            None => (g.re, g.im),
        };
        graw[[i, 0]] = gr;
        graw[[i, 1]] = gi;
    }
    let gtime = params
        .output
        .backward(&cache.time_out.view(), &graw.view(), &mut grad.output);
    let gh2: Vec<Array2<f64>> = (0..frames)
        .map(|t| gtime.slice(s![t * bins..(t + 1) * bins, ..]).to_owned())
        .collect();
    let (gys, _) = params.time.backward(&cache.time_trace, &gh2, &mut grad.time);

    // back through the modulation
    let mut gfeat = Array3::<f64>::zeros((frames, bins, cfg.feature_width));
    match (&cache.film, &params.cond, &mut grad.cond, &cache.pattern) {
        (Some((a, _)), Conditioning::Film { alpha, beta }, Conditioning::Film { alpha: ga, beta: gb }, Some(p)) => {
            let mut galpha = Array2::<f64>::zeros((frames, cfg.feature_width));
            let mut gbeta = Array2::<f64>::zeros((frames, cfg.feature_width));
            for (t, gy) in gys.iter().enumerate() {
                let x = cache.features.index_axis(Axis(0), t);
                let at = a.row(t);
                let mut gx = gfeat.index_axis_mut(Axis(0), t);
                for f in 0..bins {
                    for w in 0..cfg.feature_width {
                        let g = gy[[f, w]];
                        gx[[f, w]] = g * at[w];
                        galpha[[t, w]] += g * x[[f, w]];
                        gbeta[[t, w]] += g;
                    }
                }
            }
            let (galpha, gbeta) = if p.nrows() == 1 {
                (galpha.sum_axis(Axis(0)).insert_axis(Axis(0)), gbeta.sum_axis(Axis(0)).insert_axis(Axis(0)))
            } else {
                (galpha, gbeta)
            };
            alpha.backward_params(&p.view(), &galpha.view(), ga);
            beta.backward_params(&p.view(), &gbeta.view(), gb);
        }
        _ => {
            for (t, gy) in gys.iter().enumerate() {
                gfeat.index_axis_mut(Axis(0), t).assign(gy);
            }
        }
    }

    let gf: Vec<Array2<f64>> = (0..bins)
        .map(|f| gfeat.slice(s![.., f, ..h1]).to_owned())
        .collect();
    let gb: Vec<Array2<f64>> = (0..bins)
        .map(|s_| gfeat.slice(s![.., bins - 1 - s_, h1..]).to_owned())
        .collect();
    let (gx_f, gh0_f) = params.freq_fwd.backward(&cache.fwd_trace, &gf, &mut grad.freq_fwd);
    let (gx_b, gh0_b) = params.freq_bwd.backward(&cache.bwd_trace, &gb, &mut grad.freq_bwd);

    if let (Conditioning::InitialState(map), Conditioning::InitialState(gmap), Some(p)) =
        (&params.cond, &mut grad.cond, &cache.pattern)
    {
        let mut gstate = Array2::<f64>::zeros((frames, 2 * h1));
        gstate.slice_mut(s![.., ..h1]).assign(&gh0_f);
        gstate.slice_mut(s![.., h1..]).assign(&gh0_b);
        let gstate = if p.nrows() == 1 {
            gstate.sum_axis(Axis(0)).insert_axis(Axis(0))
        } else {
            gstate
        };
        map.backward_params(&p.view(), &gstate.view(), gmap);
    }

    let mut gproj = Array2::<f64>::zeros((frames * bins, cfg.input_width));
    for f in 0..bins {
        let g = &gx_f[f] + &gx_b[bins - 1 - f];
        for t in 0..frames {
            gproj.row_mut(t * bins + f).assign(&g.row(t));
        }
    }
    params
        .input
        .backward_params(&cache.input.view(), &gproj.view(), &mut grad.input);
}

/// Batched forward pass: one mask per item.
pub fn forward(params: &ModelParams, cfg: &ArchConfig, features: &FeatureBlock, patterns: &PatternBatch) -> Result<Vec<Mask>> {
    if patterns.batch() != features.batch() {
        return Err(shape_err(
            "pattern batch",
            features.batch(),
            patterns.batch(),
        ));
    }
    (0..features.batch())
        .map(|b| {
            let x = features.data.index_axis(Axis(0), b);
            let p = patterns.item(b);
            forward_item(params, cfg, &x, Some(&p)).map(|(m, _)| m)
        })
        .collect()
}

/// Forward pass without any conditioning.
pub fn forward_unconditioned(params: &ModelParams, cfg: &ArchConfig, features: &FeatureBlock) -> Result<Vec<Mask>> {
    (0..features.batch())
        .map(|b| {
            let x = features.data.index_axis(Axis(0), b);
            forward_item(params, cfg, &x, None).map(|(m, _)| m)
        })
        .collect()
}
