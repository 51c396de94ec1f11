//! Control-to-amplitude network.
//!
//! Per-control input blocks (affine 1→H, layer norm, leaky ReLU) are
//! concatenated and fed to a GRU; its outputs go through `out_mlp_depth`
//! blocks (affine H→H, layer norm, leaky ReLU), a final affine H→M and the
//! scaled sigmoid. Parameters live in one flat vector whose order is:
//!
//! 1. for each control: `w[H]`, `b[H]`, `gain[H]`, `offset[H]`
//! 2. GRU: `w_ih[3H × C·H]`, `w_hh[3H × H]`, `b_ih[3H]`, `b_hh[3H]`, gates
//!    ordered (reset, update, candidate), matrices row-major
//! 3. for each output block: `w[H × H]`, `b[H]`, `gain[H]`, `offset[H]`
//! 4. final: `w[M × H]`, `b[M]`

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const AMPLITUDE_FLOOR: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_controls: usize,
    pub hidden: usize,
    pub num_bands: usize,
    pub out_mlp_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { num_controls: 2, hidden: 128, num_bands: 2048, out_mlp_depth: 3 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_controls == 0 || self.hidden == 0 || self.num_bands == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    let (c, h, m) = (cfg.num_controls, cfg.hidden, cfg.num_bands);
    let input = c * 4 * h;
    let gru = 3 * h * c * h + 3 * h * h + 6 * h;
    let out = cfg.out_mlp_depth * (h * h + 3 * h);
    input + gru + out + m * h + m
}

/// `2·σ(x)^ln(10) + 1e-18`.
pub fn scaled_sigmoid(x: f64) -> f64 {
    2.0 * logistic(x).powf(std::f64::consts::LN_10) + AMPLITUDE_FLOOR
}

/// Derivative of [`scaled_sigmoid`].
pub fn scaled_sigmoid_derivative(x: f64) -> f64 {
    let s = logistic(x);
    2.0 * std::f64::consts::LN_10 * s.powf(std::f64::consts::LN_10) * (1.0 - s)
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// `M × T` band amplitudes at the internal rate, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeFrameMatrix {
    num_bands: usize,
    frames: usize,
    values: Vec<f64>,
}

impl AmplitudeFrameMatrix {
    pub fn new(num_bands: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_bands * frames {
            return Err(Error::Dimension(format!(
                "{} values for a {num_bands}×{frames} amplitude matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("amplitudes must be finite and nonnegative".into()));
        }
        Ok(Self { num_bands, frames, values })
    }

    pub fn filled(num_bands: usize, frames: usize, value: f64) -> Self {
        Self { num_bands, frames, values: vec![value; num_bands * frames] }
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.frames..(m + 1) * self.frames]
    }

    pub fn get(&self, m: usize, t: usize) -> f64 {
        self.values[m * self.frames + t]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseNorm {
    w: usize,
    b: usize,
    gain: usize,
    offset: usize,
    fan_in: usize,
    width: usize,
}

#[derive(Debug, Clone, Copy)]
struct Gru {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
    fan_in: usize,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct Final {
    w: usize,
    b: usize,
    fan_in: usize,
    width: usize,
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    input: Vec<DenseNorm>,
    gru: Gru,
    out: Vec<DenseNorm>,
    last: Final,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let dense = |take: &mut dyn FnMut(usize) -> usize, fan_in: usize| DenseNorm {
            w: take(h * fan_in),
            b: take(h),
            gain: take(h),
            offset: take(h),
            fan_in,
            width: h,
        };
        let input = (0..cfg.num_controls).map(|_| dense(&mut take, 1)).collect();
        let ch = cfg.num_controls * h;
        let gru = Gru {
            w_ih: take(3 * h * ch),
            w_hh: take(3 * h * h),
            b_ih: take(3 * h),
            b_hh: take(3 * h),
            fan_in: ch,
            hidden: h,
        };
        let out = (0..cfg.out_mlp_depth).map(|_| dense(&mut take, h)).collect();
        let last = Final { w: take(cfg.num_bands * h), b: take(cfg.num_bands), fan_in: h, width: cfg.num_bands };
        Self { input, gru, out, last, total: cursor }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Named ranges covering the flat vector, in storage order.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut blocks = Vec::new();
        let dense = |prefix: String, d: &DenseNorm, blocks: &mut Vec<(String, Range<usize>)>| {
            blocks.push((format!("{prefix}.weight"), d.w..d.w + d.width * d.fan_in));
            blocks.push((format!("{prefix}.bias"), d.b..d.b + d.width));
            blocks.push((format!("{prefix}.norm_gain"), d.gain..d.gain + d.width));
            blocks.push((format!("{prefix}.norm_offset"), d.offset..d.offset + d.width));
        };
        for (c, d) in self.input.iter().enumerate() {
            dense(format!("input{c}"), d, &mut blocks);
        }
        let g = &self.gru;
        let h3 = 3 * g.hidden;
        blocks.push(("gru.weight_ih".into(), g.w_ih..g.w_ih + h3 * g.fan_in));
        blocks.push(("gru.weight_hh".into(), g.w_hh..g.w_hh + h3 * g.hidden));
        blocks.push(("gru.bias_ih".into(), g.b_ih..g.b_ih + h3));
        blocks.push(("gru.bias_hh".into(), g.b_hh..g.b_hh + h3));
        for (l, d) in self.out.iter().enumerate() {
            dense(format!("out{l}"), d, &mut blocks);
        }
        blocks.push(("final.weight".into(), self.last.w..self.last.w + self.last.width * self.last.fan_in));
        blocks.push(("final.bias".into(), self.last.b..self.last.b + self.last.width));
        blocks
    }

    /// Name of the block holding flat index `i`.
    pub fn block_of(&self, i: usize) -> Option<String> {
        self.blocks().into_iter().find(|(_, r)| r.contains(&i)).map(|(n, _)| n)
    }
}

/// Errors with the first block containing a non-finite gradient entry.
pub fn check_finite_gradient(layout: &ParamLayout, grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFiniteGradient {
            block: layout.block_of(i).unwrap_or_else(|| format!("index {i}")),
        }),
    }
}

/// `c = a·b + beta·c` for row/column-strided matrices (`a` is m×k, `b` k×n).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (crs, ccs): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(k == 0 || a.len() >= span(m, k, ars, acs));
    assert!(k == 0 || b.len() >= span(k, n, brs, bcs));
    assert!(c.len() >= span(m, n, crs, ccs));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            ars as isize,
            acs as isize,
            b.as_ptr(),
            brs as isize,
            bcs as isize,
            beta,
            c.as_mut_ptr(),
            crs as isize,
            ccs as isize,
        );
    }
}

/// `y[t, o] = Σ_i x[t, i]·w[o, i] + b[o]` with `x` time-major.
fn affine(x: &[f64], t: usize, w: &[f64], b: &[f64], fan_in: usize, width: usize) -> Vec<f64> {
    let mut y: Vec<f64> = b.iter().copied().cycle().take(t * width).collect();
    gemm(t, fan_in, width, x, (fan_in, 1), w, (1, fan_in), 1.0, &mut y, (width, 1));
    y
}

/// Accumulates `dw += dyᵀ·x` and `db += Σ_t dy` and returns `dx = dy·w`.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    x: &[f64],
    t: usize,
    w: &[f64],
    fan_in: usize,
    width: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    gemm(width, t, fan_in, dy, (1, width), x, (fan_in, 1), 1.0, dw, (fan_in, 1));
    for row in dy.chunks_exact(width) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut dx = vec![0.0; t * fan_in];
    gemm(t, width, fan_in, dy, (width, 1), w, (fan_in, 1), 0.0, &mut dx, (fan_in, 1));
    dx
}

#[derive(Debug, Clone)]
struct DenseTape {
    /// Normalised pre-activation before gain/offset.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Layer-norm output (input of the leaky rectifier).
    normed: Vec<f64>,
    /// Block output.
    act: Vec<f64>,
}

fn dense_norm_forward(p: &[f64], d: &DenseNorm, x: &[f64], t: usize) -> DenseTape {
    let h = d.width;
    let pre = affine(x, t, &p[d.w..d.w + h * d.fan_in], &p[d.b..d.b + h], d.fan_in, h);
    let gain = &p[d.gain..d.gain + h];
    let offset = &p[d.offset..d.offset + h];
    let mut xhat = vec![0.0; t * h];
    let mut inv_std = vec![0.0; t];
    let mut normed = vec![0.0; t * h];
    let mut act = vec![0.0; t * h];
    for s in 0..t {
        let row = &pre[s * h..(s + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[s] = is;
        for j in 0..h {
            let xh = (row[j] - mean) * is;
            let y = gain[j] * xh + offset[j];
            xhat[s * h + j] = xh;
            normed[s * h + j] = y;
            act[s * h + j] = leaky(y);
        }
    }
    DenseTape { xhat, inv_std, normed, act }
}

fn dense_norm_backward(
    p: &[f64],
    d: &DenseNorm,
    x: &[f64],
    t: usize,
    tape: &DenseTape,
    d_act: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let h = d.width;
    let mut d_pre = vec![0.0; t * h];
    let gain = &p[d.gain..d.gain + h];
    for s in 0..t {
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        let mut dxh = vec![0.0; h];
        for j in 0..h {
            let i = s * h + j;
            let dy = if tape.normed[i] > 0.0 { d_act[i] } else { LEAKY_SLOPE * d_act[i] };
            grad[d.gain + j] += dy * tape.xhat[i];
            grad[d.offset + j] += dy;
            dxh[j] = dy * gain[j];
            sum_dxh += dxh[j];
            sum_dxh_xh += dxh[j] * tape.xhat[i];
        }
        let scale = tape.inv_std[s] / h as f64;
        for j in 0..h {
            let i = s * h + j;
            d_pre[i] = scale * (h as f64 * dxh[j] - sum_dxh - tape.xhat[i] * sum_dxh_xh);
        }
    }
    let (w_range, b_range) = (d.w..d.w + h * d.fan_in, d.b..d.b + h);
    let w = &p[w_range.clone()];
    let mut dw = vec![0.0; h * d.fan_in];
    let mut db = vec![0.0; h];
    let dx = affine_backward(x, t, w, d.fan_in, h, &d_pre, &mut dw, &mut db);
    for (g, v) in grad[w_range].iter_mut().zip(dw) {
        *g += v;
    }
    for (g, v) in grad[b_range].iter_mut().zip(db) {
        *g += v;
    }
    dx
}

#[derive(Debug, Clone)]
struct GruTape {
    h0: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn·h + b_hn` per step.
    hn: Vec<f64>,
    /// Hidden state after every step, time-major.
    states: Vec<f64>,
}

fn gru_forward(p: &[f64], g: &Gru, x: &[f64], t: usize, h0: &[f64]) -> GruTape {
    let h = g.hidden;
    let h3 = 3 * h;
    let gi = affine(x, t, &p[g.w_ih..g.w_ih + h3 * g.fan_in], &p[g.b_ih..g.b_ih + h3], g.fan_in, h3);
    let w_hh = &p[g.w_hh..g.w_hh + h3 * h];
    let b_hh = &p[g.b_hh..g.b_hh + h3];
    let mut tape = GruTape {
        h0: h0.to_vec(),
        r: vec![0.0; t * h],
        z: vec![0.0; t * h],
        n: vec![0.0; t * h],
        hn: vec![0.0; t * h],
        states: vec![0.0; t * h],
    };
    let mut state = h0.to_vec();
    let mut gh = vec![0.0; h3];
    for s in 0..t {
        gh.copy_from_slice(b_hh);
        gemm(h3, h, 1, w_hh, (h, 1), &state, (1, 1), 1.0, &mut gh, (1, 1));
        let gis = &gi[s * h3..(s + 1) * h3];
        for j in 0..h {
            let r = logistic(gis[j] + gh[j]);
            let z = logistic(gis[h + j] + gh[h + j]);
            let n = (gis[2 * h + j] + r * gh[2 * h + j]).tanh();
            let i = s * h + j;
            tape.r[i] = r;
            tape.z[i] = z;
            tape.n[i] = n;
            tape.hn[i] = gh[2 * h + j];
            state[j] = (1.0 - z) * n + z * state[j];
        }
        tape.states[s * h..(s + 1) * h].copy_from_slice(&state);
    }
    tape
}

fn gru_backward(p: &[f64], g: &Gru, x: &[f64], t: usize, tape: &GruTape, d_states: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let h = g.hidden;
    let h3 = 3 * h;
    let w_hh = &p[g.w_hh..g.w_hh + h3 * h];
    let mut d_gi = vec![0.0; t * h3];
    let mut d_gh = vec![0.0; t * h3];
    let mut carry = vec![0.0; h];
    for s in (0..t).rev() {
        let prev = if s == 0 { &tape.h0[..] } else { &tape.states[(s - 1) * h..s * h] };
        let dgi = &mut d_gi[s * h3..(s + 1) * h3];
        let dgh = &mut d_gh[s * h3..(s + 1) * h3];
        for j in 0..h {
            let i = s * h + j;
            let dh = d_states[i] + carry[j];
            let (r, z, n) = (tape.r[i], tape.z[i], tape.n[i]);
            let dn_pre = dh * (1.0 - z) * (1.0 - n * n);
            let dz_pre = dh * (prev[j] - n) * z * (1.0 - z);
            let dr_pre = dn_pre * tape.hn[i] * r * (1.0 - r);
            dgi[j] = dr_pre;
            dgi[h + j] = dz_pre;
            dgi[2 * h + j] = dn_pre;
            dgh[j] = dr_pre;
            dgh[h + j] = dz_pre;
            dgh[2 * h + j] = dn_pre * r;
            carry[j] = dh * z;
        }
        // carry += W_hhᵀ·dgh
        gemm(h, h3, 1, w_hh, (1, h), dgh, (1, 1), 1.0, &mut carry, (1, 1));
    }
    // dW_hh += d_ghᵀ·[h0; states[..T-1]]
    let mut prev_states = Vec::with_capacity(t * h);
    prev_states.extend_from_slice(&tape.h0);
    prev_states.extend_from_slice(&tape.states[..(t - 1) * h]);
    let mut dw_hh = vec![0.0; h3 * h];
    gemm(h3, t, h, &d_gh, (1, h3), &prev_states, (h, 1), 0.0, &mut dw_hh, (h, 1));
    for (acc, v) in grad[g.w_hh..g.w_hh + h3 * h].iter_mut().zip(dw_hh) {
        *acc += v;
    }
    for row in d_gh.chunks_exact(h3) {
        for (acc, v) in grad[g.b_hh..g.b_hh + h3].iter_mut().zip(row) {
            *acc += v;
        }
    }
    let w_ih = &p[g.w_ih..g.w_ih + h3 * g.fan_in];
    let mut dw = vec![0.0; h3 * g.fan_in];
    let mut db = vec![0.0; h3];
    let dx = affine_backward(x, t, w_ih, g.fan_in, h3, &d_gi, &mut dw, &mut db);
    for (acc, v) in grad[g.w_ih..g.w_ih + h3 * g.fan_in].iter_mut().zip(dw) {
        *acc += v;
    }
    for (acc, v) in grad[g.b_ih..g.b_ih + h3].iter_mut().zip(db) {
        *acc += v;
    }
    dx
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    frames: usize,
    controls: Vec<Vec<f64>>,
    input: Vec<DenseTape>,
    embedding: Vec<f64>,
    gru: GruTape,
    out: Vec<DenseTape>,
    logits: Vec<f64>,
}

impl Tape {
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Recurrent state after the last frame.
    pub fn final_state(&self) -> &[f64] {
        let h = self.gru.h0.len();
        &self.gru.states[(self.frames - 1) * h..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    values: Vec<f64>,
}

impl ModelParams {
    /// Uniform `±1/√fan_in` affine weights and biases, zero GRU biases,
    /// unit norm gains and zero offsets.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut values = vec![0.0; layout.total()];
        let mut uniform = |range: Range<usize>, fan_in: usize, values: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.gen_range(-bound..=bound);
            }
        };
        for d in layout.input.iter().chain(&layout.out) {
            uniform(d.w..d.w + d.width * d.fan_in, d.fan_in, &mut values);
            uniform(d.b..d.b + d.width, d.fan_in, &mut values);
            values[d.gain..d.gain + d.width].fill(1.0);
        }
        let g = layout.gru;
        uniform(g.w_ih..g.w_ih + 3 * g.hidden * g.fan_in, g.fan_in, &mut values);
        uniform(g.w_hh..g.w_hh + 3 * g.hidden * g.hidden, g.hidden, &mut values);
        let f = layout.last;
        uniform(f.w..f.w + f.width * f.fan_in, f.fan_in, &mut values);
        uniform(f.b..f.b + f.width, f.fan_in, &mut values);
        Ok(Self { config, values })
    }

    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let want = param_count(&config);
        if values.len() != want {
            return Err(Error::Dimension(format!("{} parameters, expected {want}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    fn check_controls(&self, controls: &[Vec<f64>]) -> Result<usize> {
        if controls.len() != self.config.num_controls {
            return Err(Error::Dimension(format!(
                "{} control curves for a model with {} controls",
                controls.len(),
                self.config.num_controls
            )));
        }
        let t = controls[0].len();
        if t == 0 {
            return Err(Error::InvalidInput("control sequence has no frames".into()));
        }
        if controls.iter().any(|c| c.len() != t) {
            return Err(Error::Dimension("control curves differ in length".into()));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controls".into()));
        }
        Ok(t)
    }

    /// Amplitudes for `controls` (C rows of T frames) from a zero state.
    pub fn forward(&self, controls: &[Vec<f64>]) -> Result<AmplitudeFrameMatrix> {
        Ok(self.forward_tape(controls, None)?.0)
    }

    /// Amplitudes plus the final recurrent state, starting from `state`
    /// (zero when `None`). Chaining calls over consecutive control chunks
    /// reproduces one long call.
    pub fn forward_with_state(
        &self,
        controls: &[Vec<f64>],
        state: Option<&[f64]>,
    ) -> Result<(AmplitudeFrameMatrix, Vec<f64>)> {
        let (amps, tape) = self.forward_tape(controls, state)?;
        Ok((amps, tape.final_state().to_vec()))
    }

    pub fn forward_tape(
        &self,
        controls: &[Vec<f64>],
        state: Option<&[f64]>,
    ) -> Result<(AmplitudeFrameMatrix, Tape)> {
        let t = self.check_controls(controls)?;
        let cfg = &self.config;
        let h = cfg.hidden;
        let h0 = match state {
            Some(s) if s.len() != h => {
                return Err(Error::Dimension(format!("state of width {} for hidden {h}", s.len())))
            }
            Some(s) => s.to_vec(),
            None => vec![0.0; h],
        };
        let layout = self.layout();
        let p = &self.values;
        let ch = cfg.num_controls * h;

        let input: Vec<DenseTape> = layout
            .input
            .iter()
            .zip(controls)
            .map(|(d, c)| dense_norm_forward(p, d, c, t))
            .collect();
        let mut embedding = vec![0.0; t * ch];
        for (c, tape) in input.iter().enumerate() {
            for s in 0..t {
                embedding[s * ch + c * h..s * ch + (c + 1) * h].copy_from_slice(&tape.act[s * h..(s + 1) * h]);
            }
        }
        let gru = gru_forward(p, &layout.gru, &embedding, t, &h0);
        let mut out: Vec<DenseTape> = Vec::with_capacity(layout.out.len());
        for d in &layout.out {
            let x = out.last().map_or(&gru.states, |o| &o.act);
            let tape = dense_norm_forward(p, d, x, t);
            out.push(tape);
        }
        let x = out.last().map_or(&gru.states, |o| &o.act);
        let f = layout.last;
        let m = f.width;
        // logits (M × T) = W (M × H) · xᵀ (H × T) + b
        let mut logits: Vec<f64> = p[f.b..f.b + m].iter().flat_map(|&b| std::iter::repeat(b).take(t)).collect();
        gemm(m, h, t, &p[f.w..f.w + m * h], (h, 1), x, (1, h), 1.0, &mut logits, (t, 1));
        let amps = logits.iter().map(|&z| scaled_sigmoid(z)).collect();
        let amps = AmplitudeFrameMatrix { num_bands: m, frames: t, values: amps };
        let tape = Tape { frames: t, controls: controls.to_vec(), input, embedding, gru, out, logits };
        Ok((amps, tape))
    }

    /// Gradient of a loss with respect to the flat parameters, given the
    /// loss gradient with respect to the amplitudes (band-major, M × T).
    pub fn backward(&self, tape: &Tape, d_amps: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (t, h, m) = (tape.frames, cfg.hidden, cfg.num_bands);
        if d_amps.len() != m * t {
            return Err(Error::Dimension(format!("amplitude gradient of {} for {m}×{t}", d_amps.len())));
        }
        let layout = self.layout();
        let p = &self.values;
        let mut grad = vec![0.0; layout.total()];

        let d_logits: Vec<f64> =
            d_amps.iter().zip(&tape.logits).map(|(g, &z)| g * scaled_sigmoid_derivative(z)).collect();
        let f = layout.last;
        let x = tape.out.last().map_or(&tape.gru.states, |o| &o.act);
        // dW += dZ (M × T) · x (T × H); dx (T × H) = dZᵀ · W
        gemm(m, t, h, &d_logits, (t, 1), x, (h, 1), 1.0, &mut grad[f.w..f.w + m * h], (h, 1));
        for (row, acc) in d_logits.chunks_exact(t).zip(&mut grad[f.b..f.b + m]) {
            *acc += row.iter().sum::<f64>();
        }
        let mut dx = vec![0.0; t * h];
        gemm(t, m, h, &d_logits, (1, t), &p[f.w..f.w + m * h], (h, 1), 0.0, &mut dx, (h, 1));

        for (l, d) in layout.out.iter().enumerate().rev() {
            let x = if l == 0 { &tape.gru.states } else { &tape.out[l - 1].act };
            dx = dense_norm_backward(p, d, x, t, &tape.out[l], &dx, &mut grad);
        }
        let d_emb = gru_backward(p, &layout.gru, &tape.embedding, t, &tape.gru, &dx, &mut grad);
        let ch = cfg.num_controls * h;
        for (c, d) in layout.input.iter().enumerate() {
            let mut d_act = vec![0.0; t * h];
            for s in 0..t {
                d_act[s * h..(s + 1) * h].copy_from_slice(&d_emb[s * ch + c * h..s * ch + (c + 1) * h]);
            }
            dense_norm_backward(p, d, &tape.controls[c], t, &tape.input[c], &d_act, &mut grad);
        }
        check_finite_gradient(&layout, &grad)?;
        Ok(grad)
    }
}
