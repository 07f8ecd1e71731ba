//! Differentiable surrogate forecast models.
//!
//! Two families share one interface:
//!
//! * the *desk* model, a stack of local stencil layers with `tanh`
//!   activations followed by a distance-weighted readout around the target
//!   cell, and
//! * the *linear* reference model `F(x) = sum_i w_i x_i` with weights that
//!   decay with distance from the target.
//!
//! Gradients are exact reverse-mode accumulations through the stencil layers.
//! Every computation only touches the boxes that can reach the readout, so a
//! cell outside [`ForecastModel::receptive_radius`] has exactly zero
//! influence on the prediction.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{haversine, FieldTensor, GridSpec, TargetSpec};
use crate::rng::{self, tag};

pub const MAX_DEPTH: usize = 6;
/// Readout radius that covers any grid.
pub const GLOBAL_READOUT: usize = usize::MAX / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Desk,
    Linear,
}

/// Hyperparameters from which a model is rebuilt deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub depth: usize,
    pub channels: usize,
    pub stencil_radius: usize,
    /// Chebyshev radius (cells) of the readout window around the target.
    pub readout_radius: usize,
    /// e-folding length of the readout and linear weights.
    pub decay_km: f64,
}

impl ModelConfig {
    pub fn desk(seed: u64, depth: usize) -> Self {
        Self {
            kind: ModelKind::Desk,
            seed,
            depth,
            channels: 4,
            stencil_radius: 2,
            readout_radius: GLOBAL_READOUT,
            decay_km: 500.0,
        }
    }

    pub fn linear(seed: u64) -> Self {
        Self {
            kind: ModelKind::Linear,
            seed,
            depth: 0,
            channels: 0,
            stencil_radius: 0,
            readout_radius: GLOBAL_READOUT,
            decay_km: 500.0,
        }
    }

    pub fn with_readout_radius(mut self, radius: usize) -> Self {
        self.readout_radius = radius;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Half-open cell rectangle `[i0, i1) x [j0, j1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Rect {
    pub fn around(i: usize, j: usize, radius: usize, n_lat: usize, n_lon: usize) -> Self {
        Self {
            i0: i.saturating_sub(radius),
            i1: (i.saturating_add(radius).saturating_add(1)).min(n_lat),
            j0: j.saturating_sub(radius),
            j1: (j.saturating_add(radius).saturating_add(1)).min(n_lon),
        }
    }

    pub fn expand(&self, by: usize, n_lat: usize, n_lon: usize) -> Self {
        Self {
            i0: self.i0.saturating_sub(by),
            i1: (self.i1 + by).min(n_lat),
            j0: self.j0.saturating_sub(by),
            j1: (self.j1 + by).min(n_lon),
        }
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            i0: self.i0.max(other.i0),
            i1: self.i1.min(other.i1),
            j0: self.j0.max(other.j0),
            j1: self.j1.min(other.j1),
        };
        (r.i0 < r.i1 && r.j0 < r.j1).then_some(r)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i1).contains(&i) && (self.j0..self.j1).contains(&j)
    }

    pub fn area(&self) -> usize {
        (self.i1 - self.i0) * (self.j1 - self.j0)
    }
}

#[derive(Debug, Clone)]
struct StencilLayer {
    c_in: usize,
    c_out: usize,
    radius: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl StencilLayer {
    fn width(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    fn w(&self, o: usize, c: usize, a: usize, b: usize) -> f64 {
        let k = self.width();
        self.weights[((o * self.c_in + c) * k + a) * k + b]
    }

    /// `out[o] = bias[o] + sum_c stencil(w[o,c], inp[c])` on `rect`, zero padded.
    fn apply(&self, inp: &[f64], out: &mut [f64], rect: Rect, n_lat: usize, n_lon: usize) {
        let n = n_lat * n_lon;
        let r = self.radius as isize;
        for o in 0..self.c_out {
            let out_o = &mut out[o * n..(o + 1) * n];
            for i in rect.i0..rect.i1 {
                out_o[i * n_lon + rect.j0..i * n_lon + rect.j1].fill(self.bias[o]);
            }
            for c in 0..self.c_in {
                let in_c = &inp[c * n..(c + 1) * n];
                for (a, di) in (-r..=r).enumerate() {
                    for (b, dj) in (-r..=r).enumerate() {
                        let w = self.w(o, c, a, b);
                        let j_lo = (rect.j0 as isize).max(-dj) as usize;
                        let j_hi = (rect.j1 as isize).min(n_lon as isize - dj);
                        if j_hi <= j_lo as isize {
                            continue;
                        }
                        let j_hi = j_hi as usize;
                        for i in rect.i0..rect.i1 {
                            let si = i as isize + di;
                            if si < 0 || si >= n_lat as isize {
                                continue;
                            }
                            let src = si as usize * n_lon;
                            let dst = i * n_lon;
                            let sj = (j_lo as isize + dj) as usize;
                            let src_row = &in_c[src + sj..src + sj + (j_hi - j_lo)];
                            let dst_row = &mut out_o[dst + j_lo..dst + j_hi];
                            for (d, s) in dst_row.iter_mut().zip(src_row) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
            for i in rect.i0..rect.i1 {
                for v in &mut out_o[i * n_lon + rect.j0..i * n_lon + rect.j1] {
                    *v = v.tanh();
                }
            }
        }
    }

    /// Scatter the adjoint of the pre-activations `dpre` (on `rect`) into the
    /// adjoint of the layer input.
    fn backprop(&self, dpre: &[f64], dinp: &mut [f64], rect: Rect, n_lat: usize, n_lon: usize) {
        let n = n_lat * n_lon;
        let r = self.radius as isize;
        for c in 0..self.c_in {
            let din_c = &mut dinp[c * n..(c + 1) * n];
            for o in 0..self.c_out {
                let dp_o = &dpre[o * n..(o + 1) * n];
                for (a, di) in (-r..=r).enumerate() {
                    for (b, dj) in (-r..=r).enumerate() {
                        let w = self.w(o, c, a, b);
                        let j_lo = (rect.j0 as isize).max(-dj) as usize;
                        let j_hi = (rect.j1 as isize).min(n_lon as isize - dj);
                        if j_hi <= j_lo as isize {
                            continue;
                        }
                        let j_hi = j_hi as usize;
                        for i in rect.i0..rect.i1 {
                            let si = i as isize + di;
                            if si < 0 || si >= n_lat as isize {
                                continue;
                            }
                            let dst = si as usize * n_lon;
                            let sj = (j_lo as isize + dj) as usize;
                            let src_row = &dp_o[i * n_lon + j_lo..i * n_lon + j_hi];
                            let dst_row = &mut din_c[dst + sj..dst + sj + (j_hi - j_lo)];
                            for (d, s) in dst_row.iter_mut().zip(src_row) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct StencilNet {
    layers: Vec<StencilLayer>,
    channel_readout: Vec<f64>,
    /// `(cell, weight)` pairs of the spatial readout, weights sum to one.
    readout: Vec<(usize, f64)>,
    /// `boxes[l]` is the region of layer-`l` activations that can reach the
    /// readout; `boxes[0]` is the input region.
    boxes: Vec<Rect>,
}

#[derive(Debug, Clone)]
enum Body {
    Linear { weights: Vec<f64> },
    Stencil(StencilNet),
}

#[derive(Debug, Default)]
struct Counters {
    forward: AtomicU64,
    gradient: AtomicU64,
}

/// Snapshot of how many model evaluations have been made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounts {
    pub forward: u64,
    pub gradient: u64,
}

/// Deterministic differentiable forecast model for one target.
#[derive(Debug)]
pub struct ForecastModel {
    grid: Arc<GridSpec>,
    target: TargetSpec,
    config: ModelConfig,
    shift: Vec<f64>,
    scale: Vec<f64>,
    out_shift: f64,
    out_scale: f64,
    body: Body,
    counters: Counters,
}

impl Clone for ForecastModel {
    fn clone(&self) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            target: self.target.clone(),
            config: self.config.clone(),
            shift: self.shift.clone(),
            scale: self.scale.clone(),
            out_shift: self.out_shift,
            out_scale: self.out_scale,
            body: self.body.clone(),
            counters: Counters::default(),
        }
    }
}

/// Stacked stencil model with `depth` layers, weights drawn from `seed`.
pub fn make_desk_model(seed: u64, grid: &Arc<GridSpec>, target: &TargetSpec, depth: usize) -> Result<ForecastModel> {
    ForecastModel::from_config(grid, target, &ModelConfig::desk(seed, depth))
}

/// Linear model with distance-decaying weights centred on the target.
pub fn make_linear_model(seed: u64, grid: &Arc<GridSpec>, target: &TargetSpec) -> Result<ForecastModel> {
    ForecastModel::from_config(grid, target, &ModelConfig::linear(seed))
}

fn decay_weights(grid: &GridSpec, target: &TargetSpec, rect: Rect, decay_km: f64) -> Vec<(usize, f64)> {
    let centre = target.cell_latlon(grid);
    let mut out = Vec::with_capacity(rect.area());
    for i in rect.i0..rect.i1 {
        for j in rect.j0..rect.j1 {
            let d = haversine(centre, grid.cell_latlon(i, j));
            out.push((grid.cell(i, j), (-d / decay_km).exp()));
        }
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    out.iter_mut().for_each(|p| p.1 /= total);
    out
}

/// Normalised 2-D Gaussian kernel (sigma one cell) on a `(2r+1)^2` stencil.
fn smoothing_kernel(radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .flat_map(|a| (-r..=r).map(move |b| (-((a * a + b * b) as f64) / 2.0).exp()))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

impl ForecastModel {
    pub fn from_config(grid: &Arc<GridSpec>, target: &TargetSpec, config: &ModelConfig) -> Result<Self> {
        if target.lat_idx >= grid.n_lat() || target.lon_idx >= grid.n_lon() || target.variable >= grid.n_vars() {
            return Err(Error::InvalidArgument("target does not belong to this grid".into()));
        }
        if !(config.decay_km > 0.0) {
            return Err(Error::InvalidArgument("decay length must be positive".into()));
        }
        let shift: Vec<f64> = grid.variables().iter().map(|v| v.mean).collect();
        let scale: Vec<f64> = grid.variables().iter().map(|v| v.std).collect();
        let out_var = &grid.variables()[target.variable];
        let mut r = rng::stream(config.seed, tag::MODEL, 0);
        let body = match config.kind {
            ModelKind::Linear => {
                let full = Rect {
                    i0: 0,
                    i1: grid.n_lat(),
                    j0: 0,
                    j1: grid.n_lon(),
                };
                let spatial = decay_weights(grid, target, full, config.decay_km);
                let mut weights = vec![0.0; grid.len()];
                for v in 0..grid.n_vars() {
                    let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                    let amp = sign * r.random_range(0.5..1.5) * out_var.std / scale[v];
                    for &(cell, s) in &spatial {
                        weights[v * grid.n_cells() + cell] = amp * s;
                    }
                }
                Body::Linear { weights }
            }
            ModelKind::Desk => {
                if config.depth == 0 || config.depth > MAX_DEPTH {
                    return Err(Error::InvalidArgument(format!(
                        "depth must be in [1, {MAX_DEPTH}], got {}",
                        config.depth
                    )));
                }
                if config.stencil_radius == 0 || config.channels == 0 {
                    return Err(Error::InvalidArgument(
                        "stencil radius and channels must be >= 1".into(),
                    ));
                }
                Body::Stencil(Self::build_stencil(grid, target, config, &mut r))
            }
        };
        Ok(Self {
            grid: Arc::clone(grid),
            target: target.clone(),
            config: config.clone(),
            shift,
            scale,
            out_shift: out_var.mean,
            out_scale: out_var.std,
            body,
            counters: Counters::default(),
        })
    }

    fn build_stencil<R: Rng>(grid: &GridSpec, target: &TargetSpec, config: &ModelConfig, r: &mut R) -> StencilNet {
        const GAIN: f64 = 0.8;
        const TEXTURE: f64 = 0.25;
        let radius = config.stencil_radius;
        let kernel = smoothing_kernel(radius);
        let width = 2 * radius + 1;
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let c_in = if l == 0 { grid.n_vars() } else { config.channels };
            let c_out = config.channels;
            let mut weights = Vec::with_capacity(c_out * c_in * width * width);
            let mix_scale = GAIN / (c_in as f64).sqrt();
            for _o in 0..c_out {
                for _c in 0..c_in {
                    let m: f64 = r.sample::<f64, _>(StandardNormal) * mix_scale;
                    for &k in &kernel {
                        let noise: f64 = r.sample(StandardNormal);
                        weights.push(m * k + TEXTURE * mix_scale * noise / width as f64);
                    }
                }
            }
            let bias = (0..c_out).map(|_| 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
            layers.push(StencilLayer {
                c_in,
                c_out,
                radius,
                weights,
                bias,
            });
        }
        let channel_readout: Vec<f64> = (0..config.channels)
            .map(|_| {
                let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                sign * r.random_range(0.5..1.5)
            })
            .collect();
        let (n_lat, n_lon) = (grid.n_lat(), grid.n_lon());
        let out_box = Rect::around(target.lat_idx, target.lon_idx, config.readout_radius, n_lat, n_lon);
        let readout = decay_weights(grid, target, out_box, config.decay_km);
        let mut boxes = vec![out_box; config.depth + 1];
        for l in (0..config.depth).rev() {
            boxes[l] = boxes[l + 1].expand(radius, n_lat, n_lon);
        }
        StencilNet {
            layers,
            channel_readout,
            readout,
            boxes,
        }
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn id(&self) -> String {
        match self.config.kind {
            ModelKind::Desk => format!(
                "desk-d{}-s{}-{}-{}",
                self.config.depth, self.config.seed, self.target.name, self.target.variable_name
            ),
            ModelKind::Linear => format!(
                "linear-s{}-{}-{}",
                self.config.seed, self.target.name, self.target.variable_name
            ),
        }
    }

    /// Chebyshev radius (cells) beyond which inputs cannot affect the output.
    pub fn receptive_radius(&self) -> usize {
        match &self.body {
            Body::Linear { .. } => self.grid.n_lat().max(self.grid.n_lon()),
            Body::Stencil(_) => self
                .config
                .readout_radius
                .saturating_add(self.config.depth * self.config.stencil_radius),
        }
    }

    /// Input region that can influence the prediction.
    pub fn input_support(&self) -> Rect {
        match &self.body {
            Body::Linear { .. } => Rect {
                i0: 0,
                i1: self.grid.n_lat(),
                j0: 0,
                j1: self.grid.n_lon(),
            },
            Body::Stencil(net) => net.boxes[0],
        }
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            forward: self.counters.forward.load(Ordering::Relaxed),
            gradient: self.counters.gradient.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        self.counters.forward.store(0, Ordering::Relaxed);
        self.counters.gradient.store(0, Ordering::Relaxed);
    }

    fn check(&self, x: &FieldTensor) -> Result<()> {
        if x.grid().shape() != self.grid.shape() || **x.grid() != *self.grid {
            return Err(Error::ShapeMismatch {
                expected: self.grid.shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    fn normalise(&self, x: &FieldTensor) -> Vec<f64> {
        let n = self.grid.n_cells();
        let mut h = Vec::with_capacity(self.grid.len());
        for v in 0..self.grid.n_vars() {
            let (s, c) = (self.shift[v], self.scale[v]);
            h.extend(x.values()[v * n..(v + 1) * n].iter().map(|x| (x - s) / c));
        }
        h
    }

    fn readout(&self, net: &StencilNet, last: &[f64]) -> f64 {
        let n = self.grid.n_cells();
        let mut acc = 0.0;
        for (c, &a) in net.channel_readout.iter().enumerate() {
            let h = &last[c * n..(c + 1) * n];
            let s: f64 = net.readout.iter().map(|&(cell, w)| w * h[cell]).sum();
            acc += a * s;
        }
        self.out_shift + self.out_scale * acc
    }

    fn activations(&self, net: &StencilNet, h0: Vec<f64>) -> Vec<Vec<f64>> {
        let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
        let mut acts = Vec::with_capacity(net.layers.len() + 1);
        acts.push(h0);
        for (l, layer) in net.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.c_out * n_lat * n_lon];
            layer.apply(&acts[l], &mut out, net.boxes[l + 1], n_lat, n_lon);
            acts.push(out);
        }
        acts
    }

    /// Scalar prediction at the target.
    pub fn forward(&self, x: &FieldTensor) -> Result<f64> {
        self.check(x)?;
        self.counters.forward.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.body {
            Body::Linear { weights } => dot(weights, x.values()),
            Body::Stencil(net) => {
                let acts = self.activations(net, self.normalise(x));
                self.readout(net, acts.last().expect("at least one layer"))
            }
        })
    }

    /// Forward pass that keeps intermediate activations for
    /// [`ForecastModel::forward_from`].
    pub fn forward_cached(&self, x: &FieldTensor) -> Result<ForwardCache> {
        self.check(x)?;
        self.counters.forward.fetch_add(1, Ordering::Relaxed);
        Ok(match &self.body {
            Body::Linear { weights } => ForwardCache {
                output: dot(weights, x.values()),
                acts: vec![x.values().to_vec()],
            },
            Body::Stencil(net) => {
                let acts = self.activations(net, self.normalise(x));
                let output = self.readout(net, acts.last().expect("at least one layer"));
                ForwardCache { output, acts }
            }
        })
    }

    /// Prediction for `x_new`, recomputing only what changed relative to the
    /// cached input. Bit-identical to [`ForecastModel::forward`].
    pub fn forward_from(&self, cache: &ForwardCache, x_new: &FieldTensor) -> Result<f64> {
        self.check(x_new)?;
        self.counters.forward.fetch_add(1, Ordering::Relaxed);
        let net = match &self.body {
            Body::Linear { weights } => return Ok(dot(weights, x_new.values())),
            Body::Stencil(net) => net,
        };
        let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
        let n = n_lat * n_lon;
        let h0 = self.normalise(x_new);
        let mut changed: Option<Rect> = None;
        for (k, (a, b)) in h0.iter().zip(&cache.acts[0]).enumerate() {
            if a.to_bits() != b.to_bits() {
                let cell = k % n;
                let (i, j) = (cell / n_lon, cell % n_lon);
                changed = Some(match changed {
                    None => Rect {
                        i0: i,
                        i1: i + 1,
                        j0: j,
                        j1: j + 1,
                    },
                    Some(r) => Rect {
                        i0: r.i0.min(i),
                        i1: r.i1.max(i + 1),
                        j0: r.j0.min(j),
                        j1: r.j1.max(j + 1),
                    },
                });
            }
        }
        let Some(changed) = changed else {
            return Ok(cache.output);
        };
        let mut prev = h0;
        for (l, layer) in net.layers.iter().enumerate() {
            let affected = changed
                .expand(layer.radius * (l + 1), n_lat, n_lon)
                .intersect(&net.boxes[l + 1]);
            let Some(affected) = affected else {
                return Ok(cache.output);
            };
            let mut out = cache.acts[l + 1].clone();
            layer.apply(&prev, &mut out, affected, n_lat, n_lon);
            prev = out;
        }
        debug_assert_eq!(prev.len(), net.layers.last().map_or(0, |l| l.c_out) * n);
        Ok(self.readout(net, &prev))
    }

    /// Exact gradient of the prediction with respect to every input value.
    pub fn gradient(&self, x: &FieldTensor) -> Result<FieldTensor> {
        self.value_and_gradient(x).map(|(_, g)| g)
    }

    /// Prediction and its gradient from one forward and one backward pass.
    pub fn value_and_gradient(&self, x: &FieldTensor) -> Result<(f64, FieldTensor)> {
        self.check(x)?;
        self.counters.gradient.fetch_add(1, Ordering::Relaxed);
        let (value, grad) = match &self.body {
            Body::Linear { weights } => (dot(weights, x.values()), weights.clone()),
            Body::Stencil(net) => {
                let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
                let n = n_lat * n_lon;
                let acts = self.activations(net, self.normalise(x));
                let value = self.readout(net, acts.last().expect("at least one layer"));
                let depth = net.layers.len();
                let mut adj = vec![0.0; net.layers[depth - 1].c_out * n];
                for (c, &a) in net.channel_readout.iter().enumerate() {
                    for &(cell, w) in &net.readout {
                        adj[c * n + cell] = self.out_scale * a * w;
                    }
                }
                for l in (0..depth).rev() {
                    let layer = &net.layers[l];
                    let rect = net.boxes[l + 1];
                    let h = &acts[l + 1];
                    for o in 0..layer.c_out {
                        for i in rect.i0..rect.i1 {
                            let row = o * n + i * n_lon;
                            for k in row + rect.j0..row + rect.j1 {
                                adj[k] *= 1.0 - h[k] * h[k];
                            }
                        }
                    }
                    let mut below = vec![0.0; layer.c_in * n];
                    layer.backprop(&adj, &mut below, rect, n_lat, n_lon);
                    adj = below;
                }
                for v in 0..self.grid.n_vars() {
                    let s = self.scale[v];
                    adj[v * n..(v + 1) * n].iter_mut().for_each(|g| *g /= s);
                }
                (value, adj)
            }
        };
        let grad = FieldTensor::from_values(&self.grid, grad, x.timestamp())?;
        Ok((value, grad))
    }

    /// Copy whose weights are multiplied by `(1 + delta)`, with `delta`
    /// uniform in `[-amplitude, amplitude]` drawn from `seed`.
    pub fn perturbed(&self, seed: u64, amplitude: f64) -> ForecastModel {
        let mut out = self.clone();
        if amplitude == 0.0 {
            return out;
        }
        let mut r = rng::stream(seed, tag::TRUTH_WEIGHTS, 0);
        let mut jitter = |w: &mut f64| *w *= 1.0 + r.random_range(-amplitude..=amplitude);
        match &mut out.body {
            Body::Linear { weights } => weights.iter_mut().for_each(&mut jitter),
            Body::Stencil(net) => {
                for layer in &mut net.layers {
                    layer.weights.iter_mut().for_each(&mut jitter);
                    layer.bias.iter_mut().for_each(&mut jitter);
                }
                net.channel_readout.iter_mut().for_each(&mut jitter);
            }
        }
        out
    }

    /// Copy in which variable `v` has no influence on the prediction.
    pub fn with_input_masked(&self, v: usize) -> Result<ForecastModel> {
        if v >= self.grid.n_vars() {
            return Err(Error::InvalidArgument(format!("no variable {v}")));
        }
        let mut out = self.clone();
        let n = self.grid.n_cells();
        match &mut out.body {
            Body::Linear { weights } => weights[v * n..(v + 1) * n].fill(0.0),
            Body::Stencil(net) => {
                let first = &mut net.layers[0];
                let k = first.width() * first.width();
                for o in 0..first.c_out {
                    let start = (o * first.c_in + v) * k;
                    first.weights[start..start + k].fill(0.0);
                }
            }
        }
        Ok(out)
    }

    /// Copy with an all-zero readout: a constant function.
    pub fn with_zero_readout(&self) -> ForecastModel {
        let mut out = self.clone();
        match &mut out.body {
            Body::Linear { weights } => weights.fill(0.0),
            Body::Stencil(net) => net.channel_readout.fill(0.0),
        }
        out
    }

    /// The same model expressed in units where variable `v` is multiplied
    /// by `factor`: `F'(x') = F(x)` when `x'_v = factor * x_v`.
    pub fn with_variable_rescaled(&self, v: usize, factor: f64) -> Result<ForecastModel> {
        if v >= self.grid.n_vars() || !(factor > 0.0) {
            return Err(Error::InvalidArgument(
                "rescale needs a valid variable and factor > 0".into(),
            ));
        }
        let mut out = self.clone();
        out.grid = Arc::new(rescaled_grid(&self.grid, v, factor));
        out.shift[v] *= factor;
        out.scale[v] *= factor;
        if v == self.target.variable {
            out.out_shift *= factor;
            out.out_scale *= factor;
        }
        if let Body::Linear { weights } = &mut out.body {
            let n = self.grid.n_cells();
            weights[v * n..(v + 1) * n].iter_mut().for_each(|w| *w /= factor);
        }
        Ok(out)
    }

    /// Empirical standard deviation of each layer's pre-activations on `x`.
    pub fn preactivation_std(&self, x: &FieldTensor) -> Result<Vec<f64>> {
        self.check(x)?;
        let Body::Stencil(net) = &self.body else {
            return Ok(Vec::new());
        };
        let acts = self.activations(net, self.normalise(x));
        let n = self.grid.n_cells();
        let n_lon = self.grid.n_lon();
        Ok(net
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let rect = net.boxes[l + 1];
                let mut vals = Vec::new();
                for o in 0..layer.c_out {
                    for i in rect.i0..rect.i1 {
                        for j in rect.j0..rect.j1 {
                            vals.push(
                                acts[l + 1][o * n + i * n_lon + j]
                                    .clamp(-1.0 + 1e-15, 1.0 - 1e-15)
                                    .atanh(),
                            );
                        }
                    }
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
            })
            .collect())
    }
}

/// Grid identical to `grid` except for the nominal units of variable `v`.
pub fn rescaled_grid(grid: &GridSpec, v: usize, factor: f64) -> GridSpec {
    let (lat_min, lat_max, lon_min, lon_max) = grid.bounds();
    let mut variables = grid.variables().to_vec();
    variables[v].mean *= factor;
    variables[v].std *= factor;
    GridSpec::new(&crate::grid::GridConfig {
        n_lat: grid.n_lat(),
        n_lon: grid.n_lon(),
        lat_min,
        lat_max,
        lon_min,
        lon_max,
        variables,
    })
    .expect("rescaling keeps a valid grid")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Activations of one forward pass, reused for cheap local re-evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    output: f64,
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.output
    }
}

/// Prediction, verification value and their absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutcome {
    pub prediction: f64,
    pub verification: f64,
    pub abs_error: f64,
}

impl ForecastOutcome {
    pub fn new(prediction: f64, verification: f64) -> Self {
        Self {
            prediction,
            verification,
            abs_error: (prediction - verification).abs(),
        }
    }
}

/// Default relative weight mismatch between the forecast and truth models.
pub const TRUTH_MISMATCH: f64 = 0.05;

/// Generator of verification values `y*(x) = F_truth(x) + noise`.
#[derive(Debug, Clone)]
pub struct Truth {
    model: ForecastModel,
    seed: u64,
    noise_std: f64,
}

pub fn make_truth(model: &ForecastModel, seed: u64, noise_std: f64) -> Result<Truth> {
    make_truth_with_mismatch(model, seed, noise_std, TRUTH_MISMATCH)
}

pub fn make_truth_with_mismatch(model: &ForecastModel, seed: u64, noise_std: f64, mismatch: f64) -> Result<Truth> {
    if !(noise_std >= 0.0) || !(mismatch >= 0.0) {
        return Err(Error::InvalidArgument("noise_std and mismatch must be >= 0".into()));
    }
    Ok(Truth {
        model: model.perturbed(seed, mismatch),
        seed,
        noise_std,
    })
}

impl Truth {
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Verification value for a field; the noise draw depends only on the
    /// seed and the field's timestamp.
    pub fn verification(&self, x: &FieldTensor) -> Result<f64> {
        let clean = self.model.forward(x)?;
        if self.noise_std == 0.0 {
            return Ok(clean);
        }
        let mut r = rng::stream(self.seed, tag::TRUTH_NOISE, x.timestamp() as u64);
        let z: f64 = r.sample(StandardNormal);
        Ok(clean + self.noise_std * z)
    }

    pub fn outcome(&self, model: &ForecastModel, x: &FieldTensor) -> Result<ForecastOutcome> {
        Ok(ForecastOutcome::new(model.forward(x)?, self.verification(x)?))
    }
}
