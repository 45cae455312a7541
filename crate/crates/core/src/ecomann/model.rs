//! Fully-connected tanh network `h: ℝᵈ → ℝˡ` with exact input Jacobians and
//! reverse-mode gradients through both the output and the Jacobian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::format_row;
use crate::{Error, Result};

const MODULE: &str = "ecomann";

/// Hidden widths of the implicit-function network.
pub const HIDDEN_DIMS: [usize; 4] = [36, 24, 18, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in self
            .weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .enumerate()
        {
            out[o] = b + dot(row, x);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tanh hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

/// Per-layer parameter gradients, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(other.biases.iter()))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Reusable activation buffers for one evaluation.
///
/// `acts[0]` is the input, `acts[k]` the output of layer `k`. When tangents
/// are propagated, `pre_tangents[k]` holds `∂z_k/∂q` and `tangents[k]` holds
/// `∂a_k/∂q`, both row-major `width_k x d`; the last entry of `tangents` is
/// the input Jacobian.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    pre_tangents: Vec<Vec<f64>>,
    tangents: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
    delta_t: Vec<f64>,
    delta_t_next: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    /// Row-major `l x d` Jacobian from the last tangent pass.
    pub fn jacobian(&self) -> &[f64] {
        self.tangents.last().unwrap()
    }
}

impl MlpModel {
    /// Glorot-uniform weights and biases uniform in `±1/sqrt(fan_in)`.
    /// Zero biases would make the tanh network an odd function, which
    /// gradient descent preserves on centrally symmetric data.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
            let b_limit = 1.0 / (layer.inputs as f64).sqrt();
            for b in &mut layer.bias {
                *b = rng.random_range(-b_limit..b_limit);
            }
        }
        Ok(model)
    }

    /// The `d-36-24-18-10-l` implicit-function architecture.
    pub fn ecomann(input_dim: usize, codim: usize, seed: u64) -> Result<Self> {
        Self::new(&Self::ecomann_dims(input_dim, codim), seed)
    }

    pub fn ecomann_dims(input_dim: usize, codim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&HIDDEN_DIMS);
        dims.push(codim);
        dims
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param(
                MODULE,
                format!("layer dims {dims:?} must have >= 2 positive entries"),
            ));
        }
        Ok(MlpModel {
            layers: dims
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param(MODULE, "a model needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::param(MODULE, "layer dimensions do not chain"));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::param(MODULE, "layer buffer sizes are inconsistent"));
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn new_trace(&self) -> Trace {
        let d = self.input_dim();
        let dims = self.dims();
        let max_w = *dims.iter().max().unwrap();
        Trace {
            acts: dims.iter().map(|&w| vec![0.0; w]).collect(),
            pre_tangents: dims.iter().map(|&w| vec![0.0; w * d]).collect(),
            tangents: dims.iter().map(|&w| vec![0.0; w * d]).collect(),
            delta: vec![0.0; max_w],
            delta_next: vec![0.0; max_w],
            delta_t: vec![0.0; max_w * d],
            delta_t_next: vec![0.0; max_w * d],
        }
    }

    fn check_input(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.input_dim() {
            return Err(Error::param(
                MODULE,
                format!("input has {} values, model expects {}", q.len(), self.input_dim()),
            ));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(MODULE, "non-finite input"));
        }
        Ok(())
    }

    pub fn forward(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_input(q)?;
        Ok(self.forward_unchecked(q))
    }

    pub(crate) fn forward_unchecked(&self, q: &[f64]) -> Vec<f64> {
        let mut tr = self.new_trace();
        self.forward_into(q, &mut tr);
        tr.output().to_vec()
    }

    /// `l x d` input Jacobian.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(q)?;
        Ok(self.jacobian_unchecked(q))
    }

    pub(crate) fn jacobian_unchecked(&self, q: &[f64]) -> DMatrix<f64> {
        let mut tr = self.new_trace();
        self.forward_tangent_into(q, &mut tr);
        DMatrix::from_row_slice(self.output_dim(), self.input_dim(), tr.jacobian())
    }

    /// Forward pass recording activations.
    pub fn forward_into(&self, q: &[f64], tr: &mut Trace) {
        tr.acts[0].copy_from_slice(q);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, after) = tr.acts.split_at_mut(k + 1);
            let out = &mut after[0];
            layer.apply(&before[k], out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    /// Forward pass that also propagates `∂/∂q` through every layer.
    pub fn forward_tangent_into(&self, q: &[f64], tr: &mut Trace) {
        self.forward_into(q, tr);
        let d = self.input_dim();
        let t0 = &mut tr.tangents[0];
        t0.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            t0[i * d + i] = 1.0;
        }
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = tr.tangents.split_at_mut(k + 1);
            let a_prev = &prev[k];
            let pre = &mut tr.pre_tangents[k + 1];
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let dst = &mut pre[o * d..(o + 1) * d];
                dst.iter_mut().for_each(|v| *v = 0.0);
                for (i, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = &a_prev[i * d..(i + 1) * d];
                    for (x, s) in dst.iter_mut().zip(src) {
                        *x += w * s;
                    }
                }
            }
            let post = &mut rest[0];
            if k < last {
                let a = &tr.acts[k + 1];
                for o in 0..layer.outputs {
                    let s = 1.0 - a[o] * a[o];
                    for j in 0..d {
                        post[o * d + j] = s * pre[o * d + j];
                    }
                }
            } else {
                post.copy_from_slice(pre);
            }
        }
    }

    /// Accumulates `scale · ∂(d_out · h)/∂θ` into `grads`, using activations
    /// from [`forward_into`](Self::forward_into).
    pub fn backward(&self, tr: &mut Trace, d_out: &[f64], grads: &mut Gradients, scale: f64) {
        let Trace {
            acts,
            delta,
            delta_next,
            ..
        } = tr;
        delta[..d_out.len()].copy_from_slice(d_out);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a_prev = &acts[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            for o in 0..layer.outputs {
                let g = scale * delta[o];
                gb[o] += g;
                if g != 0.0 {
                    for (w, a) in gw[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter_mut()
                        .zip(a_prev)
                    {
                        *w += g * a;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let prev = &mut delta_next[..layer.inputs];
            prev.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..layer.outputs {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                for (p, w) in prev
                    .iter_mut()
                    .zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs])
                {
                    *p += g * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(a_prev) {
                *p *= 1.0 - a * a;
            }
            std::mem::swap(delta, delta_next);
        }
    }

    /// Accumulates `scale · ∂(d_out · h + ⟨d_jac, J⟩)/∂θ` into `grads`, where
    /// `J` is the input Jacobian from [`forward_tangent_into`](Self::forward_tangent_into)
    /// and `d_jac` is row-major `l x d`.
    pub fn backward_tangent(
        &self,
        tr: &mut Trace,
        d_out: Option<&[f64]>,
        d_jac: &[f64],
        grads: &mut Gradients,
        scale: f64,
    ) {
        let d = self.input_dim();
        let Trace {
            acts,
            pre_tangents,
            tangents,
            delta,
            delta_next,
            delta_t,
            delta_t_next,
        } = tr;
        let l = self.output_dim();
        match d_out {
            Some(g) => delta[..l].copy_from_slice(g),
            None => delta[..l].iter_mut().for_each(|v| *v = 0.0),
        }
        delta_t[..l * d].copy_from_slice(d_jac);

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (nin, nout) = (layer.inputs, layer.outputs);
            let a_prev = &acts[k];
            let t_prev = &tangents[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            for o in 0..nout {
                let g = delta[o];
                let gt = &delta_t[o * d..(o + 1) * d];
                gb[o] += scale * g;
                let row = &mut gw[o * nin..(o + 1) * nin];
                for i in 0..nin {
                    let mut acc = g * a_prev[i];
                    let tp = &t_prev[i * d..(i + 1) * d];
                    for j in 0..d {
                        acc += gt[j] * tp[j];
                    }
                    row[i] += scale * acc;
                }
            }
            if k == 0 {
                break;
            }
            let da = &mut delta_next[..nin];
            let dat = &mut delta_t_next[..nin * d];
            da.iter_mut().for_each(|v| *v = 0.0);
            dat.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..nout {
                let g = delta[o];
                let gt = &delta_t[o * d..(o + 1) * d];
                let row = &layer.weights[o * nin..(o + 1) * nin];
                for i in 0..nin {
                    let w = row[i];
                    da[i] += w * g;
                    let dst = &mut dat[i * d..(i + 1) * d];
                    for j in 0..d {
                        dst[j] += w * gt[j];
                    }
                }
            }
            // through a = tanh(z), ȧ = s ż with s = 1 - a²
            let pre = &pre_tangents[k];
            for i in 0..nin {
                let a = a_prev[i];
                let s = 1.0 - a * a;
                let mut s_bar = 0.0;
                for j in 0..d {
                    s_bar += dat[i * d + j] * pre[i * d + j];
                    dat[i * d + j] *= s;
                }
                da[i] = da[i] * s - 2.0 * a * s * s_bar;
            }
            std::mem::swap(delta, delta_next);
            std::mem::swap(delta_t, delta_t_next);
        }
    }

    pub fn to_text(&self) -> String {
        let dims = self
            .dims()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut s = format!("# ecomann dims={dims}\n");
        for layer in &self.layers {
            for row in layer.weights.chunks_exact(layer.inputs) {
                let _ = writeln!(s, "{}", format_row(row));
            }
            let _ = writeln!(s, "{}", format_row(&layer.bias));
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, 1, "empty model file"))?;
        let dims_str = header
            .strip_prefix("# ecomann dims=")
            .ok_or_else(|| Error::parse(source, 1, "expected '# ecomann dims=...' header"))?;
        let dims: Vec<usize> = dims_str
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::parse(source, 1, format!("bad layer width '{t}'")))
            })
            .collect::<Result<_>>()?;
        let mut model = Self::zeros(&dims).map_err(|e| Error::parse(source, 1, e.to_string()))?;
        let mut read_row = |expect: usize| -> Result<Vec<f64>> {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source, text.lines().count() + 1, "truncated model file"))?;
            let row: Vec<f64> = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(source, lineno, format!("bad number '{t}'")))
                })
                .collect::<Result<_>>()?;
            if row.len() != expect {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("expected {expect} values, found {}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(source, lineno, "non-finite parameter"));
            }
            Ok(row)
        };
        for layer in &mut model.layers {
            for o in 0..layer.outputs {
                let row = read_row(layer.inputs)?;
                layer.weights[o * layer.inputs..(o + 1) * layer.inputs].copy_from_slice(&row);
            }
            layer.bias = read_row(layer.outputs)?;
        }
        if let Some((lineno, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(
                source,
                lineno,
                format!("unexpected trailing content '{extra}' (layer count mismatch)"),
            ));
        }
        Ok(model)
    }
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    MlpModel::from_text(&fs::read_to_string(path)?, &path.display().to_string())
}
