//! The parameterized distribution predictor: observation in, one categorical
//! distribution per action out. Plain fully connected stack with ReLU hidden
//! layers, hand-derived reverse-mode gradients for the categorical
//! cross-entropy loss, an adaptive-moment optimizer, and target-network sync.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::categorical::{expectation_raw, CategoricalDistribution, CategoricalError, Support};

/// Probabilities are clamped at this floor inside the log so a zero-probability
/// atom carrying target mass yields a large finite loss instead of infinity.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite {what} encountered; the run has diverged")]
    NonFinite { what: &'static str },
    #[error("gradient shapes do not match network parameters")]
    ShapeMismatch,
    #[error("networks are not structurally identical")]
    StructuralMismatch,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid target distribution: {0}")]
    InvalidTarget(#[from] CategoricalError),
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint at line {line}: {reason}")]
    MalformedCheckpoint { line: usize, reason: String },
}

/// One dense layer. Weights are row-major `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        // Uniform fan-in scaling: U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let biases = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { in_dim, out_dim, weights, biases }
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out[o] = acc;
        }
    }
}

/// Gradient (or moment) storage mirroring a network's parameter shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &ValueDistributionNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g = 0.0);
            l.biases.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn matches(&self, net: &ValueDistributionNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len())
    }

    fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|g| g.is_finite()) && l.biases.iter().all(|g| g.is_finite())
        })
    }
}

/// Reusable buffers for forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

/// MLP mapping an observation to `action_count * n_atoms` logits, softmaxed
/// per action block into categorical distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistributionNetwork {
    pub obs_dim: usize,
    pub action_count: usize,
    pub n_atoms: usize,
    pub layers: Vec<LayerParams>,
}

impl ValueDistributionNetwork {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_count: usize,
        n_atoms: usize,
        hidden_dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(obs_dim > 0 && action_count > 0 && n_atoms >= 2);
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(action_count * n_atoms);
        let layers = dims.windows(2).map(|w| LayerParams::init(w[0], w[1], rng)).collect();
        Self { obs_dim, action_count, n_atoms, layers }
    }

    /// Layer widths including input and output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.obs_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params_are_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }

    fn ensure_scratch(&self, scratch: &mut Scratch) {
        if scratch.acts.len() != self.layers.len() {
            scratch.acts = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            scratch.deltas = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            scratch.probs = vec![0.0; self.action_count * self.n_atoms];
        }
    }

    /// Runs hidden layers with ReLU; leaves logits in the last activation
    /// buffer. Split out so training can softmax a single action block.
    fn forward_hidden(&self, obs: &[f64], scratch: &mut Scratch) {
        let n_layers = self.layers.len();
        for (idx, layer) in self.layers.iter().enumerate() {
            // Split borrow: the previous activation stays readable as input.
            let (before, rest) = scratch.acts.split_at_mut(idx);
            let input: &[f64] = if idx == 0 { obs } else { &before[idx - 1] };
            let out = &mut rest[0][..];
            layer.affine(input, out);
            if idx + 1 < n_layers {
                for a in out.iter_mut() {
                    if *a < 0.0 {
                        *a = 0.0;
                    }
                }
            }
        }
    }

    /// Flat `action_count * n_atoms` probability vector. Hot path; no
    /// validity checks beyond debug assertions.
    pub fn forward_probs_into<'a>(&self, obs: &[f64], scratch: &'a mut Scratch) -> &'a [f64] {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.ensure_scratch(scratch);
        self.forward_hidden(obs, scratch);
        let logits = scratch.acts.last().unwrap();
        for a in 0..self.action_count {
            let block = &logits[a * self.n_atoms..(a + 1) * self.n_atoms];
            let out = &mut scratch.probs[a * self.n_atoms..(a + 1) * self.n_atoms];
            softmax_block(block, out);
        }
        &scratch.probs
    }

    /// One validated forward pass producing a distribution per action.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<CategoricalDistribution>, NetworkError> {
        if obs.len() != self.obs_dim {
            return Err(NetworkError::DimensionMismatch { expected: self.obs_dim, got: obs.len() });
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(NetworkError::NonFinite { what: "observation" });
        }
        let mut scratch = Scratch::default();
        let probs = self.forward_probs_into(obs, &mut scratch);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(NetworkError::NonFinite { what: "activation" });
        }
        Ok(probs
            .chunks(self.n_atoms)
            .map(|c| CategoricalDistribution::from_probs_unchecked(c.to_vec()))
            .collect())
    }
}

#[inline]
fn softmax_block(logits: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        max = max.max(l);
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Per-action expected returns `Q(s,a) = Σ_i z_i p(s,a,z_i)`.
pub fn q_values(
    pmfs: &[CategoricalDistribution],
    support: &Support,
) -> Result<Vec<f64>, CategoricalError> {
    pmfs.iter().map(|d| d.expectation(support)).collect()
}

pub(crate) fn q_values_from_flat(probs: &[f64], atoms: &[f64], action_count: usize) -> Vec<f64> {
    let n = atoms.len();
    (0..action_count).map(|a| expectation_raw(&probs[a * n..(a + 1) * n], atoms)).collect()
}

/// Mean categorical cross-entropy over a batch plus exact gradients.
///
/// Per sample only the taken action's atom block carries loss signal: the
/// logit-layer gradient there is `p − Z_target`, zero elsewhere.
pub fn loss_and_gradients(
    net: &ValueDistributionNetwork,
    batch_obs: &[Vec<f64>],
    batch_actions: &[usize],
    batch_targets: &[CategoricalDistribution],
) -> Result<(f64, Gradients), NetworkError> {
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = Scratch::default();
    let loss = accumulate_loss_and_gradients(
        net,
        batch_obs.iter().map(|o| o.as_slice()),
        batch_actions,
        batch_targets,
        &mut grads,
        &mut scratch,
    )?;
    Ok((loss, grads))
}

pub(crate) fn accumulate_loss_and_gradients<'a, I>(
    net: &ValueDistributionNetwork,
    batch_obs: I,
    batch_actions: &[usize],
    batch_targets: &[CategoricalDistribution],
    grads: &mut Gradients,
    scratch: &mut Scratch,
) -> Result<f64, NetworkError>
where
    I: ExactSizeIterator<Item = &'a [f64]>,
{
    let batch_size = batch_obs.len();
    if batch_size == 0 {
        return Err(NetworkError::EmptyBatch);
    }
    assert_eq!(batch_actions.len(), batch_size);
    assert_eq!(batch_targets.len(), batch_size);
    net.ensure_scratch(scratch);
    grads.zero();

    let n = net.n_atoms;
    let n_layers = net.layers.len();
    let mut total_loss = 0.0;

    for ((obs, &action), target) in batch_obs.zip(batch_actions).zip(batch_targets) {
        if obs.len() != net.obs_dim {
            return Err(NetworkError::DimensionMismatch { expected: net.obs_dim, got: obs.len() });
        }
        if target.len() != n {
            return Err(NetworkError::InvalidTarget(CategoricalError::LengthMismatch {
                expected: n,
                got: target.len(),
            }));
        }
        assert!(action < net.action_count, "action index out of range");

        net.forward_hidden(obs, scratch);
        let block = action * n..(action + 1) * n;

        // Softmax and cross entropy on the taken action's block only.
        {
            let logits = scratch.acts.last().unwrap();
            let probs = &mut scratch.probs[..n];
            softmax_block(&logits[block.clone()], probs);
            for (p, &t) in probs.iter().zip(target.probs()) {
                if t > 0.0 {
                    total_loss -= t * p.max(LOG_FLOOR).ln();
                }
            }
        }

        // Output-layer delta: p - target on the block, zero elsewhere. Only
        // block rows accumulate gradient, so the zeros are never materialized.
        {
            let delta_out = &mut scratch.deltas[n_layers - 1];
            for (d, (p, &t)) in delta_out[block.clone()]
                .iter_mut()
                .zip(scratch.probs[..n].iter().zip(target.probs()))
            {
                *d = p - t;
            }
        }

        // Walk the layers backwards accumulating gradients.
        for idx in (0..n_layers).rev() {
            let layer = &net.layers[idx];
            let input: &[f64] = if idx == 0 { obs } else { &scratch.acts[idx - 1] };
            let rows = if idx == n_layers - 1 { block.clone() } else { 0..layer.out_dim };

            {
                let delta = &scratch.deltas[idx];
                let g = &mut grads.layers[idx];
                for o in rows.clone() {
                    let d = delta[o];
                    g.biases[o] += d;
                    let grow = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, &x) in grow.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
            }

            if idx > 0 {
                // delta_prev = W^T delta, gated by the ReLU of the previous layer.
                let (head, tail) = scratch.deltas.split_at_mut(idx);
                let delta = &tail[0];
                let delta_prev = &mut head[idx - 1];
                delta_prev.iter_mut().for_each(|d| *d = 0.0);
                for o in rows {
                    let d = delta[o];
                    let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (dp, &w) in delta_prev.iter_mut().zip(wrow) {
                        *dp += w * d;
                    }
                }
                let prev_act = &scratch.acts[idx - 1];
                for (dp, &a) in delta_prev.iter_mut().zip(prev_act) {
                    if a <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
        }
    }

    let inv_b = 1.0 / batch_size as f64;
    for l in &mut grads.layers {
        l.weights.iter_mut().for_each(|g| *g *= inv_b);
        l.biases.iter_mut().for_each(|g| *g *= inv_b);
    }
    Ok(total_loss * inv_b)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamOptimizer {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl AdamOptimizer {
    /// Defaults: lr 2.5e-4, decays 0.9/0.999, epsilon 1e-8.
    pub fn new(net: &ValueDistributionNetwork, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    pub fn apply_update(
        &mut self,
        net: &mut ValueDistributionNetwork,
        grads: &Gradients,
    ) -> Result<(), NetworkError> {
        if !grads.matches(net) || !self.first_moment.matches(net) {
            return Err(NetworkError::ShapeMismatch);
        }
        if !grads.is_finite() {
            return Err(NetworkError::NonFinite { what: "gradient" });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first_moment.layers.iter_mut().zip(&mut self.second_moment.layers))
        {
            adam_step(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            adam_step(
                &mut layer.biases,
                &g.biases,
                &mut m.biases,
                &mut v.biases,
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// A frozen full parameter copy used for bootstrap targets.
#[derive(Debug, Clone)]
pub struct TargetNetwork {
    net: ValueDistributionNetwork,
}

impl TargetNetwork {
    pub fn from_network(net: &ValueDistributionNetwork) -> Self {
        Self { net: net.clone() }
    }

    /// Deep-copies the online parameters; later updates to the source leave
    /// the target untouched.
    pub fn sync(&mut self, net: &ValueDistributionNetwork) -> Result<(), NetworkError> {
        let structurally_equal = self.net.obs_dim == net.obs_dim
            && self.net.action_count == net.action_count
            && self.net.n_atoms == net.n_atoms
            && self.net.layers.len() == net.layers.len()
            && self
                .net
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim);
        if !structurally_equal {
            return Err(NetworkError::StructuralMismatch);
        }
        self.net.clone_from(net);
        Ok(())
    }

    pub fn network(&self) -> &ValueDistributionNetwork {
        &self.net
    }
}

const CHECKPOINT_HEADER: &str = "esc51-checkpoint format_version=1";

/// Writes a flat textual parameter dump: header, shape line, then per layer a
/// row-major weight line and a bias line. Floats use the shortest decimal form
/// that round-trips, so save/load is lossless.
pub fn save_checkpoint(
    net: &ValueDistributionNetwork,
    path: impl AsRef<Path>,
) -> Result<(), NetworkError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    writeln!(w, "obs_dim={} action_count={} n_atoms={}", net.obs_dim, net.action_count, net.n_atoms)?;
    for layer in &net.layers {
        writeln!(w, "layer in={} out={}", layer.in_dim, layer.out_dim)?;
        write_floats(&mut w, &layer.weights)?;
        write_floats(&mut w, &layer.biases)?;
    }
    w.flush()?;
    Ok(())
}

fn write_floats<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            write!(w, " ")?;
        }
        write!(w, "{x}")?;
    }
    writeln!(w)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ValueDistributionNetwork, NetworkError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let malformed = |line: usize, reason: &str| NetworkError::MalformedCheckpoint {
        line: line + 1,
        reason: reason.to_string(),
    };

    let (i, header) = lines.next().ok_or_else(|| malformed(0, "empty file"))?;
    let header = header?;
    if header != CHECKPOINT_HEADER {
        return Err(malformed(i, "unrecognized header or format version"));
    }

    let (i, shape) = lines.next().ok_or_else(|| malformed(1, "missing shape line"))?;
    let shape = shape?;
    let mut fields = std::collections::HashMap::new();
    for kv in shape.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| malformed(i, "expected key=value"))?;
        let v: usize = v.parse().map_err(|_| malformed(i, "bad integer"))?;
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| malformed(i, "missing shape field"));
    let (obs_dim, action_count, n_atoms) = (get("obs_dim")?, get("action_count")?, get("n_atoms")?);

    let mut layers = Vec::new();
    while let Some((i, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rest = line
            .strip_prefix("layer ")
            .ok_or_else(|| malformed(i, "expected a layer line"))?;
        let mut in_dim = None;
        let mut out_dim = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("in", v)) => in_dim = v.parse().ok(),
                Some(("out", v)) => out_dim = v.parse().ok(),
                _ => return Err(malformed(i, "bad layer field")),
            }
        }
        let (in_dim, out_dim) = match (in_dim, out_dim) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(malformed(i, "layer line needs in= and out=")),
        };
        let (wi, wline) = lines.next().ok_or_else(|| malformed(i, "missing weight line"))?;
        let weights = parse_floats(&wline?, in_dim * out_dim).map_err(|r| malformed(wi, &r))?;
        let (bi, bline) = lines.next().ok_or_else(|| malformed(wi, "missing bias line"))?;
        let biases = parse_floats(&bline?, out_dim).map_err(|r| malformed(bi, &r))?;
        layers.push(LayerParams { in_dim, out_dim, weights, biases });
    }

    if layers.is_empty() {
        return Err(malformed(2, "no layers"));
    }
    if layers[0].in_dim != obs_dim || layers.last().unwrap().out_dim != action_count * n_atoms {
        return Err(malformed(2, "layer shapes disagree with the shape line"));
    }
    Ok(ValueDistributionNetwork { obs_dim, action_count, n_atoms, layers })
}

fn parse_floats(line: &str, expected: usize) -> Result<Vec<f64>, String> {
    let xs: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
    let xs = xs.map_err(|e| format!("bad float: {e}"))?;
    if xs.len() != expected {
        return Err(format!("expected {expected} floats, got {}", xs.len()));
    }
    Ok(xs)
}
