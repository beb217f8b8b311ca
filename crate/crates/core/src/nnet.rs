//! A small embedding + MLP engine with hand-written backpropagation.
//!
//! Every field id is looked up in one shared embedding table; the
//! concatenated embeddings (plus, for the label-correction model, an
//! encoding of the elapsed time) feed a stack of dense layers with
//! Leaky-ReLU activations and a sigmoid output.
//!
//! The elapsed time enters as a bucket embedding (log-spaced hour buckets
//! below one day, one bucket per day up to the attribution window, one
//! overflow bucket) concatenated with the scalar `ln(1 + e/day) / ln(1 + w_a/day)`.
//! Bucket rows start at zero so buckets never seen in training contribute
//! nothing and the scalar carries the extrapolation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Duration, FeatureSchema, DAY, HOUR};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Dense layer computing `weight · x + bias`; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }
}

/// Maps an elapsed time onto its bucket index and scalar feature.
///
/// Inputs are clamped to `horizon`, the largest elapsed time the model was
/// fit on, so buckets past it (never trained) are not consulted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElapsedEncoder {
    pub w_a: Duration,
    pub horizon: Duration,
    pub boundaries: Vec<Duration>,
}

impl ElapsedEncoder {
    pub fn new(w_a: Duration) -> Result<Self> {
        if w_a <= 0 {
            return Err(Error::config("attribution window must be positive"));
        }
        let mut boundaries: Vec<Duration> = [1, 2, 4, 8, 16].iter().map(|h| h * HOUR).collect();
        let window_days = (w_a + DAY - 1) / DAY;
        boundaries.extend((1..=window_days).map(|d| d * DAY));
        Ok(Self {
            w_a,
            horizon: w_a,
            boundaries,
        })
    }

    /// Sets the clamp point; must lie in `[1, w_a]`.
    pub fn with_horizon(mut self, horizon: Duration) -> Result<Self> {
        if !(1..=self.w_a).contains(&horizon) {
            return Err(Error::config(format!(
                "elapsed horizon {horizon} outside [1, {}]",
                self.w_a
            )));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn num_buckets(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bucket(&self, e: Duration) -> usize {
        let e = e.min(self.horizon);
        self.boundaries.partition_point(|&b| b <= e)
    }

    pub fn scalar(&self, e: Duration) -> f64 {
        let day = DAY as f64;
        (e.clamp(0, self.horizon) as f64 / day).ln_1p() / (self.w_a as f64 / day).ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElapsedInput {
    pub encoder: ElapsedEncoder,
    pub table: Matrix,
}

/// Architecture of a model, independent of its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    /// Attribution window when the model takes elapsed time as input.
    pub elapsed_window: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub schema: FeatureSchema,
    pub embedding: Matrix,
    pub elapsed: Option<ElapsedInput>,
    pub layers: Vec<Dense>,
}

/// Per-tensor gradient buffers in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Scratch activations reused across forward/backward passes.
#[derive(Debug, Default)]
pub struct Workspace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl ModelParams {
    /// Randomly initialized parameters: embeddings uniform in `±1/sqrt(d)`,
    /// dense weights uniform in `±1/sqrt(fan_in)`, zero biases and zero
    /// elapsed-bucket rows.
    pub fn init<R: Rng>(schema: &FeatureSchema, shape: &ModelShape, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(schema, shape)?;
        let d = shape.embedding_dim;
        p.embedding = Matrix::uniform(schema.num_categories(), d, 1.0 / (d as f64).sqrt(), rng);
        for layer in &mut p.layers {
            let limit = 1.0 / (layer.inputs() as f64).sqrt();
            layer.weight = Matrix::uniform(layer.outputs(), layer.inputs(), limit, rng);
        }
        Ok(p)
    }

    /// All-zero parameters; outputs sigmoid(0) = 0.5 for every input.
    pub fn zeros(schema: &FeatureSchema, shape: &ModelShape) -> Result<Self> {
        if shape.embedding_dim == 0 || shape.hidden.contains(&0) {
            return Err(Error::config("embedding_dim and hidden sizes must be positive"));
        }
        let d = shape.embedding_dim;
        let elapsed = match shape.elapsed_window {
            Some(w_a) => {
                let encoder = ElapsedEncoder::new(w_a)?;
                let table = Matrix::zeros(encoder.num_buckets(), d);
                Some(ElapsedInput { encoder, table })
            }
            None => None,
        };
        let mut width = schema.num_fields() * d + if elapsed.is_some() { d + 1 } else { 0 };
        let mut layers = Vec::with_capacity(shape.hidden.len() + 1);
        for &h in shape.hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Dense {
                weight: Matrix::zeros(h, width),
                bias: vec![0.0; h],
            });
            width = h;
        }
        Ok(Self {
            schema: schema.clone(),
            embedding: Matrix::zeros(schema.num_categories(), d),
            elapsed,
            layers,
        })
    }

    /// Clamps elapsed inputs at `horizon` from now on.
    pub fn set_elapsed_horizon(&mut self, horizon: Duration) -> Result<()> {
        let el = self
            .elapsed
            .as_mut()
            .ok_or_else(|| Error::config("model takes no elapsed input"))?;
        el.encoder = el.encoder.clone().with_horizon(horizon)?;
        Ok(())
    }

    pub fn has_elapsed_input(&self) -> bool {
        self.elapsed.is_some()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            embedding_dim: self.embedding_dim(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(Dense::outputs)
                .collect(),
            elapsed_window: self.elapsed.as_ref().map(|e| e.encoder.w_a),
        }
    }

    /// Named tensors in a fixed order; gradients and optimizer state follow it.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        if self.elapsed.is_some() {
            names.push("elapsed_embedding".into());
        }
        for i in 0..self.layers.len() {
            names.push(format!("dense{i}.weight"));
            names.push(format!("dense{i}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embedding.data];
        if let Some(e) = &self.elapsed {
            out.push(&e.table.data);
        }
        for l in &self.layers {
            out.push(&l.weight.data);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embedding.data];
        if let Some(e) = &mut self.elapsed {
            out.push(&mut e.table.data);
        }
        for l in &mut self.layers {
            out.push(&mut l.weight.data);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, features: &[u32], elapsed: Option<Duration>) -> Result<()> {
        self.schema.check(features)?;
        match (self.has_elapsed_input(), elapsed) {
            (true, None) => Err(Error::input("model expects an elapsed time")),
            (false, Some(_)) => Err(Error::input("model takes no elapsed time")),
            (true, Some(e)) if e < 0 => Err(Error::input("elapsed time must be nonnegative")),
            _ => Ok(()),
        }
    }

    /// Predicted probability for one input.
    pub fn forward(&self, features: &[u32], elapsed: Option<Duration>) -> Result<f64> {
        self.check_input(features, elapsed)?;
        let mut ws = Workspace::default();
        Ok(self.forward_ws(features, elapsed, &mut ws))
    }

    /// Predictions for a batch of inputs, validating each.
    pub fn predict_batch<'a, I>(&self, inputs: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = (&'a [u32], Option<Duration>)>,
    {
        let mut ws = Workspace::default();
        inputs
            .into_iter()
            .map(|(f, e)| {
                self.check_input(f, e)?;
                Ok(self.forward_ws(f, e, &mut ws))
            })
            .collect()
    }

    fn fill_input(&self, features: &[u32], elapsed: Option<Duration>, input: &mut Vec<f64>) {
        input.clear();
        for (field, &id) in features.iter().enumerate() {
            input.extend_from_slice(self.embedding.row(self.schema.global_id(field, id)));
        }
        if let (Some(el), Some(e)) = (&self.elapsed, elapsed) {
            input.extend_from_slice(el.table.row(el.encoder.bucket(e)));
            input.push(el.encoder.scalar(e));
        }
    }

    /// Forward pass without input validation, keeping activations in `ws`.
    pub(crate) fn forward_ws(&self, features: &[u32], elapsed: Option<Duration>, ws: &mut Workspace) -> f64 {
        let n = self.layers.len();
        ws.pre.resize_with(n, Vec::new);
        ws.act.resize_with(n, Vec::new);
        let mut input = std::mem::take(&mut ws.input);
        self.fill_input(features, elapsed, &mut input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = ws.act.split_at_mut(l);
            let x: &[f64] = if l == 0 { &input } else { &before[l - 1] };
            let pre = &mut ws.pre[l];
            pre.clear();
            for (o, &b) in layer.bias.iter().enumerate() {
                let row = layer.weight.row(o);
                let mut s = b;
                for (w, xi) in row.iter().zip(x) {
                    s += w * xi;
                }
                pre.push(s);
            }
            let act = &mut rest[0];
            act.clear();
            if l + 1 < n {
                act.extend(pre.iter().map(|&z| leaky(z)));
            } else {
                act.extend(pre.iter().map(|&z| sigmoid(z)));
            }
        }
        ws.input = input;
        ws.act[n - 1][0]
    }

    /// Adds `scale * d(BCE against soft target)/d(params)` for one sample
    /// into `grads` and returns the prediction. Uses `dL/dz = f - y`, the
    /// exact derivative of the unclamped cross-entropy.
    pub(crate) fn accumulate_grad(
        &self,
        features: &[u32],
        elapsed: Option<Duration>,
        target: f64,
        scale: f64,
        grads: &mut Gradients,
        ws: &mut Workspace,
    ) -> f64 {
        let f = self.forward_ws(features, elapsed, ws);
        let n = self.layers.len();
        let offset = if self.elapsed.is_some() { 2 } else { 1 };
        ws.delta.clear();
        ws.delta.push(scale * (f - target));
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let x: &[f64] = if l == 0 { &ws.input } else { &ws.act[l - 1] };
            let (gw, gb) = {
                let (a, b) = grads.tensors.split_at_mut(offset + 2 * l + 1);
                (&mut a[offset + 2 * l], &mut b[0])
            };
            let cols = layer.inputs();
            for (o, &d) in ws.delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    let row = &mut gw[o * cols..(o + 1) * cols];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            ws.next_delta.clear();
            ws.next_delta.resize(cols, 0.0);
            for (o, &d) in ws.delta.iter().enumerate() {
                if d != 0.0 {
                    for (nd, w) in ws.next_delta.iter_mut().zip(layer.weight.row(o)) {
                        *nd += d * w;
                    }
                }
            }
            if l > 0 {
                for (nd, &z) in ws.next_delta.iter_mut().zip(&ws.pre[l - 1]) {
                    *nd *= leaky_grad(z);
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.next_delta);
        }
        // ws.delta now holds d/d(input); scatter it into the lookup rows.
        let d = self.embedding_dim();
        for (field, &id) in features.iter().enumerate() {
            let row = self.schema.global_id(field, id);
            let g = &mut grads.tensors[0][row * d..(row + 1) * d];
            for (gi, di) in g.iter_mut().zip(&ws.delta[field * d..(field + 1) * d]) {
                *gi += di;
            }
        }
        if let (Some(el), Some(e)) = (&self.elapsed, elapsed) {
            let start = features.len() * d;
            let b = el.encoder.bucket(e);
            let g = &mut grads.tensors[1][b * d..(b + 1) * d];
            for (gi, di) in g.iter_mut().zip(&ws.delta[start..start + d]) {
                *gi += di;
            }
        }
        f
    }
}

/// The supervised objectives the engine can differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Cross-entropy against the true label `c`.
    Oracle,
    /// Cross-entropy against the observed label `v`.
    Vanilla,
    /// Label-corrected loss: `v + w (1 - v)` as the soft target.
    Lc,
    /// Cross-entropy against the (possibly fractional) weight `w`.
    Bce,
}

/// Per-sample labels; each loss kind reads the ones it needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Target {
    pub v: f64,
    pub c: f64,
    pub w: f64,
}

impl LossKind {
    /// Every supported loss is a cross-entropy against this soft target.
    pub fn soft_target(self, t: &Target) -> f64 {
        match self {
            LossKind::Oracle => t.c,
            LossKind::Vanilla => t.v,
            LossKind::Lc => t.v + t.w * (1.0 - t.v),
            LossKind::Bce => t.w,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [u32],
    pub elapsed: Option<Duration>,
    pub target: Target,
}

/// Gradient of the mean batch loss with respect to every parameter.
pub fn grad(params: &ModelParams, batch: &[Example<'_>], kind: LossKind) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::input("gradient of an empty batch"));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut ws = Workspace::default();
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        params.check_input(ex.features, ex.elapsed)?;
        let y = kind.soft_target(&ex.target);
        params.accumulate_grad(ex.features, ex.elapsed, y, scale, &mut grads, &mut ws);
    }
    Ok(grads)
}

/// Adam moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update on `grads + l2 * params`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    l2: f64,
) -> Result<()> {
    let shapes_agree = {
        let ts = params.tensors();
        ts.len() == grads.tensors.len()
            && ts.len() == state.m.len()
            && ts
                .iter()
                .zip(&grads.tensors)
                .zip(&state.m)
                .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len())
    };
    if !shapes_agree {
        return Err(Error::config("gradient/optimizer shapes do not match parameters"));
    }
    if let Some((ti, _)) = grads
        .tensors
        .iter()
        .enumerate()
        .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
    {
        let name = params.tensor_names()[ti].clone();
        return Err(Error::Numeric(format!(
            "non-finite gradient in tensor {name} at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i] + l2 * p[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// `target` with its field-embedding table replaced by a copy of `source`'s.
pub fn transfer_embeddings(source: &ModelParams, target: &ModelParams) -> Result<ModelParams> {
    if source.embedding.rows != target.embedding.rows || source.embedding.cols != target.embedding.cols {
        return Err(Error::config(format!(
            "embedding shapes differ: {}x{} vs {}x{}",
            source.embedding.rows, source.embedding.cols, target.embedding.rows, target.embedding.cols
        )));
    }
    if source.schema != target.schema {
        return Err(Error::config("models use different feature schemas"));
    }
    let mut out = target.clone();
    out.embedding.data.copy_from_slice(&source.embedding.data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logsim::stream_rng;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![5, 3, 4]).unwrap()
    }

    fn shape(elapsed: bool) -> ModelShape {
        ModelShape {
            embedding_dim: 4,
            hidden: vec![6, 5],
            elapsed_window: elapsed.then_some(30 * DAY),
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = ModelParams::zeros(&schema(), &shape(false)).unwrap();
        assert_eq!(p.forward(&[1, 2, 3], None).unwrap(), 0.5);
        let q = ModelParams::zeros(&schema(), &shape(true)).unwrap();
        assert_eq!(q.forward(&[1, 2, 3], Some(5 * DAY)).unwrap(), 0.5);
    }

    #[test]
    fn layer_shapes_chain() {
        let p = ModelParams::zeros(&schema(), &shape(false)).unwrap();
        assert_eq!(p.input_width(), 12);
        let q = ModelParams::zeros(&schema(), &shape(true)).unwrap();
        assert_eq!(q.input_width(), 12 + 4 + 1);
        for m in [&p, &q] {
            for pair in m.layers.windows(2) {
                assert_eq!(pair[0].outputs(), pair[1].inputs());
            }
            assert_eq!(m.layers.last().unwrap().outputs(), 1);
        }
        assert_eq!(q.shape(), shape(true));
    }

    #[test]
    fn forward_is_deterministic_and_in_range() {
        let mut rng = stream_rng(1, 0);
        let p = ModelParams::init(&schema(), &shape(true), &mut rng).unwrap();
        let a = p.forward(&[4, 0, 1], Some(3 * HOUR)).unwrap();
        let b = p.forward(&[4, 0, 1], Some(3 * HOUR)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0 && a.is_finite());
        assert!(p.all_finite());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = ModelParams::zeros(&schema(), &shape(false)).unwrap();
        assert!(matches!(p.forward(&[5, 0, 0], None), Err(Error::Input(_))));
        assert!(matches!(p.forward(&[0, 0, 0], Some(10)), Err(Error::Input(_))));
        let q = ModelParams::zeros(&schema(), &shape(true)).unwrap();
        assert!(matches!(q.forward(&[0, 0, 0], None), Err(Error::Input(_))));
    }

    #[test]
    fn final_bias_is_monotone() {
        let mut rng = stream_rng(2, 0);
        let mut p = ModelParams::init(&schema(), &shape(false), &mut rng).unwrap();
        let before = p.forward(&[1, 1, 1], None).unwrap();
        p.layers.last_mut().unwrap().bias[0] += 0.5;
        assert!(p.forward(&[1, 1, 1], None).unwrap() > before);
    }

    #[test]
    fn elapsed_buckets() {
        let enc = ElapsedEncoder::new(30 * DAY).unwrap();
        assert_eq!(enc.num_buckets(), 5 + 30 + 1);
        assert_eq!(enc.bucket(0), 0);
        assert_eq!(enc.bucket(HOUR), 1);
        assert_eq!(enc.bucket(3 * HOUR), 2);
        assert_eq!(enc.bucket(DAY), 6);
        assert_eq!(enc.bucket(DAY + 5), 6);
        assert_eq!(enc.bucket(29 * DAY + 1), 34);
        assert_eq!(enc.bucket(31 * DAY), 35);
        assert!((enc.scalar(30 * DAY) - 1.0).abs() < 1e-12);
        assert_eq!(enc.scalar(0), 0.0);

        let short = enc.clone().with_horizon(17 * DAY).unwrap();
        assert_eq!(short.bucket(20 * DAY), short.bucket(17 * DAY));
        assert_eq!(short.bucket(16 * DAY), enc.bucket(16 * DAY));
        assert_eq!(short.scalar(25 * DAY), enc.scalar(17 * DAY));
        assert!(enc.clone().with_horizon(0).is_err());
        assert!(enc.with_horizon(31 * DAY).is_err());
    }

    #[test]
    fn single_weight_bce_gradient_is_closed_form() {
        // One field with vocab 1, d = 1, no hidden layer: f = sigmoid(w * e0 + b).
        let schema = FeatureSchema::new(vec![1]).unwrap();
        let shape = ModelShape {
            embedding_dim: 1,
            hidden: vec![],
            elapsed_window: None,
        };
        let mut p = ModelParams::zeros(&schema, &shape).unwrap();
        p.embedding.data[0] = 0.7;
        p.layers[0].weight.data[0] = -1.3;
        p.layers[0].bias[0] = 0.2;
        let z: f64 = -1.3 * 0.7 + 0.2;
        let f = 1.0 / (1.0 + (-z).exp());
        let ex = Example {
            features: &[0],
            elapsed: None,
            target: Target { v: 0.0, c: 1.0, w: 0.0 },
        };
        let g = grad(&p, &[ex], LossKind::Oracle).unwrap();
        // d/dw [-log f] = -(1 - f) * x
        assert!((g.tensors[1][0] - (f - 1.0) * 0.7).abs() < 1e-14);
        assert!((g.tensors[2][0] - (f - 1.0)).abs() < 1e-14);
        assert!((g.tensors[0][0] - (f - 1.0) * -1.3).abs() < 1e-14);
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let mut rng = stream_rng(3, 0);
        let p = ModelParams::init(&schema(), &shape(true), &mut rng).unwrap();
        let feats = [[0u32, 1, 2], [4, 2, 0], [3, 0, 3]];
        let batch: Vec<Example> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| Example {
                features: f,
                elapsed: Some((i as i64 + 1) * DAY),
                target: Target { v: (i % 2) as f64, c: 1.0, w: 0.3 },
            })
            .collect();
        let doubled: Vec<Example> = batch.iter().chain(batch.iter()).copied().collect();
        let a = grad(&p, &batch, LossKind::Lc).unwrap();
        let b = grad(&p, &doubled, LossKind::Lc).unwrap();
        for (x, y) in a.tensors.iter().flatten().zip(b.tensors.iter().flatten()) {
            assert!((x - y).abs() <= 1e-15 * (1.0 + x.abs()));
        }
        assert!(matches!(grad(&p, &[], LossKind::Lc), Err(Error::Input(_))));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut rng = stream_rng(4, 0);
        let mut p = ModelParams::init(&schema(), &shape(false), &mut rng).unwrap();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut st, 1e-3, 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut rng = stream_rng(5, 0);
        let mut p = ModelParams::init(&schema(), &shape(false), &mut rng).unwrap();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        for (i, x) in g.tensors.iter_mut().flatten().enumerate() {
            *x = if i % 2 == 0 { 0.37 } else { -2.1 };
        }
        let mut st = OptimizerState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut st, lr, 0.0).unwrap();
        for ((a, b), gi) in p
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .zip(before.tensors().iter().flat_map(|t| t.iter()))
            .zip(g.tensors.iter().flatten())
        {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expected = lr * gi / (gi.abs() + ADAM_EPS);
            assert!(((b - a) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = ModelParams::zeros(&schema(), &shape(false)).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.tensors[2][0] = f64::NAN;
        let mut st = OptimizerState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut st, 1e-3, 0.0), Err(Error::Numeric(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn transfer_copies_only_embeddings() {
        let mut rng = stream_rng(6, 0);
        let mut src = ModelParams::init(&schema(), &shape(false), &mut rng).unwrap();
        let tgt = ModelParams::init(&schema(), &shape(true), &mut rng).unwrap();
        let out = transfer_embeddings(&src, &tgt).unwrap();
        assert_eq!(out.embedding.row(0), src.embedding.row(0));
        assert_eq!(out.layers, tgt.layers);
        assert_eq!(out.elapsed, tgt.elapsed);
        let snapshot = out.clone();
        src.embedding.data.iter_mut().for_each(|x| *x += 1.0);
        assert_eq!(out, snapshot);

        let other = ModelParams::zeros(
            &schema(),
            &ModelShape {
                embedding_dim: 3,
                hidden: vec![2],
                elapsed_window: None,
            },
        )
        .unwrap();
        assert!(matches!(transfer_embeddings(&other, &tgt), Err(Error::Config(_))));
    }
}
