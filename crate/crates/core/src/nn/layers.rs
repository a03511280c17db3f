use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{accumulate, Grads, ParameterSet};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// One stage of a feed-forward stack.
///
/// Activations are laid out channels-last: a dense layer maps the last axis,
/// a 1-D convolution maps `[batch, length, channels]` to
/// `[batch, ceil(length / stride), out_channels]` with zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Tanh,
    /// Merges every axis after the first.
    Flatten,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self::Dense { inputs, outputs }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self::Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Self::Dense { .. } | Self::Conv1d { .. })
    }
}

/// Same-padding geometry: `(out_len, pad_left)`.
///
/// The total padding is split evenly, with the odd element on the right.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

enum Saved<F> {
    Input(Tensor<F>),
    Columns { cols: Vec<F>, in_shape: Vec<usize> },
    Output(Tensor<F>),
    Shape(Vec<usize>),
}

/// Values recorded by [`Sequential::forward`] for the matching backward pass.
pub struct Tape<F> {
    net: String,
    generation: u64,
    saved: Vec<Saved<F>>,
}

impl<F: Real> Tape<F> {
    /// Sign pattern of every ReLU output, packed for cheap comparison.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for s in &self.saved {
            if let Saved::Output(y) = s {
                out.extend(y.data().iter().map(|&v| v > F::zero()));
            }
        }
        out
    }
}

/// A named feed-forward stack whose weights live in a [`ParameterSet`] under
/// `"{name}.{index}.w"` and `"{name}.{index}.b"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequential {
    name: String,
    layers: Vec<LayerSpec>,
}

impl Sequential {
    pub fn new(name: &str, layers: Vec<LayerSpec>) -> Self {
        Self {
            name: name.to_string(),
            layers,
        }
    }

    /// Dense stack `dims[0] -> dims[1] -> ...`, ReLU after every layer except
    /// that the last one gets `last` (if any).
    pub fn mlp(name: &str, dims: &[usize], last: Option<LayerSpec>) -> Self {
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(LayerSpec::dense(w[0], w[1]));
            if i + 2 < dims.len() {
                layers.push(LayerSpec::Relu);
            } else if let Some(act) = last {
                layers.push(act);
            }
        }
        Self::new(name, layers)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weight_name(&self, idx: usize) -> String {
        format!("{}.{}.w", self.name, idx)
    }

    pub fn bias_name(&self, idx: usize) -> String {
        format!("{}.{}.b", self.name, idx)
    }

    fn err(&self, layer: usize, msg: String) -> Error {
        Error::Layer {
            net: self.name.clone(),
            layer,
            msg,
        }
    }

    /// Shape produced for an input of shape `input` (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = self.layer_shape(i, layer, &shape)?;
        }
        Ok(shape)
    }

    fn layer_shape(&self, i: usize, layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>> {
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                if shape.last() != Some(&inputs) {
                    return Err(self.err(
                        i,
                        format!("dense expects last axis {inputs}, got shape {shape:?}"),
                    ));
                }
                let mut s = shape.to_vec();
                *s.last_mut().unwrap() = outputs;
                Ok(s)
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if shape.len() != 3 || shape[2] != in_channels {
                    return Err(self.err(
                        i,
                        format!("conv1d expects [batch, length, {in_channels}], got {shape:?}"),
                    ));
                }
                if kernel == 0 || stride == 0 {
                    return Err(self.err(i, "conv1d kernel and stride must be positive".into()));
                }
                let (out, _) = same_padding(shape[1], kernel, stride);
                Ok(vec![shape[0], out, out_channels])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(shape.to_vec()),
            LayerSpec::Flatten => {
                if shape.len() < 2 {
                    return Err(self.err(i, format!("flatten needs a batch axis, got {shape:?}")));
                }
                Ok(vec![shape[0], shape[1..].iter().product()])
            }
        }
    }

    /// Registers this stack's weights with uniform `±1/sqrt(fan_in)` values.
    pub fn init<F: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ParameterSet<F>,
        rng: &mut R,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let (fan_in, w_shape, outputs) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (inputs, [inputs, outputs], outputs),
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    kernel * in_channels,
                    [kernel * in_channels, out_channels],
                    out_channels,
                ),
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<F> {
                (0..n)
                    .map(|_| F::from_f64(rng.random_range(-bound..bound)))
                    .collect()
            };
            let w = draw(w_shape[0] * w_shape[1]);
            let b = draw(outputs);
            params.insert(&self.weight_name(i), Tensor::new(w_shape.to_vec(), w)?)?;
            params.insert(&self.bias_name(i), Tensor::new(vec![outputs], b)?)?;
        }
        Ok(())
    }

    /// Registers this stack's weights as zeros.
    pub fn init_zeros<F: Real>(&self, params: &mut ParameterSet<F>) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (kernel * in_channels, out_channels),
                _ => continue,
            };
            params.insert(&self.weight_name(i), Tensor::zeros(&[rows, cols]))?;
            params.insert(&self.bias_name(i), Tensor::zeros(&[cols]))?;
        }
        Ok(())
    }

    fn check_params<F: Real>(&self, params: &ParameterSet<F>) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer.has_params() {
                continue;
            }
            let (rows, cols) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (kernel * in_channels, out_channels),
                _ => unreachable!(),
            };
            let w = params
                .get(&self.weight_name(i))
                .map_err(|e| self.err(i, e.to_string()))?;
            let b = params
                .get(&self.bias_name(i))
                .map_err(|e| self.err(i, e.to_string()))?;
            if w.shape() != [rows, cols] || b.shape() != [cols] {
                return Err(self.err(
                    i,
                    format!(
                        "weights {:?}/{:?} do not match layer {:?}",
                        w.shape(),
                        b.shape(),
                        layer
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Forward pass that also records a tape for [`Sequential::backward`].
    pub fn forward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        x: &Tensor<F>,
    ) -> Result<(Tensor<F>, Tape<F>)> {
        self.run(params, x, true)
            .map(|(y, t)| (y, t.expect("tape requested")))
    }

    /// Forward pass without a tape.
    pub fn infer<F: Real>(&self, params: &ParameterSet<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.run(params, x, false).map(|(y, _)| y)
    }

    fn run<F: Real>(
        &self,
        params: &ParameterSet<F>,
        x: &Tensor<F>,
        record: bool,
    ) -> Result<(Tensor<F>, Option<Tape<F>>)> {
        self.check_params(params)?;
        let mut saved = Vec::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape = self.layer_shape(i, layer, cur.shape())?;
            match *layer {
                LayerSpec::Dense { .. } => {
                    let w = params.get(&self.weight_name(i))?;
                    let b = params.get(&self.bias_name(i))?;
                    let y = dense_forward(&cur, w, b, &out_shape);
                    if record {
                        saved.push(Saved::Input(cur));
                    }
                    cur = y;
                }
                LayerSpec::Conv1d { kernel, stride, .. } => {
                    let w = params.get(&self.weight_name(i))?;
                    let b = params.get(&self.bias_name(i))?;
                    let cols = im2col(&cur, kernel, stride);
                    let y = conv_forward(&cols, w, b, &out_shape);
                    if record {
                        saved.push(Saved::Columns {
                            cols,
                            in_shape: cur.shape().to_vec(),
                        });
                    }
                    cur = y;
                }
                LayerSpec::Relu => {
                    for v in cur.data_mut() {
                        if !(*v > F::zero()) {
                            *v = F::zero();
                        }
                    }
                    if record {
                        saved.push(Saved::Output(cur.clone()));
                    }
                }
                LayerSpec::Tanh => {
                    for v in cur.data_mut() {
                        *v = v.tanh();
                    }
                    if record {
                        saved.push(Saved::Output(cur.clone()));
                    }
                }
                LayerSpec::Flatten => {
                    if record {
                        saved.push(Saved::Shape(cur.shape().to_vec()));
                    }
                    cur = cur.reshape(&out_shape)?;
                }
            }
        }
        let tape = record.then(|| Tape {
            net: self.name.clone(),
            generation: params.generation(),
            saved,
        });
        Ok((cur, tape))
    }

    /// Back-propagates `upstream` (gradient w.r.t. the output) through the
    /// recorded tape. Parameter gradients are accumulated into `grads` when
    /// given. Returns the gradient w.r.t. the input.
    pub fn backward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        tape: Tape<F>,
        upstream: &Tensor<F>,
        mut grads: Option<&mut Grads<F>>,
    ) -> Result<Tensor<F>> {
        if tape.net != self.name {
            return Err(Error::Usage(format!(
                "tape recorded by `{}` replayed on `{}`",
                tape.net, self.name
            )));
        }
        if tape.generation != params.generation() {
            return Err(Error::Usage(format!(
                "stale tape for `{}`: parameters changed since forward",
                self.name
            )));
        }
        if tape.saved.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "tape length mismatch for `{}`",
                self.name
            )));
        }
        let mut g = upstream.clone();
        for (i, (layer, saved)) in self
            .layers
            .iter()
            .zip(tape.saved.into_iter())
            .enumerate()
            .rev()
        {
            g = match (*layer, saved) {
                (LayerSpec::Dense { .. }, Saved::Input(x)) => {
                    let w = params.get(&self.weight_name(i))?;
                    if let Some(gr) = grads.as_deref_mut() {
                        let (dw, db) = dense_param_grads(x.data(), g.data(), w.shape());
                        accumulate(gr, &self.weight_name(i), dw);
                        accumulate(gr, &self.bias_name(i), db);
                    }
                    dense_input_grad(&g, w, x.shape())
                }
                (LayerSpec::Conv1d { kernel, stride, .. }, Saved::Columns { cols, in_shape }) => {
                    let w = params.get(&self.weight_name(i))?;
                    if let Some(gr) = grads.as_deref_mut() {
                        let (dw, db) = dense_param_grads(&cols, g.data(), w.shape());
                        accumulate(gr, &self.weight_name(i), dw);
                        accumulate(gr, &self.bias_name(i), db);
                    }
                    conv_input_grad(&g, w, &in_shape, kernel, stride)
                }
                (LayerSpec::Relu, Saved::Output(y)) => {
                    for (gi, &yi) in g.data_mut().iter_mut().zip(y.data()) {
                        if !(yi > F::zero()) {
                            *gi = F::zero();
                        }
                    }
                    g
                }
                (LayerSpec::Tanh, Saved::Output(y)) => {
                    for (gi, &yi) in g.data_mut().iter_mut().zip(y.data()) {
                        *gi *= F::one() - yi * yi;
                    }
                    g
                }
                (LayerSpec::Flatten, Saved::Shape(s)) => g.reshape(&s)?,
                _ => return Err(Error::Usage(format!("corrupt tape at layer {i}"))),
            };
        }
        Ok(g)
    }
}

fn dense_forward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    out_shape: &[usize],
) -> Tensor<F> {
    let (inputs, outputs) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    let mut y = Tensor::zeros(out_shape);
    for r in 0..rows {
        y.data_mut()[r * outputs..(r + 1) * outputs].copy_from_slice(b.data());
    }
    F::gemm(
        rows,
        inputs,
        outputs,
        F::one(),
        x.data(),
        (inputs as isize, 1),
        w.data(),
        (outputs as isize, 1),
        F::one(),
        y.data_mut(),
        (outputs as isize, 1),
    );
    y
}

/// `dW = X^T dY`, `db = sum_rows dY` for a `[rows, in] x [in, out]` product.
fn dense_param_grads<F: Real>(x: &[F], dy: &[F], w_shape: &[usize]) -> (Tensor<F>, Tensor<F>) {
    let (inputs, outputs) = (w_shape[0], w_shape[1]);
    let rows = dy.len() / outputs;
    let mut dw = Tensor::zeros(&[inputs, outputs]);
    F::gemm(
        inputs,
        rows,
        outputs,
        F::one(),
        x,
        (1, inputs as isize),
        dy,
        (outputs as isize, 1),
        F::zero(),
        dw.data_mut(),
        (outputs as isize, 1),
    );
    let mut db = Tensor::zeros(&[outputs]);
    for r in 0..rows {
        for (acc, &v) in db
            .data_mut()
            .iter_mut()
            .zip(&dy[r * outputs..(r + 1) * outputs])
        {
            *acc += v;
        }
    }
    (dw, db)
}

fn dense_input_grad<F: Real>(dy: &Tensor<F>, w: &Tensor<F>, x_shape: &[usize]) -> Tensor<F> {
    let (inputs, outputs) = (w.shape()[0], w.shape()[1]);
    let rows = dy.len() / outputs;
    let mut dx = Tensor::zeros(x_shape);
    F::gemm(
        rows,
        outputs,
        inputs,
        F::one(),
        dy.data(),
        (outputs as isize, 1),
        w.data(),
        (1, outputs as isize),
        F::zero(),
        dx.data_mut(),
        (inputs as isize, 1),
    );
    dx
}

/// Unfolds `[batch, len, ch]` into `[batch * out_len, kernel * ch]` patches.
fn im2col<F: Real>(x: &Tensor<F>, kernel: usize, stride: usize) -> Vec<F> {
    let (batch, len, ch) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_len, pad) = same_padding(len, kernel, stride);
    let width = kernel * ch;
    let mut cols = vec![F::zero(); batch * out_len * width];
    let xd = x.data();
    for b in 0..batch {
        for t in 0..out_len {
            let row = &mut cols[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let src = (b * len + pos as usize) * ch;
                row[j * ch..(j + 1) * ch].copy_from_slice(&xd[src..src + ch]);
            }
        }
    }
    cols
}

fn conv_forward<F: Real>(
    cols: &[F],
    w: &Tensor<F>,
    b: &Tensor<F>,
    out_shape: &[usize],
) -> Tensor<F> {
    let (width, outputs) = (w.shape()[0], w.shape()[1]);
    let rows = cols.len() / width;
    let mut y = Tensor::zeros(out_shape);
    for r in 0..rows {
        y.data_mut()[r * outputs..(r + 1) * outputs].copy_from_slice(b.data());
    }
    F::gemm(
        rows,
        width,
        outputs,
        F::one(),
        cols,
        (width as isize, 1),
        w.data(),
        (outputs as isize, 1),
        F::one(),
        y.data_mut(),
        (outputs as isize, 1),
    );
    y
}

fn conv_input_grad<F: Real>(
    dy: &Tensor<F>,
    w: &Tensor<F>,
    in_shape: &[usize],
    kernel: usize,
    stride: usize,
) -> Tensor<F> {
    let (width, outputs) = (w.shape()[0], w.shape()[1]);
    let rows = dy.len() / outputs;
    let mut dcols = vec![F::zero(); rows * width];
    F::gemm(
        rows,
        outputs,
        width,
        F::one(),
        dy.data(),
        (outputs as isize, 1),
        w.data(),
        (1, outputs as isize),
        F::zero(),
        &mut dcols,
        (width as isize, 1),
    );
    let (batch, len, ch) = (in_shape[0], in_shape[1], in_shape[2]);
    let (out_len, pad) = same_padding(len, kernel, stride);
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for b in 0..batch {
        for t in 0..out_len {
            let row = &dcols[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let dst = (b * len + pos as usize) * ch;
                for (d, &s) in dxd[dst..dst + ch]
                    .iter_mut()
                    .zip(&row[j * ch..(j + 1) * ch])
                {
                    *d += s;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn identity_dense() -> (Sequential, ParameterSet<f64>) {
        let net = Sequential::new("id", vec![LayerSpec::dense(2, 2)]);
        let mut p = ParameterSet::new();
        p.insert(
            "id.0.w",
            Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        p.insert("id.0.b", Tensor::zeros(&[2])).unwrap();
        (net, p)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let (net, p) = identity_dense();
        let x = Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        let (y, _) = net.forward(&p, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let net = Sequential::new("r", vec![LayerSpec::Relu]);
        let p = ParameterSet::<f64>::new();
        let x = Tensor::from_f64(&[1, 3], &[-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(net.infer(&p, &x).unwrap().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        let net = Sequential::new("t", vec![LayerSpec::Tanh]);
        let p = ParameterSet::<f64>::new();
        let x = Tensor::from_f64(&[1, 1], &[0.0]).unwrap();
        let (_, tape) = net.forward(&p, &x).unwrap();
        let dx = net
            .backward(&p, tape, &Tensor::full(&[1, 1], 1.0), None)
            .unwrap();
        assert_eq!(dx.data(), &[1.0]);
    }

    #[test]
    fn scalar_linear_gradients() {
        let net = Sequential::new("lin", vec![LayerSpec::dense(1, 1)]);
        let mut p = ParameterSet::new();
        p.insert("lin.0.w", Tensor::from_f64(&[1, 1], &[2.0]).unwrap())
            .unwrap();
        p.insert("lin.0.b", Tensor::zeros(&[1])).unwrap();
        let x = Tensor::from_f64(&[1, 1], &[3.0]).unwrap();
        let (_, tape) = net.forward(&p, &x).unwrap();
        let mut g = Grads::new();
        let dx = net
            .backward(&p, tape, &Tensor::full(&[1, 1], 1.0), Some(&mut g))
            .unwrap();
        assert_eq!(g["lin.0.w"].data(), &[3.0]);
        assert_eq!(g["lin.0.b"].data(), &[1.0]);
        assert_eq!(dx.data(), &[2.0]);
    }

    #[test]
    fn conv_matches_table_geometry() {
        let net = Sequential::new(
            "h",
            vec![
                LayerSpec::conv1d(64, 32, 8, 4),
                LayerSpec::Relu,
                LayerSpec::conv1d(32, 32, 5, 1),
                LayerSpec::conv1d(32, 32, 5, 1),
                LayerSpec::Flatten,
            ],
        );
        assert_eq!(net.output_shape(&[1, 50, 64]).unwrap(), vec![1, 416]);
        let first = Sequential::new("h", vec![LayerSpec::conv1d(64, 32, 8, 4)]);
        assert_eq!(first.output_shape(&[1, 50, 64]).unwrap(), vec![1, 13, 32]);
        assert_eq!(same_padding(50, 8, 4), (13, 3));
        assert_eq!(same_padding(13, 5, 1), (13, 2));
    }

    #[test]
    fn same_padding_length_is_ceil() {
        for len in 1..=128 {
            for stride in [1usize, 2, 4] {
                for kernel in [1usize, 3, 5, 8] {
                    let (out, pad) = same_padding(len, kernel, stride);
                    assert_eq!(out, len.div_ceil(stride));
                    assert!(pad < kernel.max(1));
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_reports_layer_index() {
        let net = Sequential::mlp("m", &[3, 4, 2], None);
        let mut p = ParameterSet::<f64>::new();
        net.init(&mut p, &mut stream_rng(0, 0)).unwrap();
        let x = Tensor::zeros(&[1, 5]);
        match net.forward(&p, &x) {
            Err(Error::Layer { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected layer error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let net = Sequential::mlp("m", &[2, 2], None);
        let mut p = ParameterSet::<f64>::new();
        net.init(&mut p, &mut stream_rng(0, 0)).unwrap();
        let x = Tensor::zeros(&[1, 2]);
        let (_, tape) = net.forward(&p, &x).unwrap();
        p.get_mut("m.0.b").unwrap().data_mut()[0] = 1.0;
        let err = net.backward(&p, tape, &Tensor::zeros(&[1, 2]), None);
        assert!(matches!(err, Err(Error::Usage(_))));

        let other = Sequential::mlp("n", &[2, 2], None);
        let (_, tape) = net.forward(&p, &x).unwrap();
        assert!(matches!(
            other.backward(&p, tape, &Tensor::zeros(&[1, 2]), None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = Sequential::mlp("m", &[6, 16, 16, 3], Some(LayerSpec::Tanh));
        let mut p = ParameterSet::<f64>::new();
        net.init(&mut p, &mut stream_rng(3, 0)).unwrap();
        let mut rng = stream_rng(4, 0);
        let x = Tensor::new(
            vec![5, 6],
            (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let a = net.infer(&p, &x).unwrap();
        let b = net.forward(&p, &x).unwrap().0;
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
