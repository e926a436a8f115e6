//! Fixed-shape multilayer perceptron: `input -> h1 -> h2 -> output` with ReLU
//! hidden activations and a linear head, plus hand-written backpropagation.
//!
//! Parameters live in one contiguous vector, ordered `W1, b1, W2, b2, W3, b3`
//! with each `W` stored row-major as `fan_out x fan_in`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"NAFAQNET";
const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_HIDDEN: [usize; 2] = [200, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Layer {
    fn weights<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.fan_in * self.fan_out]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.fan_out]
    }
}

fn layout(dims: [usize; 4]) -> ([Layer; 3], usize) {
    let mut offset = 0;
    let mut make = |fan_in: usize, fan_out: usize| {
        let w = offset;
        let b = w + fan_in * fan_out;
        offset = b + fan_out;
        Layer { fan_in, fan_out, w, b }
    };
    let layers = [make(dims[0], dims[1]), make(dims[1], dims[2]), make(dims[2], dims[3])];
    (layers, offset)
}

/// The Q network; the target network has the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    dims: [usize; 4],
    layers: [Layer; 3],
    params: Vec<T>,
}

/// Gradient with the same layout as [`QNetwork`]'s parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    dims: [usize; 4],
    values: Vec<T>,
}

impl<T: Scalar> GradientBuffer<T> {
    pub fn zeros_like(net: &QNetwork<T>) -> Self {
        Self { dims: net.dims, values: vec![T::zero(); net.params.len()] }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn scale(&mut self, factor: T) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &GradientBuffer<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("gradient buffers differ in shape"));
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }
}

/// Intermediate activations of one batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    batch: usize,
    z1: Vec<T>,
    a1: Vec<T>,
    z2: Vec<T>,
    a2: Vec<T>,
    out: Vec<T>,
    d2: Vec<T>,
    d1: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self {
            batch: 0,
            z1: Vec::new(),
            a1: Vec::new(),
            z2: Vec::new(),
            a2: Vec::new(),
            out: Vec::new(),
            d2: Vec::new(),
            d1: Vec::new(),
        }
    }

    /// Outputs of the last forward pass, `batch x output` row-major.
    pub fn output(&self) -> &[T] {
        &self.out[..self.batch * self.out.len().checked_div(self.batch).unwrap_or(0)]
    }

    fn resize(&mut self, batch: usize, dims: [usize; 4]) {
        let zero = T::zero();
        self.batch = batch;
        self.z1.resize(batch * dims[1], zero);
        self.a1.resize(batch * dims[1], zero);
        self.z2.resize(batch * dims[2], zero);
        self.a2.resize(batch * dims[2], zero);
        self.out.resize(batch * dims[3], zero);
        self.d2.resize(batch * dims[2], zero);
        self.d1.resize(batch * dims[1], zero);
        self.z1.truncate(batch * dims[1]);
        self.a1.truncate(batch * dims[1]);
        self.z2.truncate(batch * dims[2]);
        self.a2.truncate(batch * dims[2]);
        self.out.truncate(batch * dims[3]);
        self.d2.truncate(batch * dims[2]);
        self.d1.truncate(batch * dims[1]);
    }
}

fn affine<T: Scalar>(layer: &Layer, params: &[T], x: &[T], batch: usize, z: &mut [T]) {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    let bias = layer.bias(params);
    if batch == 1 {
        // single rows dominate greedy application; packing W for gemm costs more than the product
        for ((zo, w), &b) in z.iter_mut().zip(layer.weights(params).chunks_exact(fi)).zip(bias) {
            *zo = b + dot(w, x);
        }
        return;
    }
    for row in z.chunks_exact_mut(fo) {
        row.copy_from_slice(bias);
    }
    // z (batch x fo) += x (batch x fi) * W^T (fi x fo)
    T::gemm(batch, fi, fo, T::one(), x, (fi, 1), layer.weights(params), (1, fi), T::one(), z, (fo, 1));
}

/// Eight independent partial sums so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).fold(T::zero(), |s, v| s + v);
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn relu<T: Scalar>(z: &[T], a: &mut [T]) {
    for (a, &z) in a.iter_mut().zip(z) {
        *a = if z > T::zero() { z } else { T::zero() };
    }
}

/// Accumulates the parameter gradient of one layer and, when `dx` is given,
/// writes the gradient with respect to the layer input.
fn affine_backward<T: Scalar>(
    layer: &Layer,
    params: &[T],
    x: &[T],
    dz: &[T],
    batch: usize,
    grads: &mut [T],
    dx: Option<&mut [T]>,
) {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    // dW (fo x fi) += dz^T (fo x batch) * x (batch x fi)
    T::gemm(fo, batch, fi, T::one(), dz, (1, fo), x, (fi, 1), T::one(), &mut grads[layer.w..layer.b], (fi, 1));
    let db = &mut grads[layer.b..layer.b + fo];
    for row in dz.chunks_exact(fo) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        // dx (batch x fi) = dz (batch x fo) * W (fo x fi)
        T::gemm(batch, fo, fi, T::one(), dz, (fo, 1), layer.weights(params), (fi, 1), T::zero(), dx, (fi, 1));
    }
}

impl<T: Scalar> QNetwork<T> {
    /// Network with every parameter zero.
    pub fn zeros(input: usize, hidden: [usize; 2], output: usize) -> Result<Self> {
        if input == 0 || hidden[0] == 0 || hidden[1] == 0 || output == 0 {
            return Err(Error::shape("every layer needs at least one unit"));
        }
        let dims = [input, hidden[0], hidden[1], output];
        let (layers, len) = layout(dims);
        Ok(Self { dims, layers, params: vec![T::zero(); len] })
    }

    /// Uniform Glorot initialisation of the weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: [usize; 2], output: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input, hidden, output)?;
        for layer in net.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut net.params[layer.w..layer.b] {
                *w = T::lit(rng.random_range(-limit..=limit));
            }
        }
        Ok(net)
    }

    pub fn input_len(&self) -> usize {
        self.dims[0]
    }

    pub fn output_len(&self) -> usize {
        self.dims[3]
    }

    pub fn hidden(&self) -> [usize; 2] {
        [self.dims[1], self.dims[2]]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// `(weights, bias)` of layer `index` (0, 1 or 2).
    pub fn layer(&self, index: usize) -> (&[T], &[T]) {
        let l = &self.layers[index];
        (l.weights(&self.params), l.bias(&self.params))
    }

    pub fn layer_mut(&mut self, index: usize) -> (&mut [T], &mut [T]) {
        let l = self.layers[index];
        let (w, b) = self.params[l.w..l.b + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
        (w, b)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if len != batch * self.dims[0] {
            return Err(Error::shape(format!(
                "expected {} features per row ({batch} rows), got {len} values",
                self.dims[0]
            )));
        }
        Ok(())
    }

    /// Q values for one feature vector.
    pub fn forward(&self, features: &[T]) -> Result<Vec<T>> {
        let mut ws = Workspace::new();
        self.forward_cached(&mut ws, features, 1)?;
        Ok(ws.out)
    }

    /// Q values for `batch` feature rows stored row-major.
    pub fn forward_batch(&self, features: &[T], batch: usize) -> Result<Vec<T>> {
        let mut ws = Workspace::new();
        self.forward_cached(&mut ws, features, batch)?;
        Ok(ws.out)
    }

    /// Batched forward pass keeping activations for [`Self::backward_cached`].
    pub fn forward_cached<'w>(&self, ws: &'w mut Workspace<T>, features: &[T], batch: usize) -> Result<&'w [T]> {
        self.check_input(features.len(), batch)?;
        ws.resize(batch, self.dims);
        let [l1, l2, l3] = &self.layers;
        affine(l1, &self.params, features, batch, &mut ws.z1);
        relu(&ws.z1, &mut ws.a1);
        affine(l2, &self.params, &ws.a1, batch, &mut ws.z2);
        relu(&ws.z2, &mut ws.a2);
        affine(l3, &self.params, &ws.a2, batch, &mut ws.out);
        Ok(&ws.out)
    }

    /// Accumulates into `grads` the parameter gradient for an upstream
    /// gradient `d_out` (`batch x output`) on the outputs of the last
    /// [`Self::forward_cached`] call on `features`.
    pub fn backward_cached(
        &self,
        ws: &mut Workspace<T>,
        features: &[T],
        d_out: &[T],
        grads: &mut GradientBuffer<T>,
    ) -> Result<()> {
        let batch = ws.batch;
        self.check_input(features.len(), batch)?;
        if d_out.len() != batch * self.dims[3] || grads.dims != self.dims {
            return Err(Error::shape("output gradient or buffer does not match network"));
        }
        let [l1, l2, l3] = &self.layers;
        let g = &mut grads.values;
        affine_backward(l3, &self.params, &ws.a2, d_out, batch, g, Some(&mut ws.d2));
        mask_relu(&mut ws.d2, &ws.z2);
        affine_backward(l2, &self.params, &ws.a1, &ws.d2, batch, g, Some(&mut ws.d1));
        mask_relu(&mut ws.d1, &ws.z1);
        affine_backward(l1, &self.params, features, &ws.d1, batch, g, None);
        Ok(())
    }

    /// Gradient of `½ (Q(s, a) - target)²` with respect to every parameter.
    pub fn backward(&self, features: &[T], action_index: usize, target: T) -> Result<GradientBuffer<T>> {
        if action_index >= self.dims[3] {
            return Err(Error::shape(format!("action {action_index} outside {} outputs", self.dims[3])));
        }
        let mut ws = Workspace::new();
        let q = self.forward_cached(&mut ws, features, 1)?[action_index];
        let mut d_out = vec![T::zero(); self.dims[3]];
        d_out[action_index] = q - target;
        let mut grads = GradientBuffer::zeros_like(self);
        self.backward_cached(&mut ws, features, &d_out, &mut grads)?;
        Ok(grads)
    }

    /// Plain gradient descent, `θ ← θ - lr · g`.
    pub fn sgd_step(&mut self, grads: &GradientBuffer<T>, lr: T) -> Result<()> {
        if grads.dims != self.dims {
            return Err(Error::shape("gradient shape does not match network"));
        }
        for (p, &g) in self.params.iter_mut().zip(&grads.values) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Overwrites `dst` with a bit-exact copy of these parameters.
    pub fn copy_into(&self, dst: &mut QNetwork<T>) -> Result<()> {
        if dst.dims != self.dims {
            return Err(Error::shape(format!("cannot copy {:?} into {:?}", self.dims, dst.dims)));
        }
        dst.params.copy_from_slice(&self.params);
        Ok(())
    }

    /// Writes the checkpoint: header with layer sizes, then little-endian f64 parameters.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            buf.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse { line: 0, message: "not a Q-network checkpoint".into() });
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse { line: 0, message: format!("unsupported checkpoint version {version}") });
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut net = Self::zeros(dims[0], [dims[1], dims[2]], dims[3])?;
        if count != net.params.len() {
            return Err(Error::shape(format!(
                "checkpoint holds {count} parameters, layout {dims:?} needs {}",
                net.params.len()
            )));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        for (p, chunk) in net.params.iter_mut().zip(bytes.chunks_exact(8)) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            *p = T::from_f64(v).ok_or_else(|| Error::param("parameter not representable"))?;
        }
        Ok(net)
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }

    /// Per-layer Frobenius norms, for debugging.
    pub fn describe(&self) -> String {
        let mut out = format!("QNetwork {:?} ({} parameters)\n", self.dims, self.params.len());
        for (i, l) in self.layers.iter().enumerate() {
            let norm = |s: &[T]| s.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            out.push_str(&format!(
                "  layer {i}: {}x{}  |W|={:.6}  |b|={:.6}\n",
                l.fan_out,
                l.fan_in,
                norm(l.weights(&self.params)),
                norm(l.bias(&self.params))
            ));
        }
        out
    }
}

fn mask_relu<T: Scalar>(delta: &mut [T], z: &[T]) {
    for (d, &z) in delta.iter_mut().zip(z) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
