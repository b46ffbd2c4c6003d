//! Layers with explicit forward/backward passes over row-major batches
//! (one sample per row). Image tensors are flattened channel-major.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

/// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (in, out)
    pub weight: Matrix,
    /// (1, out)
    pub bias: Matrix,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Dense { weight: uniform_init(input, output, input, rng), bias: uniform_init(1, output, input, rng) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense { weight: Matrix::zeros((input, output)), bias: Matrix::zeros((1, output)) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns dx and pushes (dW, db).
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grads: &mut Vec<Matrix>) -> Matrix {
        grads.push(x.t().dot(dy));
        grads.push(dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        dy.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stride-1 2-D convolution, lowered to a GEMM over unfolded patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub input: ImageDims,
    pub kernel: usize,
    pub padding: usize,
    /// (out_channels, in_channels * k * k)
    pub weight: Matrix,
    /// (1, out_channels)
    pub bias: Matrix,
}

impl Conv2d {
    pub fn new(input: ImageDims, out_channels: usize, kernel: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input.channels * kernel * kernel;
        Conv2d {
            input,
            kernel,
            padding,
            weight: uniform_init(out_channels, fan_in, fan_in, rng),
            bias: uniform_init(1, out_channels, fan_in, rng),
        }
    }

    pub fn output(&self) -> ImageDims {
        ImageDims {
            channels: self.weight.nrows(),
            height: self.input.height + 2 * self.padding + 1 - self.kernel,
            width: self.input.width + 2 * self.padding + 1 - self.kernel,
        }
    }

    /// Unfolds a batch into (batch * out_h * out_w, in_c * k * k).
    fn im2col(&self, x: &Matrix) -> Matrix {
        let ImageDims { channels, height, width } = self.input;
        let out = self.output();
        let k = self.kernel;
        let p = self.padding as isize;
        let positions = out.height * out.width;
        let mut cols = Matrix::zeros((x.nrows() * positions, channels * k * k));
        for (b, sample) in x.outer_iter().enumerate() {
            let sample = sample.as_slice().expect("contiguous rows");
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let mut row = cols.row_mut(b * positions + oy * out.width + ox);
                    let row = row.as_slice_mut().expect("contiguous rows");
                    let mut j = 0;
                    for c in 0..channels {
                        let plane = &sample[c * height * width..(c + 1) * height * width];
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - p;
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - p;
                                if iy >= 0 && ix >= 0 && (iy as usize) < height && (ix as usize) < width {
                                    row[j] = plane[iy as usize * width + ix as usize];
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Matrix, batch: usize) -> Matrix {
        let ImageDims { channels, height, width } = self.input;
        let out = self.output();
        let k = self.kernel;
        let p = self.padding as isize;
        let positions = out.height * out.width;
        let mut dx = Matrix::zeros((batch, self.input.len()));
        for b in 0..batch {
            let mut drow = dx.row_mut(b);
            let dsample = drow.as_slice_mut().expect("contiguous rows");
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let row = dcols.row(b * positions + oy * out.width + ox);
                    let mut j = 0;
                    for c in 0..channels {
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - p;
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - p;
                                if iy >= 0 && ix >= 0 && (iy as usize) < height && (ix as usize) < width {
                                    dsample[c * height * width + iy as usize * width + ix as usize] += row[j];
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Rearranges (batch * positions, out_c) into (batch, out_c * positions).
    fn rows_to_images(&self, rows: &Matrix, batch: usize) -> Matrix {
        let out = self.output();
        let positions = out.height * out.width;
        let mut y = Matrix::zeros((batch, out.len()));
        for b in 0..batch {
            let block = rows.slice(s![b * positions..(b + 1) * positions, ..]);
            let mut dst = y.row_mut(b);
            let dst = dst.as_slice_mut().expect("contiguous rows");
            for (pos, r) in block.outer_iter().enumerate() {
                for (c, v) in r.iter().enumerate() {
                    dst[c * positions + pos] = *v;
                }
            }
        }
        y
    }

    fn images_to_rows(&self, y: &Matrix) -> Matrix {
        let out = self.output();
        let positions = out.height * out.width;
        let mut rows = Matrix::zeros((y.nrows() * positions, out.channels));
        for (b, img) in y.outer_iter().enumerate() {
            for c in 0..out.channels {
                for pos in 0..positions {
                    rows[[b * positions + pos, c]] = img[c * positions + pos];
                }
            }
        }
        rows
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let cols = self.im2col(x);
        let rows = cols.dot(&self.weight.t()) + &self.bias;
        (self.rows_to_images(&rows, x.nrows()), cols)
    }

    pub fn backward(&self, cols: &Matrix, dy: &Matrix, grads: &mut Vec<Matrix>) -> Matrix {
        let drows = self.images_to_rows(dy);
        grads.push(drows.t().dot(cols));
        grads.push(drows.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dcols = drows.dot(&self.weight);
        self.col2im(&dcols, dy.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Conv2d(Conv2d),
    /// 2x2 max pooling, stride 2 (odd trailing rows/columns dropped).
    MaxPool2(ImageDims),
    /// Nearest-neighbour 2x upsampling.
    Upsample2(ImageDims),
    /// y = x + f(x)
    Residual(Sequential),
}

#[derive(Debug, Clone)]
pub enum Cache {
    Input(Matrix),
    Mask(Array2<bool>),
    Cols(Matrix),
    Argmax(Vec<usize>),
    None,
    Nested(Vec<Cache>),
}

impl Layer {
    pub fn forward(&self, x: &Matrix) -> (Matrix, Cache) {
        match self {
            Layer::Dense(d) => (d.forward(x), Cache::Input(x.clone())),
            Layer::Relu => (x.mapv(|v| v.max(0.0)), Cache::Mask(x.mapv(|v| v > 0.0))),
            Layer::Conv2d(c) => {
                let (y, cols) = c.forward(x);
                (y, Cache::Cols(cols))
            }
            Layer::MaxPool2(dims) => {
                let (y, idx) = maxpool_forward(*dims, x);
                (y, Cache::Argmax(idx))
            }
            Layer::Upsample2(dims) => (upsample_forward(*dims, x), Cache::None),
            Layer::Residual(inner) => {
                let (fx, caches) = inner.forward(x);
                (fx + x, Cache::Nested(caches))
            }
        }
    }

    /// Inference-only forward that skips building caches.
    pub fn infer(&self, x: &Matrix) -> Matrix {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::Conv2d(c) => c.forward(x).0,
            Layer::Residual(inner) => inner.infer(x) + x,
            _ => self.forward(x).0,
        }
    }

    pub fn backward(&self, cache: &Cache, dy: &Matrix, grads: &mut Vec<Matrix>) -> Matrix {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(x)) => d.backward(x, dy, grads),
            (Layer::Relu, Cache::Mask(mask)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(mask, |g, &m| {
                    if !m {
                        *g = 0.0
                    }
                });
                dx
            }
            (Layer::Conv2d(c), Cache::Cols(cols)) => c.backward(cols, dy, grads),
            (Layer::MaxPool2(dims), Cache::Argmax(idx)) => maxpool_backward(*dims, idx, dy),
            (Layer::Upsample2(dims), Cache::None) => upsample_backward(*dims, dy),
            (Layer::Residual(inner), Cache::Nested(caches)) => {
                let (dx, inner_grads) = inner.backward(caches, dy);
                grads.extend(inner_grads);
                dx + dy
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Layer::Dense(d) => d.output_dim(),
            Layer::Relu | Layer::Residual(_) => input_dim,
            Layer::Conv2d(c) => c.output().len(),
            Layer::MaxPool2(d) => d.channels * (d.height / 2) * (d.width / 2),
            Layer::Upsample2(d) => d.len() * 4,
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Matrix)) {
        match self {
            Layer::Dense(d) => {
                f(&d.weight);
                f(&d.bias);
            }
            Layer::Conv2d(c) => {
                f(&c.weight);
                f(&c.bias);
            }
            Layer::Residual(inner) => inner.visit_params(f),
            _ => {}
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        match self {
            Layer::Dense(d) => {
                f(&mut d.weight);
                f(&mut d.bias);
            }
            Layer::Conv2d(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::Residual(inner) => inner.visit_params_mut(f),
            _ => {}
        }
    }
}

fn maxpool_forward(dims: ImageDims, x: &Matrix) -> (Matrix, Vec<usize>) {
    let (oh, ow) = (dims.height / 2, dims.width / 2);
    let out_len = dims.channels * oh * ow;
    let mut y = Matrix::zeros((x.nrows(), out_len));
    let mut argmax = Vec::with_capacity(x.nrows() * out_len);
    for (b, sample) in x.outer_iter().enumerate() {
        for c in 0..dims.channels {
            let base = c * dims.height * dims.width;
            for py in 0..oh {
                for px in 0..ow {
                    let mut best = base + 2 * py * dims.width + 2 * px;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * py + dy) * dims.width + 2 * px + dx;
                        if sample[i] > sample[best] {
                            best = i;
                        }
                    }
                    y[[b, c * oh * ow + py * ow + px]] = sample[best];
                    argmax.push(best);
                }
            }
        }
    }
    (y, argmax)
}

fn maxpool_backward(dims: ImageDims, argmax: &[usize], dy: &Matrix) -> Matrix {
    let out_len = dy.ncols();
    let mut dx = Matrix::zeros((dy.nrows(), dims.len()));
    for (b, g) in dy.outer_iter().enumerate() {
        for (j, v) in g.iter().enumerate() {
            dx[[b, argmax[b * out_len + j]]] += v;
        }
    }
    dx
}

fn upsample_forward(dims: ImageDims, x: &Matrix) -> Matrix {
    let (oh, ow) = (dims.height * 2, dims.width * 2);
    let mut y = Matrix::zeros((x.nrows(), dims.channels * oh * ow));
    for (b, sample) in x.outer_iter().enumerate() {
        for c in 0..dims.channels {
            for yy in 0..oh {
                for xx in 0..ow {
                    y[[b, c * oh * ow + yy * ow + xx]] = sample[c * dims.height * dims.width + (yy / 2) * dims.width + xx / 2];
                }
            }
        }
    }
    y
}

fn upsample_backward(dims: ImageDims, dy: &Matrix) -> Matrix {
    let (oh, ow) = (dims.height * 2, dims.width * 2);
    let mut dx = Matrix::zeros((dy.nrows(), dims.len()));
    for (b, g) in dy.outer_iter().enumerate() {
        for c in 0..dims.channels {
            for yy in 0..oh {
                for xx in 0..ow {
                    dx[[b, c * dims.height * dims.width + (yy / 2) * dims.width + xx / 2]] += g[c * oh * ow + yy * ow + xx];
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h);
            caches.push(cache);
            h = next;
        }
        (h, caches)
    }

    pub fn infer(&self, x: &Matrix) -> Matrix {
        self.layers.iter().fold(x.clone(), |h, layer| layer.infer(&h))
    }

    /// Returns dx and the parameter gradients in `visit_params` order.
    pub fn backward(&self, caches: &[Cache], dy: &Matrix) -> (Matrix, Vec<Matrix>) {
        let mut per_layer: Vec<Vec<Matrix>> = Vec::with_capacity(self.layers.len());
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let mut lg = Vec::new();
            g = layer.backward(cache, &g, &mut lg);
            per_layer.push(lg);
        }
        (g, per_layer.into_iter().rev().flatten().collect())
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.iter().fold(input_dim, |d, l| l.output_dim(d))
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Matrix)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}
