use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapool::FeatureShape;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, ImageDims, Layer, Matrix, Sequential};

/// Default latent size.
pub const DEFAULT_Z_DIM: usize = 60;
/// Log-variances are clamped to ±this before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Classification + KL only.
    M1,
    /// Adds a decoder and the reconstruction term.
    M2,
}

/// Diagonal Gaussian q(z|x).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentPosterior {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::shape(format!("[{}]", mean.len()), format!("[{}]", log_variance.len())));
        }
        Ok(LatentPosterior { mean, log_variance })
    }

    pub fn standard_normal(z_dim: usize) -> Self {
        LatentPosterior { mean: vec![0.0; z_dim], log_variance: vec![0.0; z_dim] }
    }

    pub fn z_dim(&self) -> usize {
        self.mean.len()
    }
}

/// z = mean + exp(log_variance / 2) * noise
pub fn reparameterize(posterior: &LatentPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != posterior.z_dim() {
        return Err(Error::shape(format!("[{}]", posterior.z_dim()), format!("[{}]", noise.len())));
    }
    Ok(posterior
        .mean
        .iter()
        .zip(&posterior.log_variance)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

/// KL(q(z|x) || N(0, I)) for a diagonal Gaussian.
pub fn kl_term(posterior: &LatentPosterior) -> Result<f64> {
    let mut kl = 0.0;
    for (m, lv) in posterior.mean.iter().zip(&posterior.log_variance) {
        if !m.is_finite() || !lv.is_finite() {
            return Err(Error::Numerics { what: "posterior parameters".into(), epoch: None });
        }
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    Ok(kl.max(0.0))
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Encoder/decoder family. The dense form serves flat data; the image
/// forms expect channel-major inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Dense { hidden: Vec<usize> },
    /// LeNet-5 trunk: conv5-pool-conv5-pool-fc120-fc84.
    LeNet { image: ImageDims },
    /// VGG16 convolutional trunk with a residual upsampling decoder.
    /// Channel counts are divided by `width_divisor`.
    Vgg16 { image: ImageDims, width_divisor: usize },
}

impl Architecture {
    /// Dense for flat data, LeNet for images.
    pub fn default_for(shape: FeatureShape) -> Self {
        match shape {
            FeatureShape::Flat { .. } => Architecture::Dense { hidden: vec![64, 64] },
            FeatureShape::Image { channels, height, width } => {
                Architecture::LeNet { image: ImageDims { channels, height, width } }
            }
        }
    }

    pub fn input_dim(&self, fallback: usize) -> usize {
        match self {
            Architecture::Dense { .. } => fallback,
            Architecture::LeNet { image } | Architecture::Vgg16 { image, .. } => image.len(),
        }
    }

    fn encoder(&self, input_dim: usize, rng: &mut impl Rng) -> Result<Sequential> {
        let mut layers = Vec::new();
        match self {
            Architecture::Dense { hidden } => {
                let mut d = input_dim;
                for &h in hidden {
                    layers.push(Layer::Dense(Dense::new(d, h, rng)));
                    layers.push(Layer::Relu);
                    d = h;
                }
            }
            Architecture::LeNet { image } => {
                if image.height < 16 || image.width < 16 {
                    return Err(Error::shape("image of at least 16x16", format!("{}x{}", image.height, image.width)));
                }
                let c1 = Conv2d::new(*image, 6, 5, 0, rng);
                let p1 = c1.output();
                let pooled1 = ImageDims { channels: 6, height: p1.height / 2, width: p1.width / 2 };
                let c2 = Conv2d::new(pooled1, 16, 5, 0, rng);
                let p2 = c2.output();
                let flat = 16 * (p2.height / 2) * (p2.width / 2);
                layers.extend([
                    Layer::Conv2d(c1),
                    Layer::Relu,
                    Layer::MaxPool2(p1),
                    Layer::Conv2d(c2),
                    Layer::Relu,
                    Layer::MaxPool2(p2),
                    Layer::Dense(Dense::new(flat, 120, rng)),
                    Layer::Relu,
                    Layer::Dense(Dense::new(120, 84, rng)),
                    Layer::Relu,
                ]);
            }
            Architecture::Vgg16 { image, width_divisor } => {
                let div = (*width_divisor).max(1);
                let plan: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
                let mut dims = *image;
                for block in plan {
                    for &ch in block {
                        let conv = Conv2d::new(dims, (ch / div).max(1), 3, 1, rng);
                        dims = conv.output();
                        layers.push(Layer::Conv2d(conv));
                        layers.push(Layer::Relu);
                    }
                    if dims.height < 2 || dims.width < 2 {
                        return Err(Error::shape("image of at least 32x32", format!("{}x{}", image.height, image.width)));
                    }
                    layers.push(Layer::MaxPool2(dims));
                    dims = ImageDims { channels: dims.channels, height: dims.height / 2, width: dims.width / 2 };
                }
                let hidden = (512 / div).max(1);
                layers.push(Layer::Dense(Dense::new(dims.len(), hidden, rng)));
                layers.push(Layer::Relu);
            }
        }
        Ok(Sequential::new(layers))
    }

    fn decoder(&self, z_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Result<Sequential> {
        let mut layers = Vec::new();
        match self {
            Architecture::Dense { hidden } => {
                let mut d = z_dim;
                for &h in hidden.iter().rev() {
                    layers.push(Layer::Dense(Dense::new(d, h, rng)));
                    layers.push(Layer::Relu);
                    d = h;
                }
                layers.push(Layer::Dense(Dense::new(d, output_dim, rng)));
            }
            Architecture::LeNet { .. } => {
                layers.extend([
                    Layer::Dense(Dense::new(z_dim, 256, rng)),
                    Layer::Relu,
                    Layer::Dense(Dense::new(256, output_dim, rng)),
                ]);
            }
            Architecture::Vgg16 { image, width_divisor } => {
                if image.height % 8 != 0 || image.width % 8 != 0 {
                    return Err(Error::shape("image sides divisible by 8", format!("{}x{}", image.height, image.width)));
                }
                let ch = (256 / (*width_divisor).max(1)).max(1);
                let mut dims = ImageDims { channels: ch, height: image.height / 8, width: image.width / 8 };
                layers.push(Layer::Dense(Dense::new(z_dim, dims.len(), rng)));
                layers.push(Layer::Relu);
                for _ in 0..3 {
                    layers.push(Layer::Upsample2(dims));
                    dims = ImageDims { channels: dims.channels, height: dims.height * 2, width: dims.width * 2 };
                    let next = (dims.channels / 2).max(1);
                    let conv = Conv2d::new(dims, next, 3, 1, rng);
                    dims = conv.output();
                    layers.push(Layer::Conv2d(conv));
                    layers.push(Layer::Relu);
                    let block = Sequential::new(vec![
                        Layer::Conv2d(Conv2d::new(dims, dims.channels, 3, 1, rng)),
                        Layer::Relu,
                        Layer::Conv2d(Conv2d::new(dims, dims.channels, 3, 1, rng)),
                    ]);
                    layers.push(Layer::Residual(block));
                    layers.push(Layer::Relu);
                }
                layers.push(Layer::Conv2d(Conv2d::new(dims, image.channels, 3, 1, rng)));
            }
        }
        let model = Sequential::new(layers);
        let produced = model.output_dim(z_dim);
        if produced != output_dim {
            return Err(Error::shape(format!("decoder output [{output_dim}]"), format!("[{produced}]")));
        }
        Ok(model)
    }
}

/// Variational classifier: probabilistic encoder, reparameterized latent,
/// single linear classifier and (M2 only) a decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VnnModel {
    pub variant: Variant,
    pub arch: Architecture,
    pub input_dim: usize,
    pub z_dim: usize,
    pub num_classes: usize,
    pub encoder: Sequential,
    pub mean_head: Dense,
    pub logvar_head: Dense,
    pub classifier: Dense,
    pub decoder: Option<Sequential>,
}

impl VnnModel {
    pub fn new(
        variant: Variant,
        arch: Architecture,
        input_dim: usize,
        z_dim: usize,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if z_dim == 0 || num_classes == 0 || input_dim == 0 {
            return Err(Error::Config("input_dim, z_dim and num_classes must be positive".into()));
        }
        if arch.input_dim(input_dim) != input_dim {
            return Err(Error::shape(format!("[{}]", arch.input_dim(input_dim)), format!("[{input_dim}]")));
        }
        let encoder = arch.encoder(input_dim, rng)?;
        let hidden = encoder.output_dim(input_dim);
        let mean_head = Dense::new(hidden, z_dim, rng);
        let logvar_head = Dense::new(hidden, z_dim, rng);
        let classifier = Dense::new(z_dim, num_classes, rng);
        let decoder = match variant {
            Variant::M1 => None,
            Variant::M2 => Some(arch.decoder(z_dim, input_dim, rng)?),
        };
        Ok(VnnModel { variant, arch, input_dim, z_dim, num_classes, encoder, mean_head, logvar_head, classifier, decoder })
    }

    pub fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(Error::shape(format!("[{}]", self.input_dim), format!("[{cols}]")));
        }
        Ok(())
    }

    /// Posterior parameters for a batch: (means, clamped log-variances).
    pub fn encode_batch(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x.ncols())?;
        let h = self.encoder.infer(x);
        let mean = self.mean_head.forward(&h);
        let logvar = self.logvar_head.forward(&h).mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics { what: "encoder output".into(), epoch: None });
        }
        Ok((mean, logvar))
    }

    pub fn encode(&self, x: &[f32]) -> Result<LatentPosterior> {
        let m = Array2::from_shape_fn((1, x.len()), |(_, j)| x[j] as f64);
        let (mean, logvar) = self.encode_batch(&m)?;
        Ok(LatentPosterior { mean: mean.row(0).to_vec(), log_variance: logvar.row(0).to_vec() })
    }

    pub fn classify_batch(&self, z: &Matrix) -> Result<Matrix> {
        if z.ncols() != self.z_dim {
            return Err(Error::shape(format!("[{}]", self.z_dim), format!("[{}]", z.ncols())));
        }
        Ok(softmax_rows(&self.classifier.forward(z)))
    }

    pub fn classify(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector");
        Ok(self.classify_batch(&m)?.row(0).to_vec())
    }

    /// Posterior means and class probabilities at z = mean, computed in
    /// parallel chunks. Output rows follow input rows.
    pub fn score(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x.ncols())?;
        if x.nrows() == 0 {
            return Ok((Matrix::zeros((0, self.z_dim)), Matrix::zeros((0, self.num_classes))));
        }
        let chunks: Vec<(Matrix, Matrix)> = x
            .axis_chunks_iter(Axis(0), INFER_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|chunk| {
                let (mean, _) = self.encode_batch(&chunk.to_owned())?;
                let probs = self.classify_batch(&mean)?;
                Ok((mean, probs))
            })
            .collect::<Result<_>>()?;
        let means: Vec<_> = chunks.iter().map(|c| c.0.view()).collect();
        let probs: Vec<_> = chunks.iter().map(|c| c.1.view()).collect();
        Ok((concatenate(Axis(0), &means).expect("same width"), concatenate(Axis(0), &probs).expect("same width")))
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Matrix)) {
        self.encoder.visit_params(f);
        for d in [&self.mean_head, &self.logvar_head, &self.classifier] {
            f(&d.weight);
            f(&d.bias);
        }
        if let Some(dec) = &self.decoder {
            dec.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        self.encoder.visit_params_mut(f);
        for d in [&mut self.mean_head, &mut self.logvar_head, &mut self.classifier] {
            f(&mut d.weight);
            f(&mut d.bias);
        }
        if let Some(dec) = &mut self.decoder {
            dec.visit_params_mut(f);
        }
    }

    pub fn param_shapes(&self) -> Vec<[usize; 2]> {
        let mut shapes = Vec::new();
        self.visit_params(&mut |p| shapes.push([p.nrows(), p.ncols()]));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|[r, c]| r * c).sum()
    }

    /// Rounds every parameter to f32 precision, so an in-memory model and
    /// one reloaded from a checkpoint are bit-identical.
    pub fn quantize_f32(&mut self) {
        self.visit_params_mut(&mut |p| p.mapv_inplace(|v| v as f32 as f64));
    }
}

/// Copies f32 features of `rows` into an f64 matrix.
pub fn to_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f32]>, dim: usize) -> Matrix {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * dim);
    for r in rows {
        debug_assert_eq!(r.len(), dim);
        data.extend(r.iter().map(|&v| v as f64));
    }
    Array2::from_shape_vec((n, dim), data).expect("row lengths match dim")
}
