//! Layers with hand-written forward and backward passes. Convolutions go
//! through im2col and a dense gemm; everything runs in f64 so the finite
//! difference gradient checks stay sharp.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape.clone();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.fill(0.0);
    }
}

pub type ParamVisitor<'a> = dyn FnMut(String, &mut Param) + 'a;
pub type BufferVisitor<'a> = dyn FnMut(String, &mut Tensor) + 'a;

fn shape4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    if x.shape.len() != 4 {
        return Err(Error::Shape(format!(
            "{what}: expected rank-4 tensor, got shape {:?}",
            x.shape
        )));
    }
    Ok((x.shape[0], x.shape[1], x.shape[2], x.shape[3]))
}

/// "Same"-padded cross-correlation over [N, C, H, W] with independent
/// height/width strides. Output spatial size is ceil(in / stride).
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Param, // [F, C, KH, KW]
    pub bias: Param,   // [F]
    pub stride: (usize, usize),
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Vec<f64>, // [C*KH*KW, N*OH*OW]
    in_shape: (usize, usize, usize, usize),
    out_shape: (usize, usize, usize, usize),
    pads: (usize, usize),
}

impl Conv {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * kh * kw) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("he init");
        let weight = Tensor {
            shape: vec![c_out, c_in, kh, kw],
            data: (0..c_out * c_in * kh * kw)
                .map(|_| normal.sample(rng))
                .collect(),
        };
        Conv {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            cache: None,
        }
    }

    fn geometry(
        &self,
        h: usize,
        w: usize,
    ) -> ((usize, usize), (usize, usize)) {
        let (sh, sw) = self.stride;
        let (kh, kw) = (self.weight.value.shape[2], self.weight.value.shape[3]);
        let oh = h.div_ceil(sh);
        let ow = w.div_ceil(sw);
        let pad_h = ((oh - 1) * sh + kh).saturating_sub(h) / 2;
        let pad_w = ((ow - 1) * sw + kw).saturating_sub(w) / 2;
        ((oh, ow), (pad_h, pad_w))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = shape4(x, "conv input")?;
        let f = self.weight.value.shape[0];
        if c != self.weight.value.shape[1] {
            return Err(Error::Shape(format!(
                "conv: input has {c} channels, kernel {:?} wants {}",
                self.weight.value.shape, self.weight.value.shape[1]
            )));
        }
        let (kh, kw) = (self.weight.value.shape[2], self.weight.value.shape[3]);
        let ((oh, ow), (pad_h, pad_w)) = self.geometry(h, w);
        let (sh, sw) = self.stride;
        let ckk = c * kh * kw;
        let m = n * oh * ow;

        let mut cols = vec![0.0; ckk * m];
        for ni in 0..n {
            for ci in 0..c {
                let x_base = (ni * c + ci) * h * w;
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let row = (ci * kh + khi) * kw + kwi;
                        let col_base = row * m + ni * oh * ow;
                        for ohi in 0..oh {
                            let ih = (ohi * sh + khi) as isize - pad_h as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            let xrow = x_base + ih as usize * w;
                            let crow = col_base + ohi * ow;
                            for owi in 0..ow {
                                let iw = (owi * sw + kwi) as isize - pad_w as isize;
                                if iw >= 0 && (iw as usize) < w {
                                    cols[crow + owi] = x.data[xrow + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }

        // out_mat [F, M] = weight [F, CKK] x cols [CKK, M]
        let mut out_mat = vec![0.0; f * m];
        gemm(
            false,
            false,
            f,
            ckk,
            m,
            1.0,
            &self.weight.value.data,
            &cols,
            0.0,
            &mut out_mat,
        );

        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                let b = self.bias.value.data[fi];
                let src = fi * m + ni * oh * ow;
                let dst = (ni * f + fi) * oh * ow;
                for i in 0..oh * ow {
                    out.data[dst + i] = out_mat[src + i] + b;
                }
            }
        }
        self.cache = Some(ConvCache {
            cols,
            in_shape: (n, c, h, w),
            out_shape: (n, f, oh, ow),
            pads: (pad_h, pad_w),
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("conv backward before forward".into()))?;
        let (n, c, h, w) = cache.in_shape;
        let (n2, f, oh, ow) = cache.out_shape;
        if grad_out.shape != [n2, f, oh, ow] {
            return Err(Error::Shape(format!(
                "conv backward: grad shape {:?}, expected {:?}",
                grad_out.shape,
                [n2, f, oh, ow]
            )));
        }
        let (kh, kw) = (self.weight.value.shape[2], self.weight.value.shape[3]);
        let (sh, sw) = self.stride;
        let (pad_h, pad_w) = cache.pads;
        let ckk = c * kh * kw;
        let m = n * oh * ow;

        // gather [N,F,OH,OW] -> [F, M]
        let mut grad_mat = vec![0.0; f * m];
        for ni in 0..n {
            for fi in 0..f {
                let src = (ni * f + fi) * oh * ow;
                let dst = fi * m + ni * oh * ow;
                grad_mat[dst..dst + oh * ow]
                    .copy_from_slice(&grad_out.data[src..src + oh * ow]);
                self.bias.grad.data[fi] += grad_out.data[src..src + oh * ow].iter().sum::<f64>();
            }
        }

        // grad_weight [F, CKK] += grad_mat [F, M] x cols^T [M, CKK]
        gemm(
            false,
            true,
            f,
            m,
            ckk,
            1.0,
            &grad_mat,
            &cache.cols,
            1.0,
            &mut self.weight.grad.data,
        );

        // grad_cols [CKK, M] = weight^T [CKK, F] x grad_mat [F, M]
        let mut grad_cols = vec![0.0; ckk * m];
        gemm(
            true,
            false,
            ckk,
            f,
            m,
            1.0,
            &self.weight.value.data,
            &grad_mat,
            0.0,
            &mut grad_cols,
        );

        // col2im accumulate
        let mut grad_in = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                let x_base = (ni * c + ci) * h * w;
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let row = (ci * kh + khi) * kw + kwi;
                        let col_base = row * m + ni * oh * ow;
                        for ohi in 0..oh {
                            let ih = (ohi * sh + khi) as isize - pad_h as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            let xrow = x_base + ih as usize * w;
                            let crow = col_base + ohi * ow;
                            for owi in 0..ow {
                                let iw = (owi * sw + kwi) as isize - pad_w as isize;
                                if iw >= 0 && (iw as usize) < w {
                                    grad_in.data[xrow + iw as usize] += grad_cols[crow + owi];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Per-channel batch normalization over [N, C, H, W] with running
/// statistics (momentum 0.9) for eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize, usize, usize),
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor {
                shape: vec![channels],
                data: vec![1.0; channels],
            }),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor {
                shape: vec![channels],
                data: vec![1.0; channels],
            },
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = shape4(x, "batchnorm input")?;
        if c != self.gamma.value.numel() {
            return Err(Error::Shape(format!(
                "batchnorm: {c} channels, expected {}",
                self.gamma.value.numel()
            )));
        }
        let per = n * h * w;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for ci in 0..c {
                let mut sum = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    sum += x.data[base..base + h * w].iter().sum::<f64>();
                }
                mean[ci] = sum / per as f64;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for &v in &x.data[base..base + h * w] {
                        let d = v - mean[ci];
                        sq += d * d;
                    }
                }
                var[ci] = sq / per as f64;
                self.running_mean.data[ci] =
                    self.momentum * self.running_mean.data[ci] + (1.0 - self.momentum) * mean[ci];
                self.running_var.data[ci] =
                    self.momentum * self.running_var.data[ci] + (1.0 - self.momentum) * var[ci];
            }
        } else {
            mean.copy_from_slice(&self.running_mean.data);
            var.copy_from_slice(&self.running_var.data);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut out = Tensor::zeros(&x.shape);
        let mut xhat = vec![0.0; x.numel()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                let g = self.gamma.value.data[ci];
                let b = self.beta.value.data[ci];
                let span = base..base + h * w;
                for ((&xv, xh), o) in x.data[span.clone()]
                    .iter()
                    .zip(&mut xhat[span.clone()])
                    .zip(&mut out.data[span])
                {
                    *xh = (xv - mean[ci]) * inv_std[ci];
                    *o = g * *xh + b;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: (n, c, h, w),
            batch_stats: train,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("batchnorm backward before forward".into()))?;
        let (n, c, h, w) = cache.shape;
        if grad_out.shape != [n, c, h, w] {
            return Err(Error::Shape("batchnorm backward: grad shape mismatch".into()));
        }
        let per = (n * h * w) as f64;
        let mut grad_in = Tensor::zeros(&grad_out.shape);
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                for i in base..base + h * w {
                    sum_dy += grad_out.data[i];
                    sum_dy_xhat += grad_out.data[i] * cache.xhat[i];
                }
            }
            self.gamma.grad.data[ci] += sum_dy_xhat;
            self.beta.grad.data[ci] += sum_dy;
            let g = self.gamma.value.data[ci];
            let istd = cache.inv_std[ci];
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                for i in base..base + h * w {
                    grad_in.data[i] = if cache.batch_stats {
                        g * istd
                            * (grad_out.data[i]
                                - sum_dy / per
                                - cache.xhat[i] * sum_dy_xhat / per)
                    } else {
                        // eval-mode stats are constants
                        g * istd * grad_out.data[i]
                    };
                }
            }
        }
        Ok(grad_in)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor) {
        f(format!("{prefix}.running_mean"), &mut self.running_mean);
        f(format!("{prefix}.running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    pub fn backward(&self, grad_out: &Tensor) -> Tensor {
        Tensor {
            shape: grad_out.shape.clone(),
            data: grad_out
                .data
                .iter()
                .zip(&self.mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect(),
        }
    }
}

/// [N, C, H, W] -> [N, C] by averaging over the spatial axes.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = shape4(x, "pool input")?;
        self.in_shape = x.shape.clone();
        let mut out = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                out.data[ni * c + ci] =
                    x.data[base..base + h * w].iter().sum::<f64>() / (h * w) as f64;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.in_shape[3],
        );
        if grad_out.shape != [n, c] {
            return Err(Error::Shape("pool backward: grad shape mismatch".into()));
        }
        let mut grad_in = Tensor::zeros(&self.in_shape);
        let scale = 1.0 / (h * w) as f64;
        for ni in 0..n {
            for ci in 0..c {
                let g = grad_out.data[ni * c + ci] * scale;
                let base = (ni * c + ci) * h * w;
                for v in &mut grad_in.data[base..base + h * w] {
                    *v = g;
                }
            }
        }
        Ok(grad_in)
    }
}

/// Fully connected layer on [N, in] inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("he init");
        Linear {
            weight: Param::new(Tensor {
                shape: vec![out_dim, in_dim],
                data: (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect(),
            }),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape.len() != 2 || x.shape[1] != self.weight.value.shape[1] {
            return Err(Error::Shape(format!(
                "linear: input {:?} incompatible with weight {:?}",
                x.shape, self.weight.value.shape
            )));
        }
        let (n, in_dim) = (x.shape[0], x.shape[1]);
        let out_dim = self.weight.value.shape[0];
        let mut out = Tensor::zeros(&[n, out_dim]);
        // y [N, out] = x [N, in] x W^T [in, out]
        gemm(
            false,
            true,
            n,
            in_dim,
            out_dim,
            1.0,
            &x.data,
            &self.weight.value.data,
            0.0,
            &mut out.data,
        );
        for ni in 0..n {
            for oi in 0..out_dim {
                out.data[ni * out_dim + oi] += self.bias.value.data[oi];
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Shape("linear backward before forward".into()))?;
        let (n, in_dim) = (x.shape[0], x.shape[1]);
        let out_dim = self.weight.value.shape[0];
        if grad_out.shape != [n, out_dim] {
            return Err(Error::Shape("linear backward: grad shape mismatch".into()));
        }
        // dW [out, in] += dy^T [out, N] x x [N, in]
        gemm(
            true,
            false,
            out_dim,
            n,
            in_dim,
            1.0,
            &grad_out.data,
            &x.data,
            1.0,
            &mut self.weight.grad.data,
        );
        for ni in 0..n {
            for oi in 0..out_dim {
                self.bias.grad.data[oi] += grad_out.data[ni * out_dim + oi];
            }
        }
        // dx [N, in] = dy [N, out] x W [out, in]
        let mut grad_in = Tensor::zeros(&[n, in_dim]);
        gemm(
            false,
            false,
            n,
            out_dim,
            in_dim,
            1.0,
            &grad_out.data,
            &self.weight.value.data,
            0.0,
            &mut grad_in.data,
        );
        Ok(grad_in)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// conv-bn-relu-conv-bn plus a skip path (identity, or a stride-matched
/// 1x1 projection when shapes change), then a final ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub projection: Option<Conv>,
    relu_mid: Relu,
    relu_out: Relu,
}

impl ResidualBlock {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        time_stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stride = (1, time_stride);
        let projection = if c_in != c_out || time_stride != 1 {
            Some(Conv::new(c_in, c_out, 1, 1, stride, rng))
        } else {
            None
        };
        ResidualBlock {
            conv1: Conv::new(c_in, c_out, kernel.0, kernel.1, stride, rng),
            bn1: BatchNorm::new(c_out),
            conv2: Conv::new(c_out, c_out, kernel.0, kernel.1, (1, 1), rng),
            bn2: BatchNorm::new(c_out),
            projection,
            relu_mid: Relu::default(),
            relu_out: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let main = self.conv1.forward(x)?;
        let main = self.bn1.forward(&main, train)?;
        let main = self.relu_mid.forward(&main);
        let main = self.conv2.forward(&main)?;
        let main = self.bn2.forward(&main, train)?;
        let skip = match &mut self.projection {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        if !main.same_shape(&skip) {
            return Err(Error::Shape(format!(
                "residual add: main {:?} vs skip {:?}",
                main.shape, skip.shape
            )));
        }
        let sum = Tensor {
            shape: main.shape.clone(),
            data: main
                .data
                .iter()
                .zip(&skip.data)
                .map(|(a, b)| a + b)
                .collect(),
        };
        Ok(self.relu_out.forward(&sum))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad_out);
        let main = self.bn2.backward(&g)?;
        let main = self.conv2.backward(&main)?;
        let main = self.relu_mid.backward(&main);
        let main = self.bn1.backward(&main)?;
        let main = self.conv1.backward(&main)?;
        let skip = match &mut self.projection {
            Some(proj) => proj.backward(&g)?,
            None => g,
        };
        Ok(Tensor {
            shape: main.shape.clone(),
            data: main
                .data
                .iter()
                .zip(&skip.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some(proj) = &mut self.projection {
            proj.visit_params(&format!("{prefix}.proj"), f);
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor) {
        self.bn1.visit_buffers(&format!("{prefix}.bn1"), f);
        self.bn2.visit_buffers(&format!("{prefix}.bn2"), f);
    }
}
