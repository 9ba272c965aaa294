use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng;
use std::ops::Range;

use super::{matmul, Param};

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (evaluation). `update_running` is off for gradient checks so
/// repeated forwards stay bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { update_running: bool },
    Eval,
}

impl Mode {
    pub fn train() -> Mode {
        Mode::Train { update_running: true }
    }

    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the *output* of the forward pass.
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Numerically stable softmax of a score vector.
pub fn softmax(scores: &[f64]) -> Array1<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exp: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    for e in &mut exp {
        *e /= sum;
    }
    Array1::from_vec(exp)
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Linear {
        Linear {
            w: Param::uniform(&[out_dim, in_dim], in_dim, rng),
            b: Param::uniform(&[out_dim], in_dim, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = matmul(x, self.w.view2().t());
        y += &self.b.view1();
        y
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        let dw = matmul(dy.t(), x);
        self.w
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .zip_mut_with(&dw, |g, &v| *g += v);
        let db = dy.sum_axis(Axis(0));
        self.b
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .zip_mut_with(&db, |g, &v| *g += v);
        matmul(dy, self.w.view2())
    }

    pub fn descriptor(&self) -> String {
        format!("fc({},{})", self.in_dim, self.out_dim)
    }
}

/// 2D valid convolution (no padding) with square kernel, via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (c_out, c_in * k * k)
    pub w: Param,
    pub b: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Conv2d {
        let fan_in = c_in * k * k;
        Conv2d {
            w: Param::uniform(&[c_out, fan_in], fan_in, rng),
            b: Param::uniform(&[c_out], fan_in, rng),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input - self.k) / self.stride + 1
    }

    /// Returns the output activation and the im2col matrix needed by the
    /// backward pass.
    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (batch, _, h, w) = x.dim();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let cols = self.im2col(x, oh, ow);
        let y2 = matmul(self.w.view2(), cols.view()); // (c_out, B*P)
        let p = oh * ow;
        let mut y = Array4::zeros((batch, self.c_out, oh, ow));
        {
            let ys = y.as_slice_mut().unwrap();
            let y2s = y2.as_slice().unwrap();
            let bias = self.b.view1();
            for bi in 0..batch {
                for co in 0..self.c_out {
                    let dst = &mut ys[(bi * self.c_out + co) * p..][..p];
                    let src = &y2s[co * (batch * p) + bi * p..][..p];
                    let bv = bias[co];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bv;
                    }
                }
            }
        }
        (y, cols)
    }

    /// Accumulates gradients; computes the input gradient only on demand
    /// (the first layer never needs it).
    pub fn backward(
        &mut self,
        cols: &Array2<f64>,
        x_dim: (usize, usize, usize, usize),
        dy: &Array4<f64>,
        need_dx: bool,
    ) -> Option<Array4<f64>> {
        let (batch, _, h, w) = x_dim;
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let p = oh * ow;
        // reorder dy (B, c_out, oh, ow) -> (c_out, B*P)
        let mut dyflat = Array2::zeros((self.c_out, batch * p));
        {
            let src = dy.as_slice().unwrap();
            let dst = dyflat.as_slice_mut().unwrap();
            for bi in 0..batch {
                for co in 0..self.c_out {
                    let s = &src[(bi * self.c_out + co) * p..][..p];
                    let d = &mut dst[co * (batch * p) + bi * p..][..p];
                    d.copy_from_slice(s);
                }
            }
        }
        let dw = matmul(dyflat.view(), cols.t());
        self.w
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .zip_mut_with(&dw, |g, &v| *g += v);
        let db = dyflat.sum_axis(Axis(1));
        self.b
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .zip_mut_with(&db, |g, &v| *g += v);
        if !need_dx {
            return None;
        }
        let dcols = matmul(self.w.view2().t(), dyflat.view());
        Some(self.col2im(&dcols, batch, h, w, oh, ow))
    }

    fn im2col(&self, x: &Array4<f64>, oh: usize, ow: usize) -> Array2<f64> {
        let (batch, _, h, w) = x.dim();
        let p = oh * ow;
        let kk = self.k * self.k;
        let rows = self.c_in * kk;
        let mut cols = Array2::zeros((rows, batch * p));
        let xs = x.as_slice().unwrap();
        let cs = cols.as_slice_mut().unwrap();
        for bi in 0..batch {
            for c in 0..self.c_in {
                let src_plane = &xs[(bi * self.c_in + c) * h * w..][..h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let row = (c * self.k + ky) * self.k + kx;
                        let dst = &mut cs[row * (batch * p) + bi * p..][..p];
                        for oy in 0..oh {
                            let sy = oy * self.stride + ky;
                            let src = &src_plane[sy * w + kx..];
                            let drow = &mut dst[oy * ow..][..ow];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                *d = src[ox * self.stride];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        dcols: &Array2<f64>,
        batch: usize,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> Array4<f64> {
        let p = oh * ow;
        let mut dx = Array4::zeros((batch, self.c_in, h, w));
        let ds = dx.as_slice_mut().unwrap();
        let src = dcols.as_slice().unwrap();
        for bi in 0..batch {
            for c in 0..self.c_in {
                let dst_plane = &mut ds[(bi * self.c_in + c) * h * w..][..h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let row = (c * self.k + ky) * self.k + kx;
                        let col_block = &src[row * (batch * p) + bi * p..][..p];
                        for oy in 0..oh {
                            let sy = oy * self.stride + ky;
                            let srow = &col_block[oy * ow..][..ow];
                            for (ox, &v) in srow.iter().enumerate() {
                                dst_plane[sy * w + kx + ox * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn descriptor(&self) -> String {
        format!("conv({},{},{},{})", self.c_in, self.c_out, self.k, self.stride)
    }
}

/// Batch normalization over the rows of a feature matrix.
///
/// Training mode normalizes each row range independently (the selection
/// network feeds one range per action set); running statistics are pooled
/// over all rows and drive evaluation mode. Variance is biased (/N) so a
/// single-row range is well defined.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ndarray::ArrayD<f64>,
    pub running_var: ndarray::ArrayD<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub dim: usize,
}

/// Backward-pass cache: normalized activations plus per-range inverse
/// standard deviations.
#[derive(Debug, Clone)]
pub struct BnCtx {
    pub xhat: Array2<f64>,
    pub inv_std: Array2<f64>,
    pub ranges: Vec<Range<usize>>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> BatchNorm {
        BatchNorm {
            gamma: Param::ones(&[dim]),
            beta: Param::zeros(&[dim]),
            running_mean: ndarray::ArrayD::zeros(ndarray::IxDyn(&[dim])),
            running_var: ndarray::ArrayD::from_elem(ndarray::IxDyn(&[dim]), 1.0),
            momentum: 0.1,
            eps: 1e-5,
            dim,
        }
    }

    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        ranges: &[Range<usize>],
        mode: Mode,
    ) -> (Array2<f64>, Option<BnCtx>) {
        match mode {
            Mode::Eval => (self.forward_eval(x), None),
            Mode::Train { update_running } => {
                let (y, ctx) = self.forward_train(x, ranges);
                if update_running {
                    self.update_running(x);
                }
                (y, Some(ctx))
            }
        }
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mean = self.running_mean.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let var = self.running_var.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let gamma = self.gamma.view1();
        let beta = self.beta.view1();
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for f in 0..self.dim {
                row[f] = (row[f] - mean[f]) / (var[f] + self.eps).sqrt() * gamma[f] + beta[f];
            }
        }
        y
    }

    fn forward_train(&self, x: &Array2<f64>, ranges: &[Range<usize>]) -> (Array2<f64>, BnCtx) {
        let gamma = self.gamma.view1();
        let beta = self.beta.view1();
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Array2::zeros((ranges.len(), self.dim));
        for (ri, range) in ranges.iter().enumerate() {
            let block = x.slice(ndarray::s![range.clone(), ..]);
            let n = block.nrows() as f64;
            let mean = block.sum_axis(Axis(0)) / n;
            let mut var = Array1::<f64>::zeros(self.dim);
            for row in block.rows() {
                for f in 0..self.dim {
                    let d = row[f] - mean[f];
                    var[f] += d * d;
                }
            }
            var /= n;
            for f in 0..self.dim {
                inv_std[(ri, f)] = 1.0 / (var[f] + self.eps).sqrt();
            }
            let mut out_block = xhat.slice_mut(ndarray::s![range.clone(), ..]);
            for (bi, row) in block.rows().into_iter().enumerate() {
                for f in 0..self.dim {
                    out_block[(bi, f)] = (row[f] - mean[f]) * inv_std[(ri, f)];
                }
            }
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for f in 0..self.dim {
                row[f] = row[f] * gamma[f] + beta[f];
            }
        }
        let ctx = BnCtx { xhat, inv_std, ranges: ranges.to_vec() };
        (y, ctx)
    }

    fn update_running(&mut self, x: &Array2<f64>) {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(self.dim);
        for row in x.rows() {
            for f in 0..self.dim {
                let d = row[f] - mean[f];
                var[f] += d * d;
            }
        }
        var /= n;
        let m = self.momentum;
        let mut rm = self.running_mean.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut rv = self.running_var.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        for f in 0..self.dim {
            rm[f] = (1.0 - m) * rm[f] + m * mean[f];
            rv[f] = (1.0 - m) * rv[f] + m * var[f];
        }
    }

    /// Training-mode backward. Evaluation mode is an affine map; training
    /// gradients flow through the per-range statistics.
    pub fn backward(&mut self, ctx: &BnCtx, dy: &Array2<f64>) -> Array2<f64> {
        let gamma = self.gamma.view1().to_owned();
        // parameter grads
        {
            let mut dgamma = self
                .gamma
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            let mut dbeta =
                self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            for (row_dy, row_xhat) in dy.rows().into_iter().zip(ctx.xhat.rows()) {
                for f in 0..self.dim {
                    dgamma[f] += row_dy[f] * row_xhat[f];
                    dbeta[f] += row_dy[f];
                }
            }
        }
        let mut dx = Array2::zeros(dy.raw_dim());
        for (ri, range) in ctx.ranges.iter().enumerate() {
            let n = (range.end - range.start) as f64;
            let dy_b = dy.slice(ndarray::s![range.clone(), ..]);
            let xhat_b = ctx.xhat.slice(ndarray::s![range.clone(), ..]);
            let mean_dy = dy_b.sum_axis(Axis(0)) / n;
            let mut mean_dy_xhat = Array1::<f64>::zeros(self.dim);
            for (rdy, rxh) in dy_b.rows().into_iter().zip(xhat_b.rows()) {
                for f in 0..self.dim {
                    mean_dy_xhat[f] += rdy[f] * rxh[f];
                }
            }
            mean_dy_xhat /= n;
            let mut dx_b = dx.slice_mut(ndarray::s![range.clone(), ..]);
            for (bi, (rdy, rxh)) in dy_b.rows().into_iter().zip(xhat_b.rows()).enumerate() {
                for f in 0..self.dim {
                    dx_b[(bi, f)] = gamma[f]
                        * ctx.inv_std[(ri, f)]
                        * (rdy[f] - mean_dy[f] - rxh[f] * mean_dy_xhat[f]);
                }
            }
        }
        dx
    }

    pub fn descriptor(&self) -> String {
        format!("bn({})", self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_forward_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::new(2, 2, &mut rng);
        l.w.value = array![[1.0, 2.0], [3.0, 4.0]].into_dyn();
        l.b.value = array![0.5, -0.5].into_dyn();
        let x = array![[1.0, 1.0]];
        let y = l.forward(x.view());
        assert_eq!(y, array![[3.5, 6.5]]);
    }

    #[test]
    fn conv_output_dims_follow_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new(3, 32, 8, 4, &mut rng);
        assert_eq!(c.out_size(128), 31);
        let c = Conv2d::new(32, 64, 4, 2, &mut rng);
        assert_eq!(c.out_size(31), 14);
        let c = Conv2d::new(64, 64, 3, 1, &mut rng);
        assert_eq!(c.out_size(14), 12);
    }

    #[test]
    fn conv_forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 7, 7), |(b, c, i, j)| {
            ((b + 1) as f64) * 0.1 + (c as f64) * 0.01 + (i as f64) * 0.3 - (j as f64) * 0.2
        });
        let (y, _) = conv.forward(&x);
        let w = conv.w.view2();
        let bias = conv.b.view1();
        let oh = conv.out_size(7);
        for b in 0..2 {
            for co in 0..3 {
                for oy in 0..oh {
                    for ox in 0..oh {
                        let mut acc = bias[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let row = (ci * 3 + ky) * 3 + kx;
                                    acc += w[(co, row)] * x[(b, ci, oy * 2 + ky, ox * 2 + kx)];
                                }
                            }
                        }
                        let got = y[(b, co, oy, ox)];
                        assert!((got - acc).abs() < 1e-12, "mismatch at {b},{co},{oy},{ox}");
                    }
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes_each_range() {
        let mut bn = BatchNorm::new(2);
        let x = array![[1.0, 10.0], [3.0, 30.0], [100.0, 0.0], [104.0, 2.0]];
        let (y, ctx) = bn.forward(&x, &[0..2, 2..4], Mode::Train { update_running: false });
        let ctx = ctx.unwrap();
        // each range has mean ~0 per feature after normalization
        for range in &ctx.ranges {
            let block = y.slice(ndarray::s![range.clone(), ..]);
            for f in 0..2 {
                let mean: f64 = block.column(f).sum() / 2.0;
                assert!(mean.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_eval_is_deterministic_affine() {
        let mut bn = BatchNorm::new(2);
        let x = array![[1.0, 2.0], [5.0, -1.0]];
        let (y1, _) = bn.forward(&x, &[0..2], Mode::Eval);
        let (y2, _) = bn.forward(&x, &[0..2], Mode::Eval);
        assert_eq!(y1, y2);
        // fresh stats: mean 0, var 1 => identity up to eps
        assert!((y1[(0, 0)] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0, -1.0]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }
}
