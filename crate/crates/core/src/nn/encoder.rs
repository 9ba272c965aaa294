use ndarray::{Array2, Array4, ArrayD};
use rand::Rng;

use super::layers::{relu, relu_backward, Conv2d, Linear};
use super::{Network, Param, ENCODING_DIM};

/// Image size and derived flatten width for the 128x128 input.
const INPUT: usize = 128;
const FLAT: usize = 64 * 12 * 12;

/// Convolutional state encoder: three convolutions with decreasing kernels
/// (8, 4, 3) and strides (4, 2, 1), channels 3 -> 32 -> 64 -> 64, then a
/// fully connected layer to the 512-unit encoding. ReLU throughout.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub fc: Linear,
}

/// Intermediate activations needed by the backward pass.
pub struct EncoderCtx {
    x_dim: (usize, usize, usize, usize),
    cols1: Array2<f64>,
    r1: Array4<f64>,
    cols2: Array2<f64>,
    r2: Array4<f64>,
    cols3: Array2<f64>,
    r3_flat: Array2<f64>,
    enc: Array2<f64>,
}

impl Encoder {
    pub fn new(rng: &mut impl Rng) -> Encoder {
        Encoder {
            conv1: Conv2d::new(3, 32, 8, 4, rng),
            conv2: Conv2d::new(32, 64, 4, 2, rng),
            conv3: Conv2d::new(64, 64, 3, 1, rng),
            fc: Linear::new(FLAT, ENCODING_DIM, rng),
        }
    }

    /// `x` is (B, 3, 128, 128) in [0, 1]; returns (B, 512).
    pub fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, EncoderCtx) {
        debug_assert_eq!(x.dim().2, INPUT);
        let (c1, cols1) = self.conv1.forward(x);
        let r1 = c1.mapv(|v| v.max(0.0));
        let (c2, cols2) = self.conv2.forward(&r1);
        let r2 = c2.mapv(|v| v.max(0.0));
        let (c3, cols3) = self.conv3.forward(&r2);
        let r3 = c3.mapv(|v| v.max(0.0));
        let batch = x.dim().0;
        let r3_flat = r3.into_shape_with_order((batch, FLAT)).unwrap();
        let pre = self.fc.forward(r3_flat.view());
        let enc = relu(&pre);
        (
            enc.clone(),
            EncoderCtx { x_dim: x.dim(), cols1, r1, cols2, r2, cols3, r3_flat, enc },
        )
    }

    /// Accumulates parameter gradients; the image gradient is never needed.
    pub fn backward(&mut self, ctx: &EncoderCtx, denc: &Array2<f64>) {
        let dpre = relu_backward(&ctx.enc, denc);
        let dflat = self.fc.backward(ctx.r3_flat.view(), dpre.view());
        let batch = ctx.x_dim.0;
        let dr3 = dflat.into_shape_with_order((batch, 64, 12, 12)).unwrap();
        // relu mask: r3_flat holds the post-relu values
        let mut dc3 = dr3;
        {
            let flat = ctx.r3_flat.as_slice().unwrap();
            let d = dc3.as_slice_mut().unwrap();
            for (dv, &v) in d.iter_mut().zip(flat) {
                if v <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let dr2 = self
            .conv3
            .backward(&ctx.cols3, ctx.r2.dim(), &dc3, true)
            .expect("dx requested");
        let mut dc2 = dr2;
        mask_relu4(&mut dc2, &ctx.r2);
        let dr1 = self
            .conv2
            .backward(&ctx.cols2, ctx.r1.dim(), &dc2, true)
            .expect("dx requested");
        let mut dc1 = dr1;
        mask_relu4(&mut dc1, &ctx.r1);
        self.conv1.backward(&ctx.cols1, ctx.x_dim, &dc1, false);
    }
}

fn mask_relu4(d: &mut Array4<f64>, y: &Array4<f64>) {
    let ds = d.as_slice_mut().unwrap();
    let ys = y.as_slice().unwrap();
    for (dv, &v) in ds.iter_mut().zip(ys) {
        if v <= 0.0 {
            *dv = 0.0;
        }
    }
}

impl Network for Encoder {
    fn params(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.conv2.w,
            &mut self.conv2.b,
            &mut self.conv3.w,
            &mut self.conv3.b,
            &mut self.fc.w,
            &mut self.fc.b,
        ]
    }

    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        Vec::new()
    }

    fn descriptor(&self) -> String {
        format!(
            "encoder[{},{},{},{},relu]",
            self.conv1.descriptor(),
            self.conv2.descriptor(),
            self.conv3.descriptor(),
            self.fc.descriptor()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_image_with_zero_bias_encodes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = Encoder::new(&mut rng);
        enc.conv1.b.value.fill(0.0);
        enc.conv2.b.value.fill(0.0);
        enc.conv3.b.value.fill(0.0);
        enc.fc.b.value.fill(0.0);
        let x = Array4::zeros((1, 3, 128, 128));
        let (e, _) = enc.forward(&x);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::new(&mut rng);
        let x = Array4::from_shape_fn((1, 3, 128, 128), |(_, c, i, j)| {
            ((c + i + j) % 7) as f64 / 7.0
        });
        let (a, _) = enc.forward(&x);
        let (b, _) = enc.forward(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = Encoder::new(&mut rng);
        let expected = 32 * 3 * 8 * 8
            + 32
            + 64 * 32 * 4 * 4
            + 64
            + 64 * 64 * 3 * 3
            + 64
            + FLAT * ENCODING_DIM
            + ENCODING_DIM;
        assert_eq!(super::super::param_count(&mut enc), expected);
    }
}
