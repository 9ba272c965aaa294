use ndarray::{Array2, ArrayD};
use rand::Rng;

use super::layers::{relu, relu_backward, Linear};
use super::{Network, Param, ENCODING_DIM};

/// Spatial action head: 512 -> 64 -> 32 -> 4 with ReLU on the hidden layers
/// and tanh on the output, bounding predictions to the design space.
#[derive(Debug, Clone)]
pub struct SpatialNet {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

pub struct SpatialCtx {
    enc: Array2<f64>,
    r1: Array2<f64>,
    r2: Array2<f64>,
    out: Array2<f64>,
}

impl SpatialNet {
    pub fn new(rng: &mut impl Rng) -> SpatialNet {
        SpatialNet {
            l1: Linear::new(ENCODING_DIM, 64, rng),
            l2: Linear::new(64, 32, rng),
            l3: Linear::new(32, 4, rng),
        }
    }

    pub fn forward(&self, enc: &Array2<f64>) -> (Array2<f64>, SpatialCtx) {
        let r1 = relu(&self.l1.forward(enc.view()));
        let r2 = relu(&self.l2.forward(r1.view()));
        let out = self.l3.forward(r2.view()).mapv(f64::tanh);
        (out.clone(), SpatialCtx { enc: enc.clone(), r1, r2, out })
    }

    /// Returns the gradient with respect to the encoding.
    pub fn backward(&mut self, ctx: &SpatialCtx, dout: &Array2<f64>) -> Array2<f64> {
        let mut dpre = dout.clone();
        dpre.zip_mut_with(&ctx.out, |d, &y| *d *= 1.0 - y * y);
        let dr2 = self.l3.backward(ctx.r2.view(), dpre.view());
        let dpre2 = relu_backward(&ctx.r2, &dr2);
        let dr1 = self.l2.backward(ctx.r1.view(), dpre2.view());
        let dpre1 = relu_backward(&ctx.r1, &dr1);
        self.l1.backward(ctx.enc.view(), dpre1.view())
    }
}

impl Network for SpatialNet {
    fn params(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.l1.w,
            &mut self.l1.b,
            &mut self.l2.w,
            &mut self.l2.b,
            &mut self.l3.w,
            &mut self.l3.b,
        ]
    }

    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        Vec::new()
    }

    fn descriptor(&self) -> String {
        format!(
            "spatial[{},{},{},tanh]",
            self.l1.descriptor(),
            self.l2.descriptor(),
            self.l3.descriptor()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_predict_the_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = SpatialNet::new(&mut rng);
        for p in net.params() {
            p.value.fill(0.0);
        }
        let enc = Array2::zeros((1, ENCODING_DIM));
        let (out, _) = net.forward(&enc);
        assert_eq!(out.row(0).to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn outputs_stay_strictly_inside_unit_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SpatialNet::new(&mut rng);
        for trial in 0..20 {
            let enc = Array2::from_shape_fn((1, ENCODING_DIM), |(_, j)| {
                ((j * 31 + trial * 17) % 13) as f64 * 10.0 - 60.0
            });
            let (out, _) = net.forward(&enc);
            assert!(out.iter().all(|v| v.abs() < 1.0));
        }
    }
}
