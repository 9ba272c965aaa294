//! Networks with explicit forward and backward passes.
//!
//! Everything is `f64` and deterministic: given the same parameters and
//! inputs, forwards and backwards reproduce bit-identical results, which the
//! reproducibility guarantees of the training pipeline rely on.

mod checkpoint;
mod dsn;
mod encoder;
mod gradcheck;
mod layers;
mod selection;
mod spatial;

pub use checkpoint::{
    descriptor_hash, load_network, read_checkpoint_bytes, save_network, CheckpointError,
    CheckpointFile,
};
pub use dsn::{dsn_forward, DsnModel};
pub use encoder::{Encoder, EncoderCtx};
pub use gradcheck::max_gradient_error;
pub use layers::{relu, relu_backward, softmax, BatchNorm, BnCtx, Conv2d, Linear, Mode};
pub use selection::{ActionFeatures, SelectionCtx, SelectionNet};
pub use spatial::{SpatialCtx, SpatialNet};

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;

/// Latent state-encoding width shared by all heads.
pub const ENCODING_DIM: usize = 512;

pub type StateEncoding = Array1<f64>;
/// Four bounded spatial parameters: two (x, y) control points.
pub type SpatialPrediction = [f64; 4];
/// Probabilities aligned with a feasible action set.
pub type ActionDistribution = Array1<f64>;

/// A learned tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    /// Symmetric uniform init scaled by fan-in.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Param {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound));
        let grad = ArrayD::zeros(IxDyn(shape));
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Param {
        Param { value: ArrayD::zeros(IxDyn(shape)), grad: ArrayD::zeros(IxDyn(shape)) }
    }

    pub fn ones(shape: &[usize]) -> Param {
        Param { value: ArrayD::from_elem(IxDyn(shape), 1.0), grad: ArrayD::zeros(IxDyn(shape)) }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        self.value.view().into_dimensionality().expect("2-d param")
    }

    pub fn view1(&self) -> ndarray::ArrayView1<'_, f64> {
        self.value.view().into_dimensionality().expect("1-d param")
    }
}

/// Anything with an ordered parameter list, optional buffers (running
/// statistics), and a stable architecture descriptor.
pub trait Network {
    fn params(&mut self) -> Vec<&mut Param>;
    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        Vec::new()
    }
    fn descriptor(&self) -> String;
}

pub fn param_count(net: &mut dyn Network) -> usize {
    net.params().iter().map(|p| p.len()).sum()
}

pub fn zero_grads(net: &mut dyn Network) {
    for p in net.params() {
        p.grad.fill(0.0);
    }
}

/// Flat read across the declared parameter order.
pub fn get_flat(net: &mut dyn Network, index: usize) -> f64 {
    let (p, off) = locate(net, index);
    *p.value.as_slice().expect("standard layout").get(off).unwrap()
}

pub fn set_flat(net: &mut dyn Network, index: usize, v: f64) {
    let (p, off) = locate(net, index);
    p.value.as_slice_mut().expect("standard layout")[off] = v;
}

pub fn grad_flat(net: &mut dyn Network, index: usize) -> f64 {
    let (p, off) = locate(net, index);
    p.grad.as_slice().expect("standard layout")[off]
}

fn locate(net: &mut dyn Network, mut index: usize) -> (&mut Param, usize) {
    for p in net.params() {
        if index < p.len() {
            return (p, index);
        }
        index -= p.len();
    }
    panic!("flat parameter index out of range");
}

/// Matrix product with deterministic fixed-chunk parallelism. Output values
/// are independent of scheduling because every chunk is an independent
/// sub-product with a fixed boundary.
pub(crate) fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    const CHUNK: usize = 512;
    let (m, n) = (a.nrows(), b.ncols());
    if n >= 2 * CHUNK {
        let mut out = Array2::zeros((m, n));
        out.axis_chunks_iter_mut(Axis(1), CHUNK)
            .into_par_iter()
            .zip(b.axis_chunks_iter(Axis(1), CHUNK).into_par_iter())
            .for_each(|(mut oc, bc)| oc.assign(&a.dot(&bc)));
        out
    } else if m >= 2 * CHUNK {
        let mut out = Array2::zeros((m, n));
        out.axis_chunks_iter_mut(Axis(0), CHUNK)
            .into_par_iter()
            .zip(a.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
            .for_each(|(mut oc, ac)| oc.assign(&ac.dot(&b)));
        out
    } else {
        a.dot(&b)
    }
}
