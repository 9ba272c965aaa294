use ndarray::ArrayD;

use crate::nn::Network;

/// Adam with bias correction; one instance per parameter group so the
/// encoder can be stepped by both losses of a training cycle.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(net: &mut dyn Network) -> Adam {
        let shapes: Vec<_> = net.params().iter().map(|p| p.value.raw_dim()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step(&mut self, net: &mut dyn Network, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (param, (m, v)) in net.params().into_iter().zip(self.m.iter_mut().zip(&mut self.v)) {
            let g = param.grad.view();
            let gs = g.as_slice().expect("standard layout");
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let ps = param.value.as_slice_mut().unwrap();
            for i in 0..gs.len() {
                let gi = gs[i];
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gi;
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                ps[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            param.grad.fill(0.0);
        }
    }
}
