//! Non-hierarchical imitation baseline.
//!
//! A single convolutional trunk regresses the action label and the four
//! spatial parameters directly from the state image. It knows nothing about
//! feasibility, so its raw prediction is projected onto a sampled feasible
//! set by Euclidean distance before it can act.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use rand::Rng;

use crate::env::{ActionLabel, DesignAction, DesignImage, TrussState};
use crate::nn::{relu, relu_backward, Conv2d, Linear, Network, Param};
use crate::sampler::{
    sample_feasible, FeasibleActionSet, SamplerConfig, SamplerError, SpatialRegion,
};

const FLAT: usize = 64 * 12 * 12;

/// Atari-style trunk: the same three convolutions as the encoder reduce the
/// 128x128x3 image to a 12x12 map, a shared linear layer produces a 512-wide
/// trunk feature, and two heads emit 3 label logits and 4 tanh-bounded
/// spatial parameters.
#[derive(Debug, Clone)]
pub struct ImitationNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub shared: Linear,
    pub head_label: Linear,
    pub head_params: Linear,
}

pub struct ImitationCtx {
    x_dim: (usize, usize, usize, usize),
    cols1: Array2<f64>,
    r1: Array4<f64>,
    cols2: Array2<f64>,
    r2: Array4<f64>,
    cols3: Array2<f64>,
    r3_flat: Array2<f64>,
    trunk: Array2<f64>,
    params_out: Array2<f64>,
}

impl ImitationNet {
    pub fn new(rng: &mut impl Rng) -> ImitationNet {
        ImitationNet {
            conv1: Conv2d::new(3, 32, 8, 4, rng),
            conv2: Conv2d::new(32, 64, 4, 2, rng),
            conv3: Conv2d::new(64, 64, 3, 1, rng),
            shared: Linear::new(FLAT, 512, rng),
            head_label: Linear::new(512, 3, rng),
            head_params: Linear::new(512, 4, rng),
        }
    }

    /// Returns (label logits (B, 3), spatial params (B, 4) in (-1, 1)).
    pub fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, Array2<f64>, ImitationCtx) {
        let (c1, cols1) = self.conv1.forward(x);
        let r1 = c1.mapv(|v| v.max(0.0));
        let (c2, cols2) = self.conv2.forward(&r1);
        let r2 = c2.mapv(|v| v.max(0.0));
        let (c3, cols3) = self.conv3.forward(&r2);
        let r3 = c3.mapv(|v| v.max(0.0));
        let batch = x.dim().0;
        let r3_flat = r3.into_shape_with_order((batch, FLAT)).unwrap();
        let trunk = relu(&self.shared.forward(r3_flat.view()));
        let logits = self.head_label.forward(trunk.view());
        let params_out = self.head_params.forward(trunk.view()).mapv(f64::tanh);
        let ctx = ImitationCtx {
            x_dim: x.dim(),
            cols1,
            r1,
            cols2,
            r2,
            cols3,
            r3_flat,
            trunk,
            params_out: params_out.clone(),
        };
        (logits, params_out, ctx)
    }

    pub fn forward_one(&self, image: &DesignImage) -> (Array1<f64>, [f64; 4]) {
        let x = image.to_network_input().insert_axis(Axis(0));
        let (logits, params, _) = self.forward(&x);
        (
            logits.row(0).to_owned(),
            [params[(0, 0)], params[(0, 1)], params[(0, 2)], params[(0, 3)]],
        )
    }

    pub fn backward(&mut self, ctx: &ImitationCtx, dlogits: &Array2<f64>, dparams: &Array2<f64>) {
        let mut dpre_params = dparams.clone();
        dpre_params.zip_mut_with(&ctx.params_out, |d, &y| *d *= 1.0 - y * y);
        let dtrunk_a = self.head_label.backward(ctx.trunk.view(), dlogits.view());
        let dtrunk_b = self.head_params.backward(ctx.trunk.view(), dpre_params.view());
        let dtrunk = relu_backward(&ctx.trunk, &(dtrunk_a + dtrunk_b));
        let dflat = self.shared.backward(ctx.r3_flat.view(), dtrunk.view());
        let batch = ctx.x_dim.0;
        let mut dc3 = dflat.into_shape_with_order((batch, 64, 12, 12)).unwrap();
        {
            let flat = ctx.r3_flat.as_slice().unwrap();
            let d = dc3.as_slice_mut().unwrap();
            for (dv, &v) in d.iter_mut().zip(flat) {
                if v <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let mut dc2 = self.conv3.backward(&ctx.cols3, ctx.r2.dim(), &dc3, true).unwrap();
        mask4(&mut dc2, &ctx.r2);
        let mut dc1 = self.conv2.backward(&ctx.cols2, ctx.r1.dim(), &dc2, true).unwrap();
        mask4(&mut dc1, &ctx.r1);
        self.conv1.backward(&ctx.cols1, ctx.x_dim, &dc1, false);
    }
}

fn mask4(d: &mut Array4<f64>, y: &Array4<f64>) {
    let ds = d.as_slice_mut().unwrap();
    let ys = y.as_slice().unwrap();
    for (dv, &v) in ds.iter_mut().zip(ys) {
        if v <= 0.0 {
            *dv = 0.0;
        }
    }
}

impl Network for ImitationNet {
    fn params(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.conv2.w,
            &mut self.conv2.b,
            &mut self.conv3.w,
            &mut self.conv3.b,
            &mut self.shared.w,
            &mut self.shared.b,
            &mut self.head_label.w,
            &mut self.head_label.b,
            &mut self.head_params.w,
            &mut self.head_params.b,
        ]
    }

    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        Vec::new()
    }

    fn descriptor(&self) -> String {
        format!(
            "imitation/v1 [{},{},{},{},heads(3,4),tanh]",
            self.conv1.descriptor(),
            self.conv2.descriptor(),
            self.conv3.descriptor(),
            self.shared.descriptor()
        )
    }
}

/// Euclidean distance in padded parameter space.
pub fn action_distance(pred_params: &[f64; 4], action: &DesignAction) -> f64 {
    pred_params
        .iter()
        .zip(&action.params)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Nearest feasible action to a raw (logits, params) prediction within `set`.
/// The label prediction only breaks exact distance ties.
pub fn nearest_in_set(
    logits: &Array1<f64>,
    params: &[f64; 4],
    set: &FeasibleActionSet,
) -> DesignAction {
    let pred_label = argmax(logits);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, a) in set.actions.iter().enumerate() {
        let d = action_distance(params, a);
        let better = d < best_d
            || (d == best_d
                && label_tie_rank(a.label, pred_label) < label_tie_rank(set.actions[best].label, pred_label));
        if better {
            best = i;
            best_d = d;
        }
    }
    set.actions[best]
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn label_tie_rank(label: ActionLabel, predicted: usize) -> usize {
    if label.index() == predicted {
        0
    } else {
        1 + label.index()
    }
}

/// Project a raw prediction onto the environment: build a region from the
/// predicted control points, sample a feasible set there, and return the
/// nearest element.
pub fn project_to_feasible(
    logits: &Array1<f64>,
    params: &[f64; 4],
    state: &TrussState,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<DesignAction, SamplerError> {
    let region = SpatialRegion::from_params(*params);
    let set = sample_feasible(state, &region, cfg, rng)?;
    Ok(nearest_in_set(logits, params, &set))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::ProblemConfig;
    use crate::nn::param_count;

    #[test]
    fn zero_everything_emits_zero_predictions() {
        let mut net = ImitationNet::new(&mut ChaCha8Rng::seed_from_u64(0));
        for p in net.params() {
            p.value.fill(0.0);
        }
        let x = Array4::zeros((1, 3, 128, 128));
        let (logits, params, _) = net.forward(&x);
        assert!(logits.iter().all(|&v| v == 0.0));
        assert!(params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_are_independent_of_each_other() {
        let mut net = ImitationNet::new(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Array4::from_shape_fn((1, 3, 128, 128), |(_, c, i, j)| {
            ((c * 37 + i * 13 + j) % 11) as f64 / 11.0
        });
        let (logits_before, _, _) = net.forward(&x);
        net.head_params.w.value.fill(0.0);
        net.head_params.b.value.fill(0.0);
        let (logits_after, params, _) = net.forward(&x);
        assert_eq!(logits_before, logits_after);
        assert!(params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_matches_the_reported_scale() {
        let mut net = ImitationNet::new(&mut ChaCha8Rng::seed_from_u64(2));
        let n = param_count(&mut net) as f64;
        // ~4.8 million parameters
        assert!((n - 4.8e6).abs() / 4.8e6 < 0.10, "imitation params {n}");
    }

    #[test]
    fn projection_returns_set_elements_and_minimizes_distance() {
        let state =
            crate::env::TrussState::initial(Arc::new(ProblemConfig::default())).unwrap();
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array1::from_vec(vec![0.2, 0.5, 0.3]);
        let params = [0.1, 0.2, -0.4, 0.1];
        let region = SpatialRegion::from_params(params);
        let set = sample_feasible(&state, &region, &cfg, &mut rng).unwrap();
        let picked = nearest_in_set(&logits, &params, &set);
        assert!(set.actions.contains(&picked));
        // brute-force check
        let best = set
            .actions
            .iter()
            .map(|a| action_distance(&params, a))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(action_distance(&params, &picked), best);
    }

    #[test]
    fn exact_parameter_match_wins() {
        let state =
            crate::env::TrussState::initial(Arc::new(ProblemConfig::default())).unwrap();
        let a = state.nodes()[0].pos();
        let b = state.nodes()[1].pos();
        let truth = DesignAction::add_member(a, b);
        let set = FeasibleActionSet {
            actions: vec![DesignAction::add_node(0.5, 0.5), truth, DesignAction::add_node(-0.5, 0.5)],
        };
        let logits = Array1::from_vec(vec![1.0, 0.0, 0.0]);
        let picked = nearest_in_set(&logits, &truth.params, &set);
        assert_eq!(picked, truth);
    }

    #[test]
    fn singleton_set_is_returned_unconditionally() {
        let set = FeasibleActionSet { actions: vec![DesignAction::add_node(0.9, 0.9)] };
        let logits = Array1::from_vec(vec![0.0, 0.0, 1.0]);
        let picked = nearest_in_set(&logits, &[-0.9, -0.9, -0.9, -0.9], &set);
        assert_eq!(picked, set.actions[0]);
    }
}
