use ndarray::{s, Array1, Array2, ArrayD, Axis};
use rand::Rng;
use std::ops::Range;

use super::layers::{relu, relu_backward, softmax, BatchNorm, BnCtx, Linear, Mode};
use super::{Network, Param, ENCODING_DIM};

/// Set-invariant selection head.
///
/// Every action in a feasible set is transformed with shared weights: the
/// four spatial parameters go through 64-128-256-256, the one-hot label
/// through a single 3-64 layer; both concatenate to 320 and embed to 512.
/// Each action embedding is then joined with the 512-unit state encoding and
/// the 1024-wide pair representation is reduced 512-128-32. Every
/// transformation is followed by batch norm and ReLU. A 32-wide average pool
/// leaves one scalar per action and a softmax over the set yields the
/// distribution, which makes the whole head permutation-equivariant.
#[derive(Debug, Clone)]
pub struct SelectionNet {
    pub sp1: Linear,
    pub sp2: Linear,
    pub sp3: Linear,
    pub sp4: Linear,
    pub lab: Linear,
    pub emb: Linear,
    pub pair1: Linear,
    pub pair2: Linear,
    pub pair3: Linear,
    pub bn_sp1: BatchNorm,
    pub bn_sp2: BatchNorm,
    pub bn_sp3: BatchNorm,
    pub bn_sp4: BatchNorm,
    pub bn_lab: BatchNorm,
    pub bn_emb: BatchNorm,
    pub bn_pair1: BatchNorm,
    pub bn_pair2: BatchNorm,
    pub bn_pair3: BatchNorm,
}

/// One action set's features: spatial params plus one-hot labels, one row
/// per action.
#[derive(Debug, Clone)]
pub struct ActionFeatures {
    pub params: Vec<[f64; 4]>,
    pub labels: Vec<usize>,
}

impl ActionFeatures {
    pub fn from_actions(actions: &[crate::env::DesignAction]) -> ActionFeatures {
        ActionFeatures {
            params: actions.iter().map(|a| a.params).collect(),
            labels: actions.iter().map(|a| a.label.index()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

struct Stage {
    x_in: Array2<f64>,
    bn: Option<BnCtx>,
    act: Array2<f64>,
}

pub struct SelectionCtx {
    ranges: Vec<Range<usize>>,
    stages: Vec<Stage>,
    probs: Vec<Array1<f64>>,
    mode: Mode,
}

impl SelectionNet {
    pub fn new(rng: &mut impl Rng) -> SelectionNet {
        SelectionNet {
            sp1: Linear::new(4, 64, rng),
            sp2: Linear::new(64, 128, rng),
            sp3: Linear::new(128, 256, rng),
            sp4: Linear::new(256, 256, rng),
            lab: Linear::new(3, 64, rng),
            emb: Linear::new(320, 512, rng),
            pair1: Linear::new(2 * ENCODING_DIM, 512, rng),
            pair2: Linear::new(512, 128, rng),
            pair3: Linear::new(128, 32, rng),
            bn_sp1: BatchNorm::new(64),
            bn_sp2: BatchNorm::new(128),
            bn_sp3: BatchNorm::new(256),
            bn_sp4: BatchNorm::new(256),
            bn_lab: BatchNorm::new(64),
            bn_emb: BatchNorm::new(512),
            bn_pair1: BatchNorm::new(512),
            bn_pair2: BatchNorm::new(128),
            bn_pair3: BatchNorm::new(32),
        }
    }

    /// Forward over a batch of action sets. `encs` is (B, 512) with one row
    /// per set. Batch statistics are computed within each set independently.
    pub fn forward_sets(
        &mut self,
        encs: &Array2<f64>,
        sets: &[ActionFeatures],
        mode: Mode,
    ) -> (Vec<Array1<f64>>, SelectionCtx) {
        assert_eq!(encs.nrows(), sets.len());
        let mut ranges = Vec::with_capacity(sets.len());
        let mut total = 0;
        for set in sets {
            assert!(!set.is_empty(), "action set must be non-empty");
            ranges.push(total..total + set.len());
            total += set.len();
        }
        let mut p_sp = Array2::zeros((total, 4));
        let mut p_lab = Array2::zeros((total, 3));
        {
            let mut row = 0;
            for set in sets {
                for (p, &l) in set.params.iter().zip(&set.labels) {
                    for k in 0..4 {
                        p_sp[(row, k)] = p[k];
                    }
                    p_lab[(row, l)] = 1.0;
                    row += 1;
                }
            }
        }

        let mut stages: Vec<Stage> = Vec::with_capacity(9);
        let mut stage = |lin: &Linear, bn: &mut BatchNorm, x_in: Array2<f64>| -> Array2<f64> {
            let z = lin.forward(x_in.view());
            let (y, bn_ctx) = bn.forward(&z, &ranges, mode);
            let act = relu(&y);
            stages.push(Stage { x_in, bn: bn_ctx, act: act.clone() });
            act
        };

        let a1 = stage(&self.sp1, &mut self.bn_sp1, p_sp);
        let a2 = stage(&self.sp2, &mut self.bn_sp2, a1);
        let a3 = stage(&self.sp3, &mut self.bn_sp3, a2);
        let a4 = stage(&self.sp4, &mut self.bn_sp4, a3);
        let al = stage(&self.lab, &mut self.bn_lab, p_lab);

        let mut cat1 = Array2::zeros((total, 320));
        cat1.slice_mut(s![.., 0..256]).assign(&a4);
        cat1.slice_mut(s![.., 256..320]).assign(&al);
        let ae = stage(&self.emb, &mut self.bn_emb, cat1);

        let mut cat2 = Array2::zeros((total, 2 * ENCODING_DIM));
        cat2.slice_mut(s![.., 0..ENCODING_DIM]).assign(&ae);
        for (i, range) in ranges.iter().enumerate() {
            let enc_row = encs.row(i);
            for r in range.clone() {
                cat2.slice_mut(s![r, ENCODING_DIM..]).assign(&enc_row);
            }
        }
        let ap1 = stage(&self.pair1, &mut self.bn_pair1, cat2);
        let ap2 = stage(&self.pair2, &mut self.bn_pair2, ap1);
        let ap3 = stage(&self.pair3, &mut self.bn_pair3, ap2);

        // 32-wide average pool to one scalar per action, then softmax per set
        let scores: Vec<f64> = ap3.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let probs: Vec<Array1<f64>> =
            ranges.iter().map(|r| softmax(&scores[r.clone()])).collect();
        let ctx = SelectionCtx { ranges, stages, probs: probs.clone(), mode };
        (probs, ctx)
    }

    /// Distribution over a single action set (evaluation-style convenience).
    pub fn forward_one(
        &mut self,
        enc: &Array1<f64>,
        set: &ActionFeatures,
        mode: Mode,
    ) -> Array1<f64> {
        let encs = enc.clone().insert_axis(Axis(0));
        let (probs, _) = self.forward_sets(&encs, std::slice::from_ref(set), mode);
        probs.into_iter().next().unwrap()
    }

    /// Backward from per-set probability gradients; returns the gradient of
    /// the state encodings (B, 512).
    pub fn backward(&mut self, ctx: &SelectionCtx, dprobs: &[Array1<f64>]) -> Array2<f64> {
        assert!(ctx.mode.is_train(), "backward requires a training-mode context");
        let total = ctx.ranges.last().map_or(0, |r| r.end);
        // softmax backward per set -> score gradients
        let mut dscores = vec![0.0; total];
        for ((range, p), dp) in ctx.ranges.iter().zip(&ctx.probs).zip(dprobs) {
            let dot: f64 = p.iter().zip(dp.iter()).map(|(&pi, &di)| pi * di).sum();
            for (k, r) in range.clone().enumerate() {
                dscores[r] = p[k] * (dp[k] - dot);
            }
        }
        // average pool backward
        let mut d_act = Array2::from_elem((total, 32), 0.0);
        for r in 0..total {
            let g = dscores[r] / 32.0;
            d_act.row_mut(r).fill(g);
        }

        let back = |lin: &mut Linear, bn: &mut BatchNorm, stage: &Stage, d_out: Array2<f64>| {
            let dy = relu_backward(&stage.act, &d_out);
            let dz = bn.backward(stage.bn.as_ref().expect("train ctx"), &dy);
            lin.backward(stage.x_in.view(), dz.view())
        };

        let d_ap2 = back(&mut self.pair3, &mut self.bn_pair3, &ctx.stages[8], d_act);
        let d_ap1 = back(&mut self.pair2, &mut self.bn_pair2, &ctx.stages[7], d_ap2);
        let d_cat2 = back(&mut self.pair1, &mut self.bn_pair1, &ctx.stages[6], d_ap1);

        let d_ae = d_cat2.slice(s![.., 0..ENCODING_DIM]).to_owned();
        let mut d_encs = Array2::zeros((ctx.ranges.len(), ENCODING_DIM));
        for (i, range) in ctx.ranges.iter().enumerate() {
            for r in range.clone() {
                let row = d_cat2.slice(s![r, ENCODING_DIM..]);
                d_encs.row_mut(i).zip_mut_with(&row, |a, &b| *a += b);
            }
        }

        let d_cat1 = back(&mut self.emb, &mut self.bn_emb, &ctx.stages[5], d_ae);
        let d_a4 = d_cat1.slice(s![.., 0..256]).to_owned();
        let d_al = d_cat1.slice(s![.., 256..320]).to_owned();
        back(&mut self.lab, &mut self.bn_lab, &ctx.stages[4], d_al);
        let d_a3 = back(&mut self.sp4, &mut self.bn_sp4, &ctx.stages[3], d_a4);
        let d_a2 = back(&mut self.sp3, &mut self.bn_sp3, &ctx.stages[2], d_a3);
        let d_a1 = back(&mut self.sp2, &mut self.bn_sp2, &ctx.stages[1], d_a2);
        back(&mut self.sp1, &mut self.bn_sp1, &ctx.stages[0], d_a1);
        d_encs
    }

    fn linears(&self) -> [&Linear; 9] {
        [
            &self.sp1, &self.sp2, &self.sp3, &self.sp4, &self.lab, &self.emb, &self.pair1,
            &self.pair2, &self.pair3,
        ]
    }
}

impl Network for SelectionNet {
    fn params(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::with_capacity(36);
        let SelectionNet {
            sp1, sp2, sp3, sp4, lab, emb, pair1, pair2, pair3,
            bn_sp1, bn_sp2, bn_sp3, bn_sp4, bn_lab, bn_emb, bn_pair1, bn_pair2, bn_pair3,
        } = self;
        for lin in [sp1, sp2, sp3, sp4, lab, emb, pair1, pair2, pair3] {
            v.push(&mut lin.w);
            v.push(&mut lin.b);
        }
        for bn in [bn_sp1, bn_sp2, bn_sp3, bn_sp4, bn_lab, bn_emb, bn_pair1, bn_pair2, bn_pair3] {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }

    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        let SelectionNet {
            bn_sp1, bn_sp2, bn_sp3, bn_sp4, bn_lab, bn_emb, bn_pair1, bn_pair2, bn_pair3, ..
        } = self;
        let mut v = Vec::with_capacity(18);
        for bn in [bn_sp1, bn_sp2, bn_sp3, bn_sp4, bn_lab, bn_emb, bn_pair1, bn_pair2, bn_pair3] {
            v.push(&mut bn.running_mean);
            v.push(&mut bn.running_var);
        }
        v
    }

    fn descriptor(&self) -> String {
        let lins: Vec<String> = self.linears().iter().map(|l| l.descriptor()).collect();
        format!("selection[{},bn+relu each,avgpool32,softmax]", lins.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DesignAction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_set(n: usize) -> ActionFeatures {
        let actions: Vec<DesignAction> = (0..n)
            .map(|i| DesignAction::add_node(-0.9 + 0.08 * i as f64, 0.3))
            .collect();
        ActionFeatures::from_actions(&actions)
    }

    #[test]
    fn singleton_set_gets_probability_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = SelectionNet::new(&mut rng);
        let enc = Array1::from_elem(ENCODING_DIM, 0.3);
        let p = net.forward_one(&enc, &toy_set(1), Mode::Eval);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn permuting_the_set_permutes_the_distribution_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = SelectionNet::new(&mut rng);
        let enc = Array1::from_shape_fn(ENCODING_DIM, |i| (i % 5) as f64 * 0.21);
        let set = toy_set(7);
        let p = net.forward_one(&enc, &set, Mode::Eval);
        // reverse the set
        let rev = ActionFeatures {
            params: set.params.iter().rev().cloned().collect(),
            labels: set.labels.iter().rev().cloned().collect(),
        };
        let q = net.forward_one(&enc, &rev, Mode::Eval);
        for i in 0..7 {
            assert_eq!(p[i], q[6 - i]);
        }
    }

    #[test]
    fn duplicate_actions_get_equal_probability_in_eval_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = SelectionNet::new(&mut rng);
        let enc = Array1::from_shape_fn(ENCODING_DIM, |i| ((i * 7) % 3) as f64 * 0.4 - 0.2);
        let mut set = toy_set(5);
        set.params.push(set.params[1]);
        set.labels.push(set.labels[1]);
        let p = net.forward_one(&enc, &set, Mode::Eval);
        assert_eq!(p[1], p[5]);
    }

    #[test]
    fn distribution_sums_to_one_for_variable_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = SelectionNet::new(&mut rng);
        for n in [1usize, 2, 9, 50] {
            let enc = Array1::from_shape_fn(ENCODING_DIM, |i| (i as f64).sin());
            let p = net.forward_one(&enc, &toy_set(n), Mode::Eval);
            assert_eq!(p.len(), n);
            assert!((p.sum() - 1.0).abs() < 1e-6);
        }
    }
}
