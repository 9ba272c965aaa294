use ndarray::{Array1, Array2, ArrayD, Axis};
use rand::Rng;

use super::layers::Mode;
use super::selection::ActionFeatures;
use super::{Encoder, Network, Param, SelectionNet, SpatialNet, SpatialPrediction};
use crate::env::{DesignImage, TrussState};
use crate::sampler::{FeasibleActionSet, SamplerError, SpatialRegion};

/// The full hierarchical policy: encoder, spatial action head and selection
/// head over one shared state encoding.
#[derive(Debug, Clone)]
pub struct DsnModel {
    pub encoder: Encoder,
    pub spatial: SpatialNet,
    pub selection: SelectionNet,
}

impl DsnModel {
    pub fn new(rng: &mut impl Rng) -> DsnModel {
        DsnModel {
            encoder: Encoder::new(rng),
            spatial: SpatialNet::new(rng),
            selection: SelectionNet::new(rng),
        }
    }

    /// Evaluation-mode encoding of a single image.
    pub fn encode_one(&self, image: &DesignImage) -> Array1<f64> {
        let x = image.to_network_input().insert_axis(Axis(0));
        let (enc, _) = self.encoder.forward(&x);
        enc.row(0).to_owned()
    }

    /// Evaluation-mode encodings for a batch of images.
    pub fn encode_batch(&self, images: &[&DesignImage]) -> Array2<f64> {
        let mut x = ndarray::Array4::zeros((images.len(), 3, 128, 128));
        for (i, img) in images.iter().enumerate() {
            x.index_axis_mut(Axis(0), i).assign(&img.to_network_input());
        }
        let (enc, _) = self.encoder.forward(&x);
        enc
    }

    pub fn predict_region_one(&self, enc: &Array1<f64>) -> SpatialPrediction {
        let (out, _) = self.spatial.forward(&enc.clone().insert_axis(Axis(0)));
        [out[(0, 0)], out[(0, 1)], out[(0, 2)], out[(0, 3)]]
    }

    /// Evaluation-mode action distribution over a feasible set.
    pub fn select_one(&mut self, enc: &Array1<f64>, set: &FeasibleActionSet) -> Array1<f64> {
        let feats = ActionFeatures::from_actions(&set.actions);
        self.selection.forward_one(enc, &feats, Mode::Eval)
    }

    pub fn total_params(&mut self) -> usize {
        super::param_count(&mut self.encoder)
            + super::param_count(&mut self.spatial)
            + super::param_count(&mut self.selection)
    }
}

impl Network for DsnModel {
    fn params(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params();
        v.extend(self.spatial.params());
        v.extend(self.selection.params());
        v
    }

    fn buffers(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut v = self.encoder.buffers();
        v.extend(self.spatial.buffers());
        v.extend(self.selection.buffers());
        v
    }

    fn descriptor(&self) -> String {
        format!(
            "dsn/v1 {} {} {}",
            self.encoder.descriptor(),
            self.spatial.descriptor(),
            self.selection.descriptor()
        )
    }
}

/// One full inference step: encode the state image, predict the spatial
/// region, query the environment for feasible actions in that region, and
/// score them. The arg-max of the returned distribution is the top-1 action
/// prediction.
pub fn dsn_forward<F>(
    model: &mut DsnModel,
    image: &DesignImage,
    state: &TrussState,
    env_query: F,
) -> Result<(SpatialPrediction, FeasibleActionSet, Array1<f64>), SamplerError>
where
    F: FnOnce(&TrussState, &SpatialRegion) -> Result<FeasibleActionSet, SamplerError>,
{
    let enc = model.encode_one(image);
    let pred = model.predict_region_one(&enc);
    let region = SpatialRegion::from_params(pred);
    let set = env_query(state, &region)?;
    let dist = model.select_one(&enc, &set);
    Ok((pred, set, dist))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{render, ProblemConfig, TrussState};
    use crate::sampler::{sample_feasible, SamplerConfig};

    #[test]
    fn forward_composes_the_sampler_contract() {
        let state = TrussState::initial(Arc::new(ProblemConfig::default())).unwrap();
        let image = render(&state);
        let mut model = DsnModel::new(&mut ChaCha8Rng::seed_from_u64(0));
        let cfg = SamplerConfig::default();

        let run = |model: &mut DsnModel| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            dsn_forward(model, &image, &state, |s, r| sample_feasible(s, r, &cfg, &mut rng))
                .unwrap()
        };
        let (p1, set1, d1) = run(&mut model);
        let (p2, set2, d2) = run(&mut model);
        assert_eq!(p1, p2);
        assert_eq!(set1, set2);
        assert_eq!(d1, d2);

        // the returned set equals sampling from the predicted region directly
        let enc = model.encode_one(&image);
        let pred = model.predict_region_one(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let direct =
            sample_feasible(&state, &SpatialRegion::from_params(pred), &cfg, &mut rng).unwrap();
        assert_eq!(set1, direct);
        assert_eq!(d1.len(), set1.len());
        assert!((d1.sum() - 1.0).abs() < 1e-6);
        assert!(pred.iter().all(|v| v.abs() < 1.0));
    }
}
