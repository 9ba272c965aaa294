//! Spatial sampling of feasible actions.
//!
//! A predicted spatial region — a small mixture of isotropic Gaussians over
//! the design space — is turned into a bounded, variable-length set of
//! feasible actions by querying the environment: continuous actions are drawn
//! from the mixture, discrete actions are enumerated exhaustively and ranked
//! by their likelihood under the region.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    enumerate_discrete_actions, is_feasible, DesignAction, TrussState,
};

/// Centers of the region's Gaussian components, each in `[-1, 1]^2`.
///
/// The truss problem uses `S = 2` components, one per control point of an
/// action.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRegion {
    pub centers: Vec<(f64, f64)>,
}

impl SpatialRegion {
    /// Region from a 4-vector prediction: two (x, y) centers.
    pub fn from_params(p: [f64; 4]) -> Self {
        SpatialRegion { centers: vec![(p[0], p[1]), (p[2], p[3])] }
    }

    pub fn as_params(&self) -> [f64; 4] {
        let a = self.centers[0];
        let b = *self.centers.get(1).unwrap_or(&self.centers[0]);
        [a.0, a.1, b.0, b.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Number of Gaussian components in a region.
    pub s: usize,
    /// Hard cap on the feasible-set size.
    pub a_max: usize,
    /// Continuous actions drawn per set.
    pub n_continuous: usize,
    /// Standard deviation of each component. The region is nominally
    /// unit-variance in normalized space; over a [-1, 1] domain that is
    /// nearly flat, so the effective density width is configurable (set 1.0
    /// for the literal reading).
    pub sigma: f64,
    pub rng_seed: u64,
    /// Rejection-sampling budget per continuous slot; slots that exhaust it
    /// are dropped.
    pub max_rejections: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            s: 2,
            a_max: 50,
            n_continuous: 10,
            sigma: 0.15,
            rng_seed: 0,
            max_rejections: 50,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.s < 1 || self.n_continuous > self.a_max || !(self.sigma > 0.0) {
            return Err(SamplerError::InvalidConfig);
        }
        Ok(())
    }
}

/// Unordered set of feasible actions, `0 < len <= a_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleActionSet {
    pub actions: Vec<DesignAction>,
}

impl FeasibleActionSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn position_of(&self, action: &DesignAction) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no feasible action exists in this state")]
    EmptyActionSet,
    #[error("invalid sampler config")]
    InvalidConfig,
}

fn gaussian_density(p: (f64, f64), c: (f64, f64), sigma: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let d2 = (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
    norm * (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Likelihood of an action's control points under the region: the best
/// assignment of the two points to two region centers, as a product of
/// per-point isotropic Gaussian densities. Symmetric under swapping the
/// control points and under swapping centers.
pub fn region_density(params: [f64; 4], region: &SpatialRegion, cfg: &SamplerConfig) -> f64 {
    let p1 = (params[0], params[1]);
    let p2 = (params[2], params[3]);
    let cs = &region.centers;
    if cs.len() == 1 {
        return gaussian_density(p1, cs[0], cfg.sigma) * gaussian_density(p2, cs[0], cfg.sigma);
    }
    let mut best = 0.0f64;
    for i in 0..cs.len() {
        for j in 0..cs.len() {
            if i == j {
                continue;
            }
            let d = gaussian_density(p1, cs[i], cfg.sigma) * gaussian_density(p2, cs[j], cfg.sigma);
            best = best.max(d);
        }
    }
    best
}

/// Region whose centers sit exactly on the action's control points (both
/// coincide for a single-point action).
pub fn region_around_action(action: &DesignAction) -> SpatialRegion {
    let (p1, p2) = action.control_points();
    SpatialRegion { centers: vec![p1, p2] }
}

/// Query the environment for a bounded feasible-action set in a region.
///
/// Draws `n_continuous` node placements from the mixture (rejection-resampled
/// until feasible, clipped to the design domain), then fills the remaining
/// `a_max - n_continuous` slots with the highest-density feasible discrete
/// actions. The result can be shorter when the state offers fewer discrete
/// actions or continuous slots fail their rejection budget.
pub fn sample_feasible(
    state: &TrussState,
    region: &SpatialRegion,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<FeasibleActionSet, SamplerError> {
    cfg.validate()?;
    let mut actions: Vec<DesignAction> = Vec::new();

    let normal = Normal::new(0.0, cfg.sigma).expect("validated sigma");
    for _ in 0..cfg.n_continuous {
        for _attempt in 0..cfg.max_rejections {
            let c = region.centers[rng.random_range(0..region.centers.len().min(cfg.s))];
            let x = (c.0 + normal.sample(rng)).clamp(-1.0, 1.0);
            let y = (c.1 + normal.sample(rng)).clamp(-1.0, 1.0);
            let cand = DesignAction::add_node(x, y);
            if is_feasible(state, &cand) && !actions.contains(&cand) {
                actions.push(cand);
                break;
            }
        }
    }

    let mut discrete: Vec<(f64, DesignAction)> = enumerate_discrete_actions(state)
        .into_iter()
        .map(|a| (region_density(a.params, region, cfg), a))
        .collect();
    discrete.sort_by(|(da, a), (db, b)| db.total_cmp(da).then_with(|| a.cmp_key(b)));
    let keep = cfg.a_max.saturating_sub(cfg.n_continuous);
    actions.extend(discrete.into_iter().take(keep).map(|(_, a)| a));

    if actions.is_empty() {
        return Err(SamplerError::EmptyActionSet);
    }
    debug_assert!(actions.len() <= cfg.a_max);
    Ok(FeasibleActionSet { actions })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{apply_action, ActionLabel, ProblemConfig, TrussState};

    fn empty_state() -> TrussState {
        TrussState::initial(Arc::new(ProblemConfig::default())).unwrap()
    }

    fn cfg() -> SamplerConfig {
        SamplerConfig::default()
    }

    #[test]
    fn density_peaks_when_points_sit_on_centers() {
        let region = SpatialRegion { centers: vec![(0.1, 0.2), (-0.3, 0.4)] };
        let c = cfg();
        let peak = region_density([0.1, 0.2, -0.3, 0.4], &region, &c);
        let norm = 1.0 / (2.0 * std::f64::consts::PI * c.sigma * c.sigma);
        assert!((peak - norm * norm).abs() / (norm * norm) < 1e-12);
    }

    #[test]
    fn density_is_symmetric_under_control_point_swap() {
        let region = SpatialRegion { centers: vec![(0.5, 0.5), (-0.5, 0.0)] };
        let c = cfg();
        let d1 = region_density([0.2, 0.1, -0.4, 0.3], &region, &c);
        let d2 = region_density([-0.4, 0.3, 0.2, 0.1], &region, &c);
        assert_eq!(d1, d2);
    }

    #[test]
    fn density_is_symmetric_under_center_swap() {
        let c = cfg();
        let r1 = SpatialRegion { centers: vec![(0.5, 0.5), (-0.5, 0.0)] };
        let r2 = SpatialRegion { centers: vec![(-0.5, 0.0), (0.5, 0.5)] };
        let p = [0.2, 0.1, -0.4, 0.3];
        assert_eq!(region_density(p, &r1, &c), region_density(p, &r2, &c));
    }

    /// Independent density formula used as an oracle for ranking checks.
    fn oracle_density(params: [f64; 4], region: &SpatialRegion, sigma: f64) -> f64 {
        let g = |px: f64, py: f64, cx: f64, cy: f64| {
            let z = 2.0 * std::f64::consts::PI * sigma * sigma;
            f64::exp(-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * sigma * sigma)) / z
        };
        let (c1, c2) = (region.centers[0], region.centers[1]);
        let a = g(params[0], params[1], c1.0, c1.1) * g(params[2], params[3], c2.0, c2.1);
        let b = g(params[0], params[1], c2.0, c2.1) * g(params[2], params[3], c1.0, c1.1);
        a.max(b)
    }

    #[test]
    fn density_ranking_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cfg();
        let region = SpatialRegion {
            centers: vec![
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            ],
        };
        let mut actions: Vec<[f64; 4]> = (0..20)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let mut by_impl = actions.clone();
        by_impl.sort_by(|a, b| {
            region_density(*b, &region, &c).total_cmp(&region_density(*a, &region, &c))
        });
        actions.sort_by(|a, b| {
            oracle_density(*b, &region, c.sigma).total_cmp(&oracle_density(*a, &region, c.sigma))
        });
        assert_eq!(by_impl, actions);
    }

    #[test]
    fn region_around_add_node_duplicates_the_point() {
        let r = region_around_action(&DesignAction::add_node(0.1, 0.2));
        assert_eq!(r.centers, vec![(0.1, 0.2), (0.1, 0.2)]);
    }

    #[test]
    fn region_around_member_uses_both_endpoints() {
        let r = region_around_action(&DesignAction::add_member((0.1, 0.2), (0.3, 0.4)));
        assert_eq!(r.centers, vec![(0.1, 0.2), (0.3, 0.4)]);
    }

    #[test]
    fn memberless_state_yields_continuous_plus_every_pair() {
        // minimal legal state has 3 fixed nodes and no members: C(3,2) = 3
        // discrete actions plus the full continuous quota
        let state = empty_state();
        let c = cfg();
        let region = SpatialRegion { centers: vec![(0.0, 0.0), (0.0, 0.0)] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = sample_feasible(&state, &region, &c, &mut rng).unwrap();
        let n_cont = set.actions.iter().filter(|a| a.label == ActionLabel::AddNode).count();
        assert_eq!(n_cont, 10);
        assert_eq!(set.len() - n_cont, 3);
    }

    #[test]
    fn empty_state_with_no_slots_is_an_error() {
        // min spacing so large that no node can be added, no pairs left
        let problem = Arc::new(ProblemConfig::default());
        let mut state = TrussState::initial(problem).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let a = state.nodes()[i].pos();
                let b = state.nodes()[j].pos();
                state = apply_action(&state, &DesignAction::add_member(a, b)).unwrap();
            }
        }
        // cap all members
        let cap = state.problem().max_size_level();
        for _ in 1..cap {
            for idx in 0..3 {
                let m = state.members()[idx];
                let a = state.nodes()[m.a].pos();
                let b = state.nodes()[m.b].pos();
                state =
                    apply_action(&state, &DesignAction::increase_thickness(a, b)).unwrap();
            }
        }
        let c = SamplerConfig { n_continuous: 0, max_rejections: 1, ..cfg() };
        let region = SpatialRegion { centers: vec![(0.0, 0.0), (0.0, 0.0)] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = sample_feasible(&state, &region, &c, &mut rng);
        assert!(matches!(err, Err(SamplerError::EmptyActionSet)));
    }

    #[test]
    fn sampling_is_deterministic_under_fixed_seed() {
        let state = empty_state();
        let region = SpatialRegion { centers: vec![(0.2, 0.3), (-0.2, 0.4)] };
        let c = cfg();
        let a = sample_feasible(&state, &region, &c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_feasible(&state, &region, &c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_sampled_action_is_feasible_and_unique() {
        let mut state = empty_state();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in 0..4 {
            let x = -0.6 + 0.35 * k as f64;
            state = apply_action(&state, &DesignAction::add_node(x, 0.3)).unwrap();
        }
        let region = SpatialRegion { centers: vec![(0.0, 0.2), (0.3, -0.5)] };
        let set = sample_feasible(&state, &region, &cfg(), &mut rng).unwrap();
        assert!(set.len() <= cfg().a_max);
        for (i, a) in set.actions.iter().enumerate() {
            assert!(is_feasible(&state, a));
            assert!(!set.actions[..i].contains(a), "duplicate at {i}");
        }
    }

    #[test]
    fn ground_truth_region_maximizes_density_over_the_set() {
        let state = empty_state();
        let truth = DesignAction::add_member(
            state.nodes()[0].pos(),
            state.nodes()[2].pos(),
        );
        let region = region_around_action(&truth);
        let c = cfg();
        let set =
            sample_feasible(&state, &region, &c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let truth_density = region_density(truth.params, &region, &c);
        for a in &set.actions {
            assert!(region_density(a.params, &region, &c) <= truth_density + 1e-15);
        }
    }
}
