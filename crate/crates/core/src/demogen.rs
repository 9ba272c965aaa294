//! Scripted heuristic designers.
//!
//! These generate synthetic demonstration corpora so the learning pipeline
//! can be trained and validated without external study data. The heuristics
//! are deliberately simple, strongly state-dependent rules — not a model of
//! human strategy: a triangulated arch is scaffolded above the span, then
//! the hottest members are thickened until the target factor of safety is
//! reached. Placement noise creates behavioral diversity between
//! trajectories while keeping the choice rule deterministic given the state.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::{
    format_trajectory_file, raw_step_of, RawStep, TrajectoryHeader, TrajectoryRecord,
};
use crate::env::{
    analyze, apply_action, is_feasible, render, DesignAction, LoadSpec, Material, NodeId,
    ProblemConfig, SupportKind, SupportSpec, TrussState,
};

#[derive(Debug, Error)]
pub enum DemogenError {
    #[error("policy is stuck: {0}")]
    StuckPolicy(String),
    #[error("environment error: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("data error: {0}")]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Scaffold only: place nodes, triangulate, stop.
    Triangulator,
    /// Minimal scaffold, then thicken the max-stress member until strong.
    Reinforcer,
    /// Full scaffold followed by reinforcement.
    Mixed,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Triangulator => "triangulator",
            PolicyKind::Reinforcer => "reinforcer",
            PolicyKind::Mixed => "mixed",
        }
    }

    pub fn from_name(s: &str) -> Option<PolicyKind> {
        match s {
            "triangulator" => Some(PolicyKind::Triangulator),
            "reinforcer" => Some(PolicyKind::Reinforcer),
            "mixed" => Some(PolicyKind::Mixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeuristicPolicy {
    pub kind: PolicyKind,
    /// Gaussian position noise for node placement.
    pub noise: f64,
    pub seed: u64,
    pub target_fos: f64,
    pub max_steps: usize,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        HeuristicPolicy {
            kind: PolicyKind::Mixed,
            noise: 0.03,
            seed: 0,
            target_fos: 2.5,
            max_steps: 40,
        }
    }
}

/// Bridge-style demo problem: two pin supports and three deck loads, which
/// keeps late-state feasible sets near the sampler cap.
pub fn bridge_problem() -> ProblemConfig {
    ProblemConfig {
        supports: vec![
            SupportSpec { x: -0.8, y: -0.8, kind: SupportKind::Pin },
            SupportSpec { x: 0.8, y: -0.8, kind: SupportKind::Pin },
        ],
        loads: vec![
            LoadSpec { x: -0.4, y: -0.8, fx: 0.0, fy: -0.4 },
            LoadSpec { x: 0.0, y: -0.8, fx: 0.0, fy: -0.4 },
            LoadSpec { x: 0.4, y: -0.8, fx: 0.0, fy: -0.4 },
        ],
        material: Material {
            yield_stress: 40.0,
            density: 1.0,
            area_ladder: (0..10).map(|i| 0.02 * f64::powi(2.0, i)).collect(),
        },
        min_node_spacing: 0.05,
    }
}

/// Named built-in problems for the CLI.
pub fn builtin_problem(name: &str) -> Option<ProblemConfig> {
    match name {
        "default" => Some(ProblemConfig::default()),
        "bridge" => Some(bridge_problem()),
        _ => None,
    }
}

/// Candidate arch positions above the span; a trajectory uses a fixed subset.
const ARCH_SLOTS: usize = 6;

fn arch_slot(i: usize) -> (f64, f64) {
    let x = -0.6 + 1.2 * i as f64 / (ARCH_SLOTS - 1) as f64;
    let y = 0.15 + 0.4 * f64::sin(std::f64::consts::PI * (i as f64 + 0.5) / ARCH_SLOTS as f64);
    (x, y)
}

fn slot_subset(n_free: usize) -> &'static [usize] {
    match n_free {
        1 => &[2],
        4 => &[0, 2, 3, 5],
        _ => &[0, 1, 2, 4, 5],
    }
}

struct Rollout<'a> {
    state: TrussState,
    records: Vec<TrajectoryRecord>,
    trajectory_id: u64,
    policy: &'a HeuristicPolicy,
    rng: ChaCha8Rng,
    slots: &'static [usize],
}

impl<'a> Rollout<'a> {
    fn emit(&mut self, action: DesignAction) -> Result<(), DemogenError> {
        debug_assert!(is_feasible(&self.state, &action));
        self.records.push(TrajectoryRecord {
            trajectory_id: self.trajectory_id,
            step_index: self.records.len() as u32,
            state: self.state.clone(),
            image: Arc::new(render(&self.state)),
            action,
        });
        self.state = apply_action(&self.state, &action)?;
        Ok(())
    }

    fn free_nodes(&self) -> Vec<NodeId> {
        (self.state.n_fixed()..self.state.nodes().len()).collect()
    }

    /// Next planned node placement, jittered until feasible.
    fn next_node_action(&mut self) -> Option<DesignAction> {
        let placed = self.free_nodes().len();
        if placed >= self.slots.len() {
            return None;
        }
        let (bx, by) = arch_slot(self.slots[placed]);
        let normal = Normal::new(0.0, self.policy.noise.max(1e-12)).unwrap();
        for attempt in 0..32 {
            let (dx, dy) = if self.policy.noise > 0.0 {
                (normal.sample(&mut self.rng), normal.sample(&mut self.rng))
            } else if attempt == 0 {
                (0.0, 0.0)
            } else {
                // deterministic fallback nudge for the zero-noise case
                (0.02 * attempt as f64, 0.0)
            };
            let action =
                DesignAction::add_node((bx + dx).clamp(-1.0, 1.0), (by + dy).clamp(-1.0, 1.0));
            if is_feasible(&self.state, &action) {
                return Some(action);
            }
        }
        None
    }

    /// Desired scaffold edges for the current state: the top chain of free
    /// nodes, end diagonals to the supports, the bottom chord, and one web
    /// member from every free node to its nearest bottom node.
    fn desired_edges(&self) -> Vec<(NodeId, NodeId)> {
        let nodes = self.state.nodes();
        let mut free = self.free_nodes();
        free.sort_by(|&a, &b| nodes[a].x.total_cmp(&nodes[b].x).then(a.cmp(&b)));
        let mut bottom: Vec<NodeId> = (0..self.state.n_fixed()).collect();
        bottom.sort_by(|&a, &b| nodes[a].x.total_cmp(&nodes[b].x).then(a.cmp(&b)));

        let mut edges = Vec::new();
        for w in free.windows(2) {
            edges.push((w[0], w[1]));
        }
        if let (Some(&first), Some(&last)) = (free.first(), free.last()) {
            edges.push((bottom[0], first));
            edges.push((*bottom.last().unwrap(), last));
        }
        for w in bottom.windows(2) {
            edges.push((w[0], w[1]));
        }
        for &f in &free {
            let nearest = bottom
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    nodes[f]
                        .dist_to(nodes[a].x, nodes[a].y)
                        .total_cmp(&nodes[f].dist_to(nodes[b].x, nodes[b].y))
                        .then(a.cmp(&b))
                })
                .unwrap();
            edges.push((f, nearest));
        }
        edges
    }

    /// Shortest missing desired edge, if any.
    fn next_member_action(&self) -> Option<DesignAction> {
        let nodes = self.state.nodes();
        self.desired_edges()
            .into_iter()
            .filter(|&(a, b)| a != b && self.state.find_member(a, b).is_none())
            .min_by(|&(a1, b1), &(a2, b2)| {
                let l1 = nodes[a1].dist_to(nodes[b1].x, nodes[b1].y);
                let l2 = nodes[a2].dist_to(nodes[b2].x, nodes[b2].y);
                l1.total_cmp(&l2).then(a1.cmp(&a2)).then(b1.cmp(&b2))
            })
            .map(|(a, b)| DesignAction::add_member(nodes[a].pos(), nodes[b].pos()))
    }

    /// Any missing member at all, shortest first (mechanism repair).
    fn any_member_action(&self) -> Option<DesignAction> {
        let nodes = self.state.nodes();
        let n = nodes.len();
        let mut best: Option<(f64, NodeId, NodeId)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.state.find_member(i, j).is_some() {
                    continue;
                }
                let len = nodes[i].dist_to(nodes[j].x, nodes[j].y);
                if best.is_none_or(|(l, _, _)| len < l) {
                    best = Some((len, i, j));
                }
            }
        }
        best.map(|(_, i, j)| DesignAction::add_member(nodes[i].pos(), nodes[j].pos()))
    }

    /// Thicken the highest-stress member that still has ladder headroom.
    fn next_thicken_action(&self, forces: &[f64]) -> Option<DesignAction> {
        let cap = self.state.problem().max_size_level();
        let nodes = self.state.nodes();
        self.state
            .members()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.size_level < cap)
            .max_by(|(i, a), (j, b)| {
                let area_a = self.state.problem().area(a.size_level);
                let area_b = self.state.problem().area(b.size_level);
                let sa = (forces[*i] / area_a).abs();
                let sb = (forces[*j] / area_b).abs();
                sa.total_cmp(&sb).then(j.cmp(i))
            })
            .map(|(_, m)| {
                DesignAction::increase_thickness(nodes[m.a].pos(), nodes[m.b].pos())
            })
    }
}

/// Roll out one trajectory. Every emitted action is feasible in its state;
/// the rollout stops at the target factor of safety, the step budget, or
/// when the policy has nothing left to do.
pub fn generate_trajectory(
    problem: &Arc<ProblemConfig>,
    policy: &HeuristicPolicy,
    trajectory_id: u64,
) -> Result<Vec<TrajectoryRecord>, DemogenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        policy.seed ^ trajectory_id.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let n_free = match policy.kind {
        PolicyKind::Reinforcer => 1,
        _ => {
            if rng.random_range(0..2) == 0 {
                4
            } else {
                5
            }
        }
    };
    let mut roll = Rollout {
        state: TrussState::initial(problem.clone())?,
        records: Vec::new(),
        trajectory_id,
        policy,
        rng,
        slots: slot_subset(n_free),
    };

    while roll.records.len() < policy.max_steps {
        // phase 1: place planned nodes
        if roll.free_nodes().len() < roll.slots.len() {
            match roll.next_node_action() {
                Some(a) => {
                    roll.emit(a)?;
                    continue;
                }
                None => {
                    return Err(DemogenError::StuckPolicy(
                        "cannot place a planned node".into(),
                    ))
                }
            }
        }
        // phase 2: scaffold members
        if let Some(a) = roll.next_member_action() {
            roll.emit(a)?;
            continue;
        }
        if policy.kind == PolicyKind::Triangulator {
            break;
        }
        // phase 3: reinforce
        let analysis = analyze(&roll.state);
        if !analysis.result.solvable {
            match roll.any_member_action() {
                Some(a) => {
                    roll.emit(a)?;
                    continue;
                }
                None => {
                    return Err(DemogenError::StuckPolicy(
                        "structure unsolvable and fully connected".into(),
                    ))
                }
            }
        }
        if analysis.result.fos >= policy.target_fos {
            break;
        }
        match roll.next_thicken_action(analysis.member_forces.as_ref().unwrap()) {
            Some(a) => roll.emit(a)?,
            None => break, // every member capped: done as built
        }
    }
    Ok(roll.records)
}

/// Policy mix for corpus generation: round-robin over the listed kinds.
pub fn generate_corpus(
    problem: &Arc<ProblemConfig>,
    problem_ref: &str,
    n_trajectories: usize,
    policies: &[HeuristicPolicy],
    out_path: &std::path::Path,
) -> Result<usize, DemogenError> {
    assert!(!policies.is_empty());
    let mut steps: Vec<RawStep> = Vec::new();
    let mut n_records = 0usize;
    for tid in 0..n_trajectories {
        let policy = &policies[tid % policies.len()];
        let records = generate_trajectory(problem, policy, tid as u64)?;
        n_records += records.len();
        steps.extend(records.iter().map(raw_step_of));
    }
    let header = TrajectoryHeader {
        problem_ref: problem_ref.to_owned(),
        manifest: vec![
            ("seed".into(), policies[0].seed.to_string()),
            (
                "policy".into(),
                policies.iter().map(|p| p.kind.name()).collect::<Vec<_>>().join("+"),
            ),
            ("trajectories".into(), n_trajectories.to_string()),
            ("records".into(), n_records.to_string()),
        ],
    };
    std::fs::write(out_path, format_trajectory_file(&header, &steps))
        .map_err(crate::data::DataError::Io)?;
    Ok(n_records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest;
    use crate::env::evaluate_structure;

    fn demo_problem() -> Arc<ProblemConfig> {
        Arc::new(bridge_problem())
    }

    #[test]
    fn zero_noise_rollouts_are_identical() {
        let problem = demo_problem();
        let policy = HeuristicPolicy { noise: 0.0, seed: 7, ..Default::default() };
        let a = generate_trajectory(&problem, &policy, 3).unwrap();
        let b = generate_trajectory(&problem, &policy, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_step_is_feasible_at_its_state() {
        let problem = demo_problem();
        let policy = HeuristicPolicy { seed: 11, ..Default::default() };
        let records = generate_trajectory(&problem, &policy, 0).unwrap();
        assert!(!records.is_empty());
        for r in &records {
            assert!(is_feasible(&r.state, &r.action));
        }
    }

    #[test]
    fn reinforcer_thickens_and_improves_fos() {
        let problem = demo_problem();
        let policy = HeuristicPolicy {
            kind: PolicyKind::Reinforcer,
            noise: 0.0,
            seed: 2,
            target_fos: 3.0,
            max_steps: 40,
        };
        let records = generate_trajectory(&problem, &policy, 1).unwrap();
        let thickens = records
            .iter()
            .filter(|r| r.action.label == crate::env::ActionLabel::IncreaseThickness)
            .count();
        assert!(thickens >= 1, "expected at least one thickening step");
        // fos at the first solvable state vs the final state
        let first_solvable = records
            .iter()
            .map(|r| evaluate_structure(&r.state))
            .find(|res| res.solvable)
            .expect("some state is solvable");
        let mut last = records.last().unwrap().state.clone();
        last = apply_action(&last, &records.last().unwrap().action).unwrap();
        let final_res = evaluate_structure(&last);
        assert!(final_res.solvable);
        assert!(final_res.fos >= first_solvable.fos);
    }

    #[test]
    fn mixed_policy_uses_all_three_labels() {
        let problem = demo_problem();
        let policy = HeuristicPolicy { seed: 5, ..Default::default() };
        let mut seen = [false; 3];
        for tid in 0..3 {
            for r in generate_trajectory(&problem, &policy, tid).unwrap() {
                seen[r.action.label.index()] = true;
            }
        }
        assert_eq!(seen, [true, true, true]);
    }

    #[test]
    fn corpus_round_trips_through_ingest() {
        let problem = demo_problem();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.traj");
        let policy = HeuristicPolicy { seed: 9, ..Default::default() };
        let n = generate_corpus(&problem, "bridge", 10, &[policy], &path).unwrap();
        let records = ingest(&path, &problem).unwrap();
        assert_eq!(records.len(), n);
        // regenerate: byte-identical file
        let path2 = dir.path().join("corpus2.traj");
        generate_corpus(&problem, "bridge", 10, &[policy], &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
