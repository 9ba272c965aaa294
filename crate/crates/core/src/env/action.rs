use std::cmp::Ordering;

use super::{EnvError, TrussState};

/// Discrete component of a design action. The index order is fixed and is
/// also the one-hot encoding order used by the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionLabel {
    AddNode,
    AddMember,
    IncreaseThickness,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 3] =
        [ActionLabel::AddNode, ActionLabel::AddMember, ActionLabel::IncreaseThickness];

    pub fn index(self) -> usize {
        match self {
            ActionLabel::AddNode => 0,
            ActionLabel::AddMember => 1,
            ActionLabel::IncreaseThickness => 2,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionLabel::AddNode => "add_node",
            ActionLabel::AddMember => "add_member",
            ActionLabel::IncreaseThickness => "increase_thickness",
        }
    }

    pub fn from_name(name: &str) -> Option<ActionLabel> {
        match name {
            "add_node" => Some(ActionLabel::AddNode),
            "add_member" => Some(ActionLabel::AddMember),
            "increase_thickness" => Some(ActionLabel::IncreaseThickness),
            _ => None,
        }
    }
}

/// Hybrid action unit: a label plus four spatial parameters in `[-1, 1]`.
///
/// `AddNode` carries a single point duplicated into both slots so every
/// action has the same parameter length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignAction {
    pub label: ActionLabel,
    pub params: [f64; 4],
}

impl DesignAction {
    pub fn add_node(x: f64, y: f64) -> Self {
        DesignAction { label: ActionLabel::AddNode, params: [x, y, x, y] }
    }

    pub fn add_member(p1: (f64, f64), p2: (f64, f64)) -> Self {
        DesignAction { label: ActionLabel::AddMember, params: [p1.0, p1.1, p2.0, p2.1] }
    }

    pub fn increase_thickness(p1: (f64, f64), p2: (f64, f64)) -> Self {
        DesignAction {
            label: ActionLabel::IncreaseThickness,
            params: [p1.0, p1.1, p2.0, p2.1],
        }
    }

    /// The two control points encoded in the parameter vector.
    pub fn control_points(&self) -> ((f64, f64), (f64, f64)) {
        ((self.params[0], self.params[1]), (self.params[2], self.params[3]))
    }

    /// Total order used for reproducible tie-breaking: label index first,
    /// then parameters lexicographically.
    pub fn cmp_key(&self, other: &DesignAction) -> Ordering {
        self.label
            .index()
            .cmp(&other.label.index())
            .then_with(|| {
                for (a, b) in self.params.iter().zip(&other.params) {
                    match a.total_cmp(b) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
    }
}

/// Why an action is infeasible in `state`, or `None` if it is feasible.
pub fn feasibility_violation(state: &TrussState, action: &DesignAction) -> Option<String> {
    let p = &action.params;
    if p.iter().any(|v| !v.is_finite() || !(-1.0..=1.0).contains(v)) {
        return Some("parameters outside [-1, 1]".into());
    }
    match action.label {
        ActionLabel::AddNode => {
            if p[2] != p[0] || p[3] != p[1] {
                return Some("add-node parameters must duplicate one point".into());
            }
            let d = state.nearest_node_distance(p[0], p[1]);
            if d < state.problem().min_node_spacing {
                return Some(format!(
                    "new node {d:.4} from an existing node, closer than min spacing"
                ));
            }
            None
        }
        ActionLabel::AddMember => member_endpoints(state, p).map_or_else(
            || Some("endpoints do not name two distinct existing nodes".into()),
            |(a, b)| {
                if state.find_member(a, b).is_some() {
                    Some("member already exists between these nodes".into())
                } else {
                    None
                }
            },
        ),
        ActionLabel::IncreaseThickness => member_endpoints(state, p).map_or_else(
            || Some("endpoints do not name two distinct existing nodes".into()),
            |(a, b)| match state.find_member(a, b) {
                None => Some("no member between these nodes".into()),
                Some(idx) => {
                    if state.members()[idx].size_level >= state.problem().max_size_level() {
                        Some("member already at the top of the area ladder".into())
                    } else {
                        None
                    }
                }
            },
        ),
    }
}

fn member_endpoints(state: &TrussState, p: &[f64; 4]) -> Option<(usize, usize)> {
    let a = state.node_at(p[0], p[1])?;
    let b = state.node_at(p[2], p[3])?;
    if a == b {
        return None;
    }
    Some((a, b))
}

pub fn is_feasible(state: &TrussState, action: &DesignAction) -> bool {
    feasibility_violation(state, action).is_none()
}

/// Pure transition: returns the successor state, never mutating the input.
pub fn apply_action(state: &TrussState, action: &DesignAction) -> Result<TrussState, EnvError> {
    if let Some(why) = feasibility_violation(state, action) {
        return Err(EnvError::InfeasibleAction(why));
    }
    let mut next = state.clone();
    let p = &action.params;
    match action.label {
        ActionLabel::AddNode => {
            next.push_node(p[0], p[1]);
        }
        ActionLabel::AddMember => {
            let (a, b) = member_endpoints(state, p).expect("checked feasible");
            next.push_member(a, b);
        }
        ActionLabel::IncreaseThickness => {
            let (a, b) = member_endpoints(state, p).expect("checked feasible");
            let idx = state.find_member(a, b).expect("checked feasible");
            next.thicken_member(idx);
        }
    }
    Ok(next)
}

/// Every feasible state-dependent discrete action: one `AddMember` per
/// unconnected node pair and one `IncreaseThickness` per sub-cap member.
pub fn enumerate_discrete_actions(state: &TrussState) -> Vec<DesignAction> {
    let nodes = state.nodes();
    let mut out = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if state.find_member(i, j).is_none() {
                out.push(DesignAction::add_member(nodes[i].pos(), nodes[j].pos()));
            }
        }
    }
    let cap = state.problem().max_size_level();
    for m in state.members() {
        if m.size_level < cap {
            out.push(DesignAction::increase_thickness(
                nodes[m.a].pos(),
                nodes[m.b].pos(),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::ProblemConfig;

    fn empty_state() -> TrussState {
        TrussState::initial(Arc::new(ProblemConfig::default())).unwrap()
    }

    #[test]
    fn add_node_inserts_at_coordinates() {
        let s0 = empty_state();
        let n0 = s0.nodes().len();
        let s1 = apply_action(&s0, &DesignAction::add_node(0.2, 0.3)).unwrap();
        assert_eq!(s1.nodes().len(), n0 + 1);
        assert_eq!(s1.nodes().last().unwrap().pos(), (0.2, 0.3));
        // purity: the input state is untouched
        assert_eq!(s0.nodes().len(), n0);
    }

    #[test]
    fn duplicate_member_is_infeasible() {
        let s = empty_state();
        let a = s.nodes()[0].pos();
        let b = s.nodes()[1].pos();
        let s1 = apply_action(&s, &DesignAction::add_member(a, b)).unwrap();
        let err = apply_action(&s1, &DesignAction::add_member(a, b)).unwrap_err();
        assert!(matches!(err, EnvError::InfeasibleAction(_)));
    }

    #[test]
    fn ladder_cap_is_infeasible() {
        let s = empty_state();
        let a = s.nodes()[0].pos();
        let b = s.nodes()[1].pos();
        let mut state = apply_action(&s, &DesignAction::add_member(a, b)).unwrap();
        let cap = state.problem().max_size_level();
        let thicken = DesignAction::increase_thickness(a, b);
        for _ in 1..cap {
            state = apply_action(&state, &thicken).unwrap();
        }
        assert_eq!(state.members()[0].size_level, cap);
        assert!(!is_feasible(&state, &thicken));
        assert!(apply_action(&state, &thicken).is_err());
    }

    #[test]
    fn member_between_unknown_coordinates_is_infeasible() {
        let s = empty_state();
        let action = DesignAction::add_member((0.11, 0.22), (0.33, 0.44));
        assert!(!is_feasible(&s, &action));
    }

    #[test]
    fn thickness_on_sub_cap_member_is_feasible() {
        let s = empty_state();
        let a = s.nodes()[0].pos();
        let b = s.nodes()[1].pos();
        let s1 = apply_action(&s, &DesignAction::add_member(a, b)).unwrap();
        assert!(is_feasible(&s1, &DesignAction::increase_thickness(a, b)));
    }

    #[test]
    fn add_node_respects_min_spacing() {
        let s = empty_state();
        let spacing = s.problem().min_node_spacing;
        let (x, y) = s.nodes()[0].pos();
        let too_close = DesignAction::add_node(x + spacing * 0.5, y);
        assert!(!is_feasible(&s, &too_close));
        let far_enough = DesignAction::add_node(x + spacing * 2.0, y);
        assert!(is_feasible(&s, &far_enough));
    }

    #[test]
    fn enumerate_counts_match_combinatorics() {
        // default problem: 3 fixed nodes, no members -> C(3,2) = 3 AddMember
        let s = empty_state();
        let actions = enumerate_discrete_actions(&s);
        assert_eq!(actions.len(), 3);
        assert!(actions.iter().all(|a| a.label == ActionLabel::AddMember));

        // fully connect 4 nodes: 0 AddMember + 6 IncreaseThickness
        let s = apply_action(&s, &DesignAction::add_node(0.0, 0.5)).unwrap();
        let mut full = s.clone();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let a = full.nodes()[i].pos();
                let b = full.nodes()[j].pos();
                full = apply_action(&full, &DesignAction::add_member(a, b)).unwrap();
            }
        }
        let actions = enumerate_discrete_actions(&full);
        assert_eq!(actions.len(), 6);
        assert!(actions.iter().all(|a| a.label == ActionLabel::IncreaseThickness));
    }

    #[test]
    fn divergence_after_add_node() {
        let s = empty_state();
        let before = enumerate_discrete_actions(&s).len();
        let s1 = apply_action(&s, &DesignAction::add_node(0.1, 0.6)).unwrap();
        let after = enumerate_discrete_actions(&s1).len();
        assert!(after > before);
    }

    #[test]
    fn transitions_are_deterministic_on_equal_states() {
        let s = empty_state();
        let action = DesignAction::add_node(-0.3, 0.4);
        let a = apply_action(&s, &action).unwrap();
        let b = apply_action(&s.clone(), &action).unwrap();
        assert_eq!(a, b);
    }
}
