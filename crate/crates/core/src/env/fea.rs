//! Direct stiffness analysis of a 2D pin-jointed truss.
//!
//! Member forces in a statically determinate truss are independent of the
//! elastic modulus, and indeterminate force distributions only depend on
//! relative axial stiffness, so a uniform unit modulus is used throughout.

use super::{SupportKind, TrussState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralResult {
    /// yield stress divided by the peak axial stress magnitude; 0 when the
    /// system is unsolvable.
    pub fos: f64,
    /// total of length x area x density over members.
    pub mass: f64,
    pub solvable: bool,
}

#[derive(Debug, Clone)]
pub struct StructuralAnalysis {
    pub result: StructuralResult,
    /// Axial force per member (tension positive), aligned with
    /// `state.members()`; `None` when unsolvable.
    pub member_forces: Option<Vec<f64>>,
}

pub fn evaluate_structure(state: &TrussState) -> StructuralResult {
    analyze(state).result
}

pub fn analyze(state: &TrussState) -> StructuralAnalysis {
    let problem = state.problem();
    let nodes = state.nodes();
    let members = state.members();

    let mass: f64 = members
        .iter()
        .map(|m| state.member_length(m) * problem.area(m.size_level) * problem.material.density)
        .sum();
    let unsolvable = || StructuralAnalysis {
        result: StructuralResult { fos: 0.0, mass, solvable: false },
        member_forces: None,
    };

    // Per-node incidence and applied loads.
    let mut has_member = vec![false; nodes.len()];
    for m in members {
        has_member[m.a] = true;
        has_member[m.b] = true;
    }
    let mut load = vec![(0.0, 0.0); nodes.len()];
    for (i, l) in problem.loads.iter().enumerate() {
        let id = problem.supports.len() + i;
        load[id].0 += l.fx;
        load[id].1 += l.fy;
    }

    // DOF numbering. Support constraints remove DOFs; nodes without any
    // member contribute zero stiffness, so they stay in the system only if
    // they carry load (in which case it is a mechanism, caught as singular).
    const FIXED: usize = usize::MAX;
    const EXCLUDED: usize = usize::MAX - 1;
    let mut dof = vec![[EXCLUDED; 2]; nodes.len()];
    let mut n_free = 0;
    for n in nodes {
        let loaded = load[n.id] != (0.0, 0.0);
        let (fix_x, fix_y) = match problem.supports.get(n.id) {
            Some(s) if s.kind == SupportKind::Pin => (true, true),
            Some(_) => (false, true), // roller
            None => (false, false),
        };
        for (axis, fixed) in [(0, fix_x), (1, fix_y)] {
            if fixed {
                dof[n.id][axis] = FIXED;
            } else if has_member[n.id] || loaded {
                dof[n.id][axis] = n_free;
                n_free += 1;
            }
        }
    }

    if n_free == 0 {
        // nothing to solve: no stresses anywhere
        return StructuralAnalysis {
            result: StructuralResult { fos: f64::INFINITY, mass, solvable: true },
            member_forces: Some(vec![0.0; members.len()]),
        };
    }

    // Assemble K (unit modulus) and the load vector.
    let mut k = vec![0.0; n_free * n_free];
    let mut f = vec![0.0; n_free];
    for n in nodes {
        for axis in 0..2 {
            let d = dof[n.id][axis];
            if d < EXCLUDED {
                f[d] = if axis == 0 { load[n.id].0 } else { load[n.id].1 };
            }
        }
    }
    for m in members {
        let (na, nb) = (nodes[m.a], nodes[m.b]);
        let len = state.member_length(m);
        let (c, s) = ((nb.x - na.x) / len, (nb.y - na.y) / len);
        let ea_l = problem.area(m.size_level) / len;
        let local = [c * c, c * s, c * s, s * s];
        // index order: (a.x, a.y, b.x, b.y); sign +1 for same end, -1 across
        let idx = [dof[m.a][0], dof[m.a][1], dof[m.b][0], dof[m.b][1]];
        for (i, &di) in idx.iter().enumerate() {
            if di >= EXCLUDED {
                continue;
            }
            for (j, &dj) in idx.iter().enumerate() {
                if dj >= EXCLUDED {
                    continue;
                }
                let sign = if (i < 2) == (j < 2) { 1.0 } else { -1.0 };
                k[di * n_free + dj] += sign * ea_l * local[(i % 2) * 2 + (j % 2)];
            }
        }
    }

    // A DOF whose stiffness row is exactly zero is decoupled from every
    // member axis (e.g. the lateral direction of a lone vertical bar). It is
    // a mechanism only if it carries load; otherwise pin it at zero, which
    // cannot affect any member force.
    for d in 0..n_free {
        if k[d * n_free..(d + 1) * n_free].iter().all(|&v| v == 0.0) {
            if f[d] != 0.0 {
                return unsolvable();
            }
            k[d * n_free + d] = 1.0;
        }
    }

    let Some(u) = lu_solve(k, n_free, f) else {
        return unsolvable();
    };

    // Axial force: N = (EA / L) * elongation along the member axis.
    let disp = |id: usize, axis: usize| -> f64 {
        match dof[id][axis] {
            d if d < EXCLUDED => u[d],
            _ => 0.0,
        }
    };
    let mut forces = Vec::with_capacity(members.len());
    let mut max_stress = 0.0f64;
    for m in members {
        let (na, nb) = (nodes[m.a], nodes[m.b]);
        let len = state.member_length(m);
        let (c, s) = ((nb.x - na.x) / len, (nb.y - na.y) / len);
        let elong = (disp(m.b, 0) - disp(m.a, 0)) * c + (disp(m.b, 1) - disp(m.a, 1)) * s;
        let area = problem.area(m.size_level);
        let force = area / len * elong;
        max_stress = max_stress.max((force / area).abs());
        forces.push(force);
    }
    let fos = if max_stress > 0.0 {
        problem.material.yield_stress / max_stress
    } else {
        f64::INFINITY
    };
    StructuralAnalysis {
        result: StructuralResult { fos, mass, solvable: true },
        member_forces: Some(forces),
    }
}

/// Dense LU with partial pivoting; `None` when the matrix is singular at the
/// pivot tolerance (a mechanism or a disconnected load path).
fn lu_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let amax = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if amax == 0.0 {
        return None;
    }
    let tol = amax * 1e-12;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| a[r1 * n + col].abs().total_cmp(&a[r2 * n + col].abs()))
            .unwrap();
        if a[pivot_row * n + col].abs() < tol {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in (row + 1)..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{
        apply_action, DesignAction, LoadSpec, Material, ProblemConfig, SupportKind, SupportSpec,
        TrussState,
    };

    fn problem(supports: Vec<SupportSpec>, loads: Vec<LoadSpec>) -> Arc<ProblemConfig> {
        Arc::new(ProblemConfig {
            supports,
            loads,
            material: Material {
                yield_stress: 60.0,
                density: 1.0,
                area_ladder: vec![0.02, 0.04, 0.08],
            },
            min_node_spacing: 0.05,
        })
    }

    /// Single vertical bar: pin at the bottom, axial load P at the top.
    /// Method of joints gives member force exactly P (compression for a
    /// downward load).
    #[test]
    fn single_bar_axial_force_matches_hand_statics() {
        let p = 0.75;
        let cfg = problem(
            vec![
                SupportSpec { x: 0.0, y: -0.8, kind: SupportKind::Pin },
                // far-away second support keeps the config valid without
                // touching the loaded bar
                SupportSpec { x: -0.9, y: 0.9, kind: SupportKind::Pin },
            ],
            vec![LoadSpec { x: 0.0, y: 0.2, fx: 0.0, fy: -p }],
        );
        let s = TrussState::initial(cfg).unwrap();
        let s = apply_action(&s, &DesignAction::add_member((0.0, -0.8), (0.0, 0.2))).unwrap();
        let analysis = analyze(&s);
        assert!(analysis.result.solvable);
        let forces = analysis.member_forces.unwrap();
        assert_eq!(forces.len(), 1);
        let rel = (forces[0].abs() - p).abs() / p;
        assert!(rel < 1e-9, "force {} vs P {}", forces[0], p);
        // stress = P / A, fos = yield / stress
        let expected_fos = 60.0 / (p / 0.02);
        assert!((analysis.result.fos - expected_fos).abs() / expected_fos < 1e-9);
    }

    /// Two bars at +-45 degrees under a downward apex load carry P/sqrt(2)
    /// each by symmetry.
    #[test]
    fn two_bar_truss_matches_method_of_joints() {
        let p = 1.0;
        let cfg = problem(
            vec![
                SupportSpec { x: -0.5, y: -0.5, kind: SupportKind::Pin },
                SupportSpec { x: 0.5, y: -0.5, kind: SupportKind::Pin },
            ],
            vec![LoadSpec { x: 0.0, y: 0.0, fx: 0.0, fy: -p }],
        );
        let s = TrussState::initial(cfg).unwrap();
        let s = apply_action(&s, &DesignAction::add_member((-0.5, -0.5), (0.0, 0.0))).unwrap();
        let s = apply_action(&s, &DesignAction::add_member((0.5, -0.5), (0.0, 0.0))).unwrap();
        let analysis = analyze(&s);
        assert!(analysis.result.solvable);
        let forces = analysis.member_forces.unwrap();
        let expected = p / f64::sqrt(2.0);
        for f in &forces {
            assert!((f.abs() - expected).abs() / expected < 1e-9, "force {f}");
        }
    }

    #[test]
    fn unconnected_load_is_a_mechanism() {
        let s = TrussState::initial(Arc::new(ProblemConfig::default())).unwrap();
        // load node exists but is connected to nothing
        let s = apply_action(
            &s,
            &DesignAction::add_member((-0.8, -0.8), (0.8, -0.8)),
        )
        .unwrap();
        let r = evaluate_structure(&s);
        assert!(!r.solvable);
        assert_eq!(r.fos, 0.0);
        assert!(r.mass > 0.0);
    }

    #[test]
    fn isolated_free_node_does_not_poison_the_system() {
        let cfg = problem(
            vec![
                SupportSpec { x: -0.5, y: -0.5, kind: SupportKind::Pin },
                SupportSpec { x: 0.5, y: -0.5, kind: SupportKind::Pin },
            ],
            vec![LoadSpec { x: 0.0, y: 0.0, fx: 0.0, fy: -1.0 }],
        );
        let s = TrussState::initial(cfg).unwrap();
        let s = apply_action(&s, &DesignAction::add_member((-0.5, -0.5), (0.0, 0.0))).unwrap();
        let s = apply_action(&s, &DesignAction::add_member((0.5, -0.5), (0.0, 0.0))).unwrap();
        // a just-added node with no members yet
        let s = apply_action(&s, &DesignAction::add_node(0.3, 0.8)).unwrap();
        assert!(evaluate_structure(&s).solvable);
    }

    #[test]
    fn mass_accumulates_length_area_density() {
        let s = TrussState::initial(Arc::new(ProblemConfig::default())).unwrap();
        let a = s.nodes()[0].pos();
        let b = s.nodes()[1].pos();
        let s = apply_action(&s, &DesignAction::add_member(a, b)).unwrap();
        let expected = 1.6 * 0.02 * 1.0;
        assert!((evaluate_structure(&s).mass - expected).abs() < 1e-12);
        // thickening strictly increases mass
        let before = evaluate_structure(&s).mass;
        let s2 = apply_action(&s, &DesignAction::increase_thickness(a, b)).unwrap();
        assert!(evaluate_structure(&s2).mass > before);
    }
}
