//! Best-effort adapter for external study exports.
//!
//! Accepts comma-separated rows `trajectory,step,label,x1,y1,x2,y2` with
//! loose label spellings. Replay is lenient: member endpoints snap to the
//! nearest existing node within a tolerance, and steps that remain
//! infeasible (often a consequence of dropping subtractive actions the
//! canonical format does not carry) are skipped and reported rather than
//! failing the import.

use std::sync::Arc;

use crate::env::{
    apply_action, feasibility_violation, render, ActionLabel, DesignAction, ProblemConfig,
    TrussState,
};

use super::{DataError, RawStep, TrajectoryRecord};

#[derive(Debug, Default)]
pub struct ImportOutcome {
    pub records: Vec<TrajectoryRecord>,
    /// (trajectory, step, reason) for rows that could not be replayed.
    pub skipped: Vec<(u64, u32, String)>,
    pub subtractive_dropped: usize,
}

fn normalize_label(raw: &str) -> String {
    let lower: String = raw
        .trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect();
    match lower.as_str() {
        "add_node" | "node" | "addnode" => "add_node".into(),
        "add_member" | "member" | "addmember" | "add_bar" => "add_member".into(),
        "increase_thickness" | "thicken" | "increasethickness" | "increase_size" => {
            "increase_thickness".into()
        }
        other => other.to_owned(),
    }
}

/// Parse loose CSV text into raw steps. Unknown labels survive (they are
/// dropped later by the generative filter).
pub fn parse_csv_steps(text: &str) -> Result<Vec<RawStep>, DataError> {
    let mut steps = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if idx == 0 && fields.get(2).is_some_and(|f| f.eq_ignore_ascii_case("label")) {
            continue; // column header row
        }
        if fields.len() < 7 {
            return Err(DataError::Parse {
                line: lineno,
                msg: format!("expected 7 comma-separated fields, found {}", fields.len()),
            });
        }
        let err = |what: &str| DataError::Parse { line: lineno, msg: format!("cannot parse {what}") };
        let mut params = [0.0f64; 4];
        for (k, f) in fields[3..7].iter().enumerate() {
            params[k] = f.parse::<f64>().map_err(|_| err("coordinate"))?;
        }
        steps.push(RawStep {
            trajectory_id: fields[0].parse().map_err(|_| err("trajectory id"))?,
            step_index: fields[1].parse().map_err(|_| err("step index"))?,
            label: normalize_label(fields[2]),
            params,
        });
    }
    Ok(steps)
}

fn snap_point(state: &TrussState, x: f64, y: f64, tol: f64) -> (f64, f64) {
    let mut best = (x, y);
    let mut best_d = tol;
    for n in state.nodes() {
        let d = n.dist_to(x, y);
        if d <= best_d {
            best_d = d;
            best = n.pos();
        }
    }
    best
}

/// Import loose CSV rows: normalize labels, drop subtractive actions, snap
/// member endpoints, replay leniently.
pub fn import_csv_text(
    text: &str,
    problem: &Arc<ProblemConfig>,
    snap_tolerance: f64,
) -> Result<ImportOutcome, DataError> {
    let steps = parse_csv_steps(text)?;
    let generative: Vec<RawStep> = steps
        .iter()
        .filter(|s| ActionLabel::from_name(&s.label).is_some())
        .cloned()
        .collect();
    let mut outcome = ImportOutcome {
        subtractive_dropped: steps.len() - generative.len(),
        ..Default::default()
    };

    let mut grouped: std::collections::BTreeMap<u64, Vec<RawStep>> = Default::default();
    for s in generative {
        grouped.entry(s.trajectory_id).or_default().push(s);
    }
    for (tid, mut group) in grouped {
        group.sort_by_key(|s| s.step_index);
        let mut state = TrussState::initial(problem.clone())?;
        for step in group {
            let label = ActionLabel::from_name(&step.label).expect("filtered above");
            let p = step.params;
            let action = match label {
                ActionLabel::AddNode => DesignAction::add_node(p[0], p[1]),
                _ => {
                    let a = snap_point(&state, p[0], p[1], snap_tolerance);
                    let b = snap_point(&state, p[2], p[3], snap_tolerance);
                    DesignAction { label, params: [a.0, a.1, b.0, b.1] }
                }
            };
            match feasibility_violation(&state, &action) {
                Some(reason) => outcome.skipped.push((tid, step.step_index, reason)),
                None => {
                    outcome.records.push(TrajectoryRecord {
                        trajectory_id: tid,
                        step_index: step.step_index,
                        state: state.clone(),
                        image: Arc::new(render(&state)),
                        action,
                    });
                    state = apply_action(&state, &action).expect("checked feasible");
                }
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loose_labels_and_near_miss_endpoints_are_recovered() {
        let problem = Arc::new(ProblemConfig::default());
        let csv = "\
trajectory,step,label,x1,y1,x2,y2
0,0,Add Node,0.1,0.2,0.1,0.2
0,1,Add Member,-0.802,-0.799,0.101,0.199
0,2,Delete Member,-0.8,-0.8,0.1,0.2
0,3,Thicken,-0.8,-0.8,0.1,0.2
";
        let out = import_csv_text(csv, &problem, 0.02).unwrap();
        assert_eq!(out.subtractive_dropped, 1);
        assert_eq!(out.records.len(), 3);
        assert!(out.skipped.is_empty());
        // snapped member references the exact node coordinates
        assert_eq!(out.records[1].action.params, [-0.8, -0.8, 0.1, 0.2]);
    }

    #[test]
    fn unrecoverable_rows_are_skipped_not_fatal() {
        let problem = Arc::new(ProblemConfig::default());
        let csv = "0,0,add_member,0.4,0.4,0.6,0.6\n";
        let out = import_csv_text(csv, &problem, 0.02).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped.len(), 1);
    }
}
