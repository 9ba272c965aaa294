//! Accuracy metrics and report files.
//!
//! Spatial accuracy asks whether both predicted control points fall within a
//! distance threshold of the ground-truth control points (best of the two
//! possible point pairings). Selection accuracy asks whether the ground
//! truth is among the k highest-probability actions. Both are bucketed over
//! a threshold ladder the way stacked-bar summaries expect.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{action_distance, ImitationNet};
use crate::data::D2Sample;
use crate::env::{DesignAction, DesignImage};
use crate::nn::{ActionFeatures, DsnModel, Mode};
use crate::sampler::FeasibleActionSet;
use crate::train::{selection_loss, spatial_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub spatial_thresholds: Vec<f64>,
    pub topk_values: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            spatial_thresholds: vec![0.1, 0.3, 0.5, 1.0],
            topk_values: vec![1, 3, 5, 10],
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Worst-point distance under the best of the two control-point pairings.
pub fn spatial_error(pred: &[f64; 4], truth: &[f64; 4]) -> f64 {
    let d = |ax: f64, ay: f64, bx: f64, by: f64| f64::hypot(ax - bx, ay - by);
    let straight = f64::max(
        d(pred[0], pred[1], truth[0], truth[1]),
        d(pred[2], pred[3], truth[2], truth[3]),
    );
    let swapped = f64::max(
        d(pred[0], pred[1], truth[2], truth[3]),
        d(pred[2], pred[3], truth[0], truth[1]),
    );
    straight.min(swapped)
}

/// Both control points within `threshold` of the ground truth.
pub fn spatial_hit(pred: &[f64; 4], truth: &[f64; 4], threshold: f64) -> bool {
    spatial_error(pred, truth) <= threshold
}

/// Rank of `target_index` under descending probability, ties resolved by
/// stable index order (rank 1 = best).
pub fn rank_of_target(dist: &Array1<f64>, target_index: usize) -> usize {
    let pt = dist[target_index];
    let mut rank = 1;
    for (j, &p) in dist.iter().enumerate() {
        if p > pt || (p == pt && j < target_index) {
            rank += 1;
        }
    }
    rank
}

/// Whether the ground-truth action is among the k highest-probability
/// entries of the distribution. The truth must be an element of the set.
pub fn topk_hit(
    dist: &Array1<f64>,
    actions: &FeasibleActionSet,
    truth: &DesignAction,
    k: usize,
) -> bool {
    let target = actions.position_of(truth).expect("truth must be in the action set");
    rank_of_target(dist, target) <= k
}

/// Bucketed accuracy distributions plus aggregate losses for one model on
/// one test set. Percentages, including the overflow buckets, sum to 100.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub samples: usize,
    pub mse: f64,
    pub bce: f64,
    /// Cross-model BCE comparability: the baseline's label BCE has a
    /// different class count than the selection BCE.
    pub bce_comparable: bool,
    pub spatial_thresholds: Vec<f64>,
    /// Percentage of samples in (prev, thr] per threshold, plus overflow.
    pub spatial_buckets: Vec<f64>,
    pub topk_values: Vec<usize>,
    /// Percentage of samples first hit at each k, plus overflow.
    pub topk_buckets: Vec<f64>,
}

impl EvalReport {
    /// Cumulative spatial accuracy (percent) at a configured threshold.
    pub fn spatial_accuracy_at(&self, threshold: f64) -> f64 {
        let mut acc = 0.0;
        for (t, b) in self.spatial_thresholds.iter().zip(&self.spatial_buckets) {
            if *t <= threshold + 1e-12 {
                acc += b;
            }
        }
        acc
    }

    /// Cumulative top-k selection accuracy (percent) at a configured k.
    pub fn topk_accuracy(&self, k: usize) -> f64 {
        let mut acc = 0.0;
        for (kk, b) in self.topk_values.iter().zip(&self.topk_buckets) {
            if *kk <= k {
                acc += b;
            }
        }
        acc
    }
}

pub enum EvalModel<'a> {
    Dsn(&'a mut DsnModel),
    Imitation(&'a ImitationNet),
    Random { seed: u64 },
}

impl EvalModel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalModel::Dsn(_) => "dsn",
            EvalModel::Imitation(_) => "imitation",
            EvalModel::Random { .. } => "random",
        }
    }
}

fn image_batch(images: &[&DesignImage]) -> ndarray::Array4<f64> {
    let mut x = ndarray::Array4::zeros((images.len(), 3, 128, 128));
    for (i, img) in images.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), i).assign(&img.to_network_input());
    }
    x
}

/// Evaluate a model over D2-style test samples: per-sample spatial error and
/// truth rank, bucketed per the config, plus aggregate MSE/BCE.
pub fn evaluate_model(
    mut model: EvalModel<'_>,
    samples: &[D2Sample],
    cfg: &EvalConfig,
) -> EvalReport {
    assert!(!samples.is_empty(), "evaluation needs a non-empty test set");
    let name = model.name().to_owned();
    let nt = cfg.spatial_thresholds.len();
    let nk = cfg.topk_values.len();
    let mut spatial_buckets = vec![0usize; nt + 1];
    let mut topk_buckets = vec![0usize; nk + 1];
    let mut mse_sum = 0.0;
    let mut bce_sum = 0.0;
    let mut bce_comparable = true;
    let mut rng = ChaCha8Rng::seed_from_u64(match model {
        EvalModel::Random { seed } => seed,
        _ => 0,
    });

    for chunk in samples.chunks(32) {
        let truths: Vec<[f64; 4]> = chunk
            .iter()
            .map(|s| s.action_set.actions[s.target_index].params)
            .collect();
        // (spatial pred, rank of truth) per sample in the chunk
        let outcomes: Vec<([f64; 4], usize)> = match &mut model {
            EvalModel::Dsn(dsn) => {
                let imgs: Vec<&DesignImage> = chunk.iter().map(|s| s.image.as_ref()).collect();
                let (enc, _) = dsn.encoder.forward(&image_batch(&imgs));
                let (pred, _) = dsn.spatial.forward(&enc);
                let feats: Vec<ActionFeatures> = chunk
                    .iter()
                    .map(|s| ActionFeatures::from_actions(&s.action_set.actions))
                    .collect();
                let (probs, _) = dsn.selection.forward_sets(&enc, &feats, Mode::Eval);
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let p = [pred[(i, 0)], pred[(i, 1)], pred[(i, 2)], pred[(i, 3)]];
                        bce_sum += selection_loss(&probs[i], s.target_index);
                        (p, rank_of_target(&probs[i], s.target_index))
                    })
                    .collect()
            }
            EvalModel::Imitation(net) => {
                bce_comparable = false;
                let imgs: Vec<&DesignImage> = chunk.iter().map(|s| s.image.as_ref()).collect();
                let (logits, params, _) = net.forward(&image_batch(&imgs));
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let p = [params[(i, 0)], params[(i, 1)], params[(i, 2)], params[(i, 3)]];
                        // label BCE against the truth's one-hot (3 classes)
                        let lrow: Vec<f64> = logits.row(i).to_vec();
                        let probs3 = crate::nn::softmax(&lrow);
                        let truth_label =
                            s.action_set.actions[s.target_index].label.index();
                        bce_sum += selection_loss(&probs3, truth_label);
                        // rank by ascending distance, stable on ties
                        let dt = action_distance(&p, &s.action_set.actions[s.target_index]);
                        let mut rank = 1;
                        for (j, a) in s.action_set.actions.iter().enumerate() {
                            let d = action_distance(&p, a);
                            if d < dt || (d == dt && j < s.target_index) {
                                rank += 1;
                            }
                        }
                        (p, rank)
                    })
                    .collect()
            }
            EvalModel::Random { .. } => chunk
                .iter()
                .map(|s| {
                    let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                    let n = s.action_set.len();
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut rng);
                    let rank =
                        order.iter().position(|&j| j == s.target_index).unwrap() + 1;
                    let uniform = Array1::from_elem(n, 1.0 / n as f64);
                    bce_sum += selection_loss(&uniform, s.target_index);
                    (p, rank)
                })
                .collect(),
        };

        for ((pred, rank), truth) in outcomes.iter().zip(&truths) {
            mse_sum += spatial_loss(pred, truth);
            let err = spatial_error(pred, truth);
            let si = cfg
                .spatial_thresholds
                .iter()
                .position(|&t| err <= t)
                .unwrap_or(nt);
            spatial_buckets[si] += 1;
            let ki = cfg.topk_values.iter().position(|&k| *rank <= k).unwrap_or(nk);
            topk_buckets[ki] += 1;
        }
    }

    let n = samples.len() as f64;
    EvalReport {
        model: name,
        samples: samples.len(),
        mse: mse_sum / n,
        bce: bce_sum / n,
        bce_comparable,
        spatial_thresholds: cfg.spatial_thresholds.clone(),
        spatial_buckets: spatial_buckets.iter().map(|&c| 100.0 * c as f64 / n).collect(),
        topk_values: cfg.topk_values.clone(),
        topk_buckets: topk_buckets.iter().map(|&c| 100.0 * c as f64 / n).collect(),
    }
}

/// Serialize a report; percentages carry two decimals, buckets ascend.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("#eval-report v1\n");
    out.push_str(&format!("model {}\n", r.model));
    out.push_str(&format!("samples {}\n", r.samples));
    out.push_str(&format!("mse {:.6}\n", r.mse));
    out.push_str(&format!("bce {:.6}\n", r.bce));
    out.push_str(&format!("bce_comparable {}\n", r.bce_comparable));
    out.push_str("[spatial]\n");
    for (t, b) in r.spatial_thresholds.iter().zip(&r.spatial_buckets) {
        out.push_str(&format!("{t} {b:.2}\n"));
    }
    out.push_str(&format!("overflow {:.2}\n", r.spatial_buckets[r.spatial_thresholds.len()]));
    out.push_str("[topk]\n");
    for (k, b) in r.topk_values.iter().zip(&r.topk_buckets) {
        out.push_str(&format!("{k} {b:.2}\n"));
    }
    out.push_str(&format!("overflow {:.2}\n", r.topk_buckets[r.topk_values.len()]));
    out
}

pub fn emit_report(r: &EvalReport, path: &std::path::Path) -> Result<(), ReportError> {
    std::fs::write(path, format_report(r))?;
    Ok(())
}

/// Parse a report produced by [`format_report`]; values round-trip at the
/// emitted precision.
pub fn parse_report(text: &str) -> Result<EvalReport, ReportError> {
    let mut r = EvalReport {
        model: String::new(),
        samples: 0,
        mse: 0.0,
        bce: 0.0,
        bce_comparable: true,
        spatial_thresholds: Vec::new(),
        spatial_buckets: Vec::new(),
        topk_values: Vec::new(),
        topk_buckets: Vec::new(),
    };
    #[derive(PartialEq)]
    enum Section {
        Head,
        Spatial,
        Topk,
    }
    let mut section = Section::Head;
    let mut lines = text.lines().enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(ReportError::Parse { line: 1, msg: "empty report".into() });
    };
    if first.trim_end() != "#eval-report v1" {
        return Err(ReportError::Parse { line: 1, msg: "missing report magic".into() });
    }
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| ReportError::Parse { line: lineno, msg: msg.into() };
        match line {
            "[spatial]" => {
                section = Section::Spatial;
                continue;
            }
            "[topk]" => {
                section = Section::Topk;
                continue;
            }
            _ => {}
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| err("expected 'key value'"))?;
        match section {
            Section::Head => match key {
                "model" => r.model = value.to_owned(),
                "samples" => r.samples = value.parse().map_err(|_| err("bad samples"))?,
                "mse" => r.mse = value.parse().map_err(|_| err("bad mse"))?,
                "bce" => r.bce = value.parse().map_err(|_| err("bad bce"))?,
                "bce_comparable" => {
                    r.bce_comparable = value.parse().map_err(|_| err("bad flag"))?
                }
                _ => return Err(err("unknown header key")),
            },
            Section::Spatial => {
                let pct: f64 = value.parse().map_err(|_| err("bad percentage"))?;
                if key == "overflow" {
                    r.spatial_buckets.push(pct);
                } else {
                    let t: f64 = key.parse().map_err(|_| err("bad threshold"))?;
                    if let Some(&prev) = r.spatial_thresholds.last() {
                        if t <= prev {
                            return Err(err("thresholds must ascend"));
                        }
                    }
                    r.spatial_thresholds.push(t);
                    r.spatial_buckets.push(pct);
                }
            }
            Section::Topk => {
                let pct: f64 = value.parse().map_err(|_| err("bad percentage"))?;
                if key == "overflow" {
                    r.topk_buckets.push(pct);
                } else {
                    let k: usize = key.parse().map_err(|_| err("bad k"))?;
                    if let Some(&prev) = r.topk_values.last() {
                        if k <= prev {
                            return Err(err("k values must ascend"));
                        }
                    }
                    r.topk_values.push(k);
                    r.topk_buckets.push(pct);
                }
            }
        }
    }
    if r.spatial_buckets.len() != r.spatial_thresholds.len() + 1
        || r.topk_buckets.len() != r.topk_values.len() + 1
    {
        return Err(ReportError::Parse { line: 0, msg: "missing overflow bucket".into() });
    }
    Ok(r)
}

/// Stacked-bar SVG for one or more reports (spatial and top-k sections).
pub fn write_svg(reports: &[&EvalReport], path: &std::path::Path) -> Result<(), ReportError> {
    const W: f64 = 640.0;
    const BAR_H: f64 = 26.0;
    const GAP: f64 = 14.0;
    const LEFT: f64 = 120.0;
    let palette = ["#2b6cb0", "#63b3ed", "#bee3f8", "#f6ad55", "#e53e3e"];
    let rows = reports.len() * 2;
    let height = rows as f64 * (BAR_H + GAP) + GAP + 20.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        W as u64 + 40
    ));
    let mut y = GAP;
    for r in reports {
        for (title, buckets) in [
            (format!("{} spatial", r.model), &r.spatial_buckets),
            (format!("{} top-k", r.model), &r.topk_buckets),
        ] {
            svg.push_str(&format!(
                "<text x=\"4\" y=\"{:.1}\">{}</text>\n",
                y + BAR_H * 0.7,
                title
            ));
            let mut x = LEFT;
            for (i, pct) in buckets.iter().enumerate() {
                let w = pct / 100.0 * (W - LEFT);
                svg.push_str(&format!(
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{BAR_H}\" fill=\"{}\"/>\n",
                    palette[i % palette.len()]
                ));
                if *pct >= 4.0 {
                    svg.push_str(&format!(
                        "<text x=\"{:.2}\" y=\"{:.1}\" fill=\"white\">{pct:.2}</text>\n",
                        x + 2.0,
                        y + BAR_H * 0.7
                    ));
                }
                x += w;
            }
            y += BAR_H + GAP;
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_hit_uses_the_best_pairing() {
        let truth = [0.0, 0.0, 0.5, 0.5];
        // points given in swapped order still match
        let pred = [0.5, 0.5, 0.0, 0.0];
        assert!(spatial_hit(&pred, &truth, 1e-12));
        // one point offset by 0.2: miss at 0.1, hit at 0.3
        let pred = [0.2, 0.0, 0.5, 0.5];
        assert!(!spatial_hit(&pred, &truth, 0.1));
        assert!(spatial_hit(&pred, &truth, 0.3));
    }

    #[test]
    fn threshold_scale_relative_to_design_space() {
        // the design space spans 2.0 units per axis, so 0.3 is 15% of it
        assert!((0.3f64 / 2.0 - 0.15).abs() < 1e-12);
    }

    #[test]
    fn rank_breaks_ties_by_stable_index() {
        let dist = Array1::from_vec(vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(rank_of_target(&dist, 0), 1);
        assert_eq!(rank_of_target(&dist, 3), 4);
        let dist = Array1::from_vec(vec![0.5, 0.3, 0.2]);
        assert_eq!(rank_of_target(&dist, 1), 2);
    }

    #[test]
    fn hand_built_distribution_matches_expected_hits() {
        let actions = FeasibleActionSet {
            actions: vec![
                DesignAction::add_node(0.1, 0.1),
                DesignAction::add_node(0.2, 0.2),
                DesignAction::add_node(0.3, 0.3),
            ],
        };
        let dist = Array1::from_vec(vec![0.5, 0.3, 0.2]);
        let truth = actions.actions[1];
        assert!(!topk_hit(&dist, &actions, &truth, 1));
        assert!(topk_hit(&dist, &actions, &truth, 3));
        // k = N is always a hit
        assert!(topk_hit(&dist, &actions, &truth, actions.len()));
        // truth at argmax is a top-1 hit
        assert!(topk_hit(&dist, &actions, &actions.actions[0], 1));
    }

    #[test]
    fn report_round_trips_through_emit_and_parse() {
        let r = EvalReport {
            model: "dsn".into(),
            samples: 1333,
            mse: 0.0123456,
            bce: 0.0456789,
            bce_comparable: true,
            spatial_thresholds: vec![0.1, 0.3, 0.5, 1.0],
            spatial_buckets: vec![56.17, 30.45, 7.64, 4.74, 1.0],
            topk_values: vec![1, 3, 5, 10],
            topk_buckets: vec![73.82, 12.0, 5.0, 4.0, 5.18],
        };
        let text = format_report(&r);
        let parsed = parse_report(&text).unwrap();
        let text2 = format_report(&parsed);
        assert_eq!(text, text2);
        // two-decimal convention and ascending bucket order in the file
        assert!(text.contains("0.1 56.17"));
        let spatial_pos: Vec<usize> = ["\n0.1 ", "\n0.3 ", "\n0.5 ", "\n1 "]
            .iter()
            .map(|p| text.find(p).unwrap())
            .collect();
        assert!(spatial_pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn malformed_reports_are_rejected() {
        assert!(parse_report("").is_err());
        assert!(parse_report("#eval-report v1\nmodel x\nsamples nope\n").is_err());
        assert!(parse_report("#eval-report v1\nmodel x\n[spatial]\n0.3 10\n0.1 90\n").is_err());
    }
}
