//! Corpus composition statistics: label mix, feasible-set sizes, and the
//! expected random top-1 baseline implied by the set sizes.
//!
//! Usage: `cargo run --release -p dsn-core --example corpus_stats -- <file.traj> [problem]`

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsn_core::data::{build_d2, ingest};
use dsn_core::demogen::builtin_problem;
use dsn_core::sampler::SamplerConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: corpus_stats <file.traj> [problem]");
    let problem = args.next().unwrap_or_else(|| "bridge".into());
    let problem = Arc::new(builtin_problem(&problem).expect("builtin problem name"));
    let records = ingest(std::path::Path::new(&path), &problem).expect("ingest");

    let n = records.len();
    let mut label_counts = [0usize; 3];
    let mut steps_per_traj = std::collections::BTreeMap::<u64, usize>::new();
    for r in &records {
        label_counts[r.action.label.index()] += 1;
        *steps_per_traj.entry(r.trajectory_id).or_default() += 1;
    }
    println!("records: {n}  trajectories: {}", steps_per_traj.len());
    println!(
        "steps/trajectory: min {} max {} mean {:.1}",
        steps_per_traj.values().min().unwrap(),
        steps_per_traj.values().max().unwrap(),
        n as f64 / steps_per_traj.len() as f64
    );
    println!(
        "labels: add_node {} ({:.1}%)  add_member {} ({:.1}%)  increase_thickness {} ({:.1}%)",
        label_counts[0],
        100.0 * label_counts[0] as f64 / n as f64,
        label_counts[1],
        100.0 * label_counts[1] as f64 / n as f64,
        label_counts[2],
        100.0 * label_counts[2] as f64 / n as f64,
    );

    let cfg = SamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d2 = build_d2(&records, &cfg, &mut rng);
    let sizes: Vec<usize> = d2.iter().map(|s| s.action_set.len()).collect();
    let mean_inv: f64 = sizes.iter().map(|&s| 1.0 / s as f64).sum::<f64>() / n as f64;
    let mean: f64 = sizes.iter().sum::<usize>() as f64 / n as f64;
    let at_cap = sizes.iter().filter(|&&s| s == cfg.a_max).count();
    println!(
        "feasible set size: mean {mean:.1}  min {}  at-cap {}/{}",
        sizes.iter().min().unwrap(),
        at_cap,
        n
    );
    println!(
        "expected random top-1 from set sizes: {:.2}%  (25x bound: {:.1}%)",
        100.0 * mean_inv,
        2500.0 * mean_inv
    );
}
