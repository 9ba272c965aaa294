use serde::{Deserialize, Serialize};

use super::EnvError;

/// How a support node is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    /// Both translational degrees of freedom fixed.
    Pin,
    /// Vertical degree of freedom fixed, horizontal free.
    Roller,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub x: f64,
    pub y: f64,
    pub kind: SupportKind,
}

/// A point load in newton-equivalents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub x: f64,
    pub y: f64,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub yield_stress: f64,
    pub density: f64,
    /// Ascending cross-section areas; a member's `size_level` is a 1-based
    /// index into this ladder.
    pub area_ladder: Vec<f64>,
}

/// Boundary conditions and material for one design problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub supports: Vec<SupportSpec>,
    pub loads: Vec<LoadSpec>,
    pub material: Material,
    #[serde(default = "default_min_node_spacing")]
    pub min_node_spacing: f64,
}

fn default_min_node_spacing() -> f64 {
    0.05
}

impl Default for ProblemConfig {
    /// Two pin supports on the lower corners and a single downward load at
    /// the bottom midspan.
    fn default() -> Self {
        ProblemConfig {
            supports: vec![
                SupportSpec { x: -0.8, y: -0.8, kind: SupportKind::Pin },
                SupportSpec { x: 0.8, y: -0.8, kind: SupportKind::Pin },
            ],
            loads: vec![LoadSpec { x: 0.0, y: -0.8, fx: 0.0, fy: -1.0 }],
            material: Material {
                yield_stress: 60.0,
                density: 1.0,
                // Geometric ladder, area doubling per level.
                area_ladder: (0..10).map(|i| 0.02 * f64::powi(2.0, i)).collect(),
            },
            min_node_spacing: default_min_node_spacing(),
        }
    }
}

impl ProblemConfig {
    /// Number of thickness levels available.
    pub fn max_size_level(&self) -> usize {
        self.material.area_ladder.len()
    }

    pub fn area(&self, size_level: usize) -> f64 {
        self.material.area_ladder[size_level - 1]
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |msg: String| Err(EnvError::InvalidProblem(msg));
        if self.supports.len() < 2 {
            return err(format!("need at least 2 supports, got {}", self.supports.len()));
        }
        if self.loads.is_empty() {
            return err("need at least 1 load".into());
        }
        let pins = self.supports.iter().filter(|s| s.kind == SupportKind::Pin).count();
        let constrained = 2 * pins + (self.supports.len() - pins);
        if pins == 0 || constrained < 3 {
            return err("boundary conditions cannot restrain a rigid body".into());
        }
        if !(self.min_node_spacing > 0.0) {
            return err("min_node_spacing must be positive".into());
        }
        if self.material.area_ladder.is_empty() {
            return err("area ladder is empty".into());
        }
        let mut prev = 0.0;
        for &a in &self.material.area_ladder {
            if !(a > prev && a.is_finite()) {
                return err("area ladder must be strictly ascending and positive".into());
            }
            prev = a;
        }
        if !(self.material.yield_stress > 0.0) || !(self.material.density > 0.0) {
            return err("yield stress and density must be positive".into());
        }
        for (x, y) in self
            .supports
            .iter()
            .map(|s| (s.x, s.y))
            .chain(self.loads.iter().map(|l| (l.x, l.y)))
        {
            if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
                return err(format!("fixed node ({x}, {y}) outside [-1, 1]^2"));
            }
        }
        if self.loads.iter().all(|l| l.fx == 0.0 && l.fy == 0.0) {
            return err("all loads are zero".into());
        }
        // Fixed nodes must respect the spacing rule among themselves.
        let fixed: Vec<(f64, f64)> = self
            .supports
            .iter()
            .map(|s| (s.x, s.y))
            .chain(self.loads.iter().map(|l| (l.x, l.y)))
            .collect();
        for i in 0..fixed.len() {
            for j in (i + 1)..fixed.len() {
                let d = f64::hypot(fixed[i].0 - fixed[j].0, fixed[i].1 - fixed[j].1);
                if d < self.min_node_spacing {
                    return err(format!(
                        "fixed nodes {i} and {j} are {d:.4} apart, closer than min spacing"
                    ));
                }
            }
        }
        Ok(())
    }
}
