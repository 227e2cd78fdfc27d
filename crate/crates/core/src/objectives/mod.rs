//! Loss terms, their weights, and the scene-level objective with analytic
//! gradients.

mod reach;
mod scene;
pub mod terms;

pub use reach::ReachSets;
pub use scene::{Evaluation, Gradient, Scene, SceneOptions};
pub use terms::{
    l_anchor_direction, l_anchor_distance, l_init, l_ordering, l_projection, l_reachability,
    l_reconstruction, l_simplification, l_velocity, FrameFeatures,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a displacement is treated as having no direction.
pub const EPS_DIR: f64 = 1e-8;

/// Weights of every loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub simp: f64,
    pub proj: f64,
    pub reach: f64,
    pub ord: f64,
    pub init: f64,
    pub rec: f64,
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub c: f64,
    pub vel: f64,
    pub dist: f64,
    pub dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            simp: 0.01,
            proj: 0.01,
            reach: 1000.0,
            ord: 1.0,
            init: 1.0,
            rec: 1.0,
            q: 15.0,
            p: 0.01,
            r: 10.0,
            c: 1.0,
            vel: 1.0,
            dist: 1.0,
            dir: 1500.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            simp: 0.0,
            proj: 0.0,
            reach: 0.0,
            ord: 0.0,
            init: 0.0,
            rec: 0.0,
            q: 0.0,
            p: 0.0,
            r: 0.0,
            c: 0.0,
            vel: 0.0,
            dist: 0.0,
            dir: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("loss weight {name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 13] {
        [
            ("simp", self.simp),
            ("proj", self.proj),
            ("reach", self.reach),
            ("ord", self.ord),
            ("init", self.init),
            ("rec", self.rec),
            ("q", self.q),
            ("p", self.p),
            ("r", self.r),
            ("c", self.c),
            ("vel", self.vel),
            ("dist", self.dist),
            ("dir", self.dir),
        ]
    }
}

/// Which aggregate objective to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// The anchor-adaptation objective.
    Anchor,
    /// The pose objective.
    Retarget,
    /// Their sum.
    Total,
}

impl Objective {
    fn anchor_scale(self) -> f64 {
        match self {
            Objective::Retarget => 0.0,
            _ => 1.0,
        }
    }

    fn retarget_scale(self) -> f64 {
        match self {
            Objective::Anchor => 0.0,
            _ => 1.0,
        }
    }
}

/// Value of every loss term (unweighted) and the two weighted totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub simp: f64,
    pub proj: f64,
    pub reach: f64,
    pub ord: f64,
    pub init: f64,
    pub rec: f64,
    pub vel: f64,
    pub dist: f64,
    pub dir: f64,
    pub anchor_total: f64,
    pub retarget_total: f64,
    /// Pairs left out of the direction term for having no direction.
    pub dir_excluded: usize,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 11] = [
        "simp", "proj", "reach", "ord", "init", "rec", "vel", "dist", "dir", "anchor_total", "retarget_total",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.simp,
            self.proj,
            self.reach,
            self.ord,
            self.init,
            self.rec,
            self.vel,
            self.dist,
            self.dir,
            self.anchor_total,
            self.retarget_total,
        ]
    }

    pub fn total(&self) -> f64 {
        self.anchor_total + self.retarget_total
    }

    /// Fill in the weighted totals from the term values.
    pub fn with_totals(mut self, w: &LossWeights) -> Self {
        self.anchor_total = w.simp * self.simp
            + w.proj * self.proj
            + w.reach * self.reach
            + w.ord * self.ord
            + w.init * self.init;
        self.retarget_total = w.rec * self.rec + w.vel * self.vel + w.dist * self.dist + w.dir * self.dir;
        self
    }
}
