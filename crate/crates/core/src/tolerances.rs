//! Numerical thresholds shared by every stage of the pipeline.
//!
//! All of them can be overridden from the `tolerances` object of a scenario
//! config; missing keys keep the defaults below.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative singular-value cutoff for numerical ranks.
    pub rank_tol: f64,
    /// Deepest Lie hull layer that is generated.
    pub max_depth: usize,
    /// Newton projection stops once `|Φ| ≤ proj_tol`.
    pub proj_tol: f64,
    pub max_newton: usize,
    /// Characteristic residual `max_j |⟨X_j, ν⟩|` accepted for points of `E`.
    pub char_tol: f64,
    pub dedup_radius: f64,
    /// Smallest admissible `|∇Φ|` near the boundary.
    pub grad_floor: f64,
    /// `h(x, ν)` below this is treated as characteristic when seeding and
    /// when starting extremals.
    pub ham_floor: f64,
    /// Band nodes whose boundary data has `h(x̂, ν) ≥ freeze_floor` keep
    /// their seed; the rest are only upper bounds during sweeping.
    pub freeze_floor: f64,
    /// Sweeping stops when the max node change is below `conv_tol_rel · diam`.
    pub conv_tol_rel: f64,
    pub max_sweeps: usize,
    /// Minimized annihilation-rate residual allowed during singular continuation.
    pub sing_tol: f64,
    pub p_floor: f64,
    /// Allowed drift of `h` along feedback extremals.
    pub cons_tol: f64,
    /// Integration step as a fraction of the bounding-box diameter.
    pub dt_rel: f64,
    pub bisect_iters: usize,
    /// A trajectory whose `Φ` rises to within this of zero counts as touching Γ.
    pub touch_tol: f64,
    /// Lipschitz-quotient growth between nested resolutions that flags a node.
    pub growth_factor: f64,
    /// Sing-map candidates keep this many coarse cells away from Γ.
    pub sing_margin_cells: f64,
    pub oracle_samples: usize,
    pub char_seeds: usize,
    pub sbgc_trials: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: 1e-9,
            max_depth: 6,
            proj_tol: 1e-10,
            max_newton: 50,
            char_tol: 1e-8,
            dedup_radius: 1e-4,
            grad_floor: 1e-6,
            ham_floor: 1e-4,
            freeze_floor: 1e-2,
            conv_tol_rel: 1e-8,
            max_sweeps: 500,
            sing_tol: 1e-6,
            p_floor: 1e-10,
            cons_tol: 1e-6,
            dt_rel: 1e-3,
            bisect_iters: 60,
            touch_tol: 1e-12,
            growth_factor: 1.3,
            sing_margin_cells: 2.0,
            oracle_samples: 64,
            char_seeds: 256,
            sbgc_trials: 8,
        }
    }
}
