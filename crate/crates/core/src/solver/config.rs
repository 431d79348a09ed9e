use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preconditioner used by the conjugate-gradient solve inside the background step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    /// Diagonal of the normal operator (overlap counts plus fidelity and TV terms).
    Jacobi,
    /// Exact inverse of each pixel's `t × t` block.
    Block,
}

/// Hyperparameters and iteration controls of the decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the non-local low-rank term.
    pub omega: f64,
    /// L1 weight of the rain layer; when absent it is `max(3σ̂, mu_min)` with
    /// `σ̂ = 1.4826 · MAD(∇_t O)`.
    pub mu: Option<f64>,
    pub mu_min: f64,
    /// Weight of the temporal total variation.
    pub gamma: f64,
    /// The per-group weight `λ_i`, shared by every group.
    pub lambda_global: f64,
    pub d_max: usize,
    pub patch: usize,
    pub group: usize,
    pub stride: usize,
    pub search_radius: usize,
    pub outer_max: usize,
    /// Stop when `‖B_k − B_{k−1}‖ / ‖B_{k−1}‖` falls below this.
    pub outer_tol: f64,
    pub admm_rho: f64,
    pub admm_max: usize,
    /// Bound on the RMS primal and dual residuals of the ADMM.
    pub admm_tol: f64,
    /// Relative residual target of the conjugate-gradient solve.
    pub cg_tol: f64,
    pub cg_max: usize,
    pub cg_preconditioner: Preconditioner,
    pub enable_subspace: bool,
    pub enable_affine: bool,
    /// Re-cluster every this many outer iterations (0 disables).
    pub recluster_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            omega: 0.5,
            mu: None,
            mu_min: 0.02,
            gamma: 0.05,
            lambda_global: 1.0,
            d_max: 3,
            patch: 8,
            group: 32,
            stride: 4,
            search_radius: 20,
            outer_max: 30,
            outer_tol: 1e-4,
            admm_rho: 1.0,
            admm_max: 60,
            admm_tol: 1e-5,
            cg_tol: 1e-8,
            cg_max: 500,
            cg_preconditioner: Preconditioner::Jacobi,
            enable_subspace: true,
            enable_affine: true,
            recluster_every: 5,
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("solver.{key}: {msg}"))
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("omega", self.omega),
            ("gamma", self.gamma),
            ("mu_min", self.mu_min),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(key, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(bad("mu", format!("must be a finite value >= 0, got {mu}")));
            }
        }
        let positive = [
            ("lambda_global", self.lambda_global),
            ("outer_tol", self.outer_tol),
            ("admm_rho", self.admm_rho),
            ("admm_tol", self.admm_tol),
            ("cg_tol", self.cg_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(key, format!("must be a finite value > 0, got {v}")));
            }
        }
        if !(1..=3).contains(&self.d_max) {
            return Err(bad(
                "d_max",
                format!("must be 1, 2 or 3, got {}", self.d_max),
            ));
        }
        let counts = [
            ("patch", self.patch),
            ("group", self.group),
            ("stride", self.stride),
            ("outer_max", self.outer_max),
            ("admm_max", self.admm_max),
            ("cg_max", self.cg_max),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(bad(key, "must be at least 1"));
            }
        }
        if self.stride > self.patch {
            return Err(bad(
                "stride",
                format!(
                    "must not exceed the patch size {} (got {})",
                    self.patch, self.stride
                ),
            ));
        }
        Ok(())
    }
}
