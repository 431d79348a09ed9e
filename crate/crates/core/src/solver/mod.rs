//! Alternating minimisation of the full decomposition objective
//!
//! ```text
//! ½‖B + R − O∘τ‖² + μ‖R‖₁ + ω Σ_i (λ_i⁻²‖S_iB ×₃ Q_i − J_i‖² + tnn(J_i)) + γ‖∇_t B‖₁
//! ```
//!
//! over the per-frame alignment `τ`, the rain layer `R`, the per-group temporal
//! bases `Q_i` and low-rank surrogates `J_i`, and the background `B`.

mod background;
mod config;
mod objective;
mod steps;

pub use background::{background_objective, solve_b};
pub use config::{Preconditioner, SolverConfig};
pub use objective::{objective, objective_terms, warp_video, ObjectiveTerms};
pub use steps::{select_rank, solve_j, solve_q, solve_r, RANK_TOLERANCE};

use crate::align::{update_tau_robust, Affine};
use crate::error::{Error, Result};
use crate::nonlocal::{cluster_groups, gather_tubes, GroupState, PatchGroup};
use crate::tensor::{temporal_gradient, temporal_median, Element, Matrix, Tensor3, VideoTensor};
use background::solve_b_report;
use steps::{group_value, project_tubes, solve_j_with_norm, temporal_basis};

/// Diagnostics of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    /// `‖B_k − B_{k−1}‖ / ‖B_{k−1}‖`
    pub relative_change: f64,
    /// Fraction of non-zero entries of the rain layer.
    pub rain_sparsity: f64,
    pub admm_iterations: usize,
    pub cg_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct DecompositionResult {
    /// Background clamped to `[0, 1]`.
    pub background: VideoTensor,
    /// `O∘τ − background`, so that the two exported layers add up to the aligned input.
    pub rain: VideoTensor,
    /// The sparse rain layer as estimated, before the residual is folded in.
    pub sparse_rain: VideoTensor,
    pub tau: Vec<Affine>,
    /// `O∘τ − B − R` with the unclamped background.
    pub residual: VideoTensor,
    /// Objective at the initial point.
    pub initial_objective: f64,
    pub history: Vec<IterationRecord>,
    /// Whether the relative background change fell below `outer_tol`.
    pub converged: bool,
    /// The rain weight actually used.
    pub mu: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust noise level of a video: `1.4826 · MAD` of its temporal differences.
pub fn noise_sigma<T: Element>(observed: &Tensor3<T>) -> Result<f64> {
    let g = temporal_gradient(observed)?;
    let mut values: Vec<f64> = g.data().iter().map(|v| v.to_f64()).collect();
    let m = median(&mut values);
    for v in values.iter_mut() {
        *v = (*v - m).abs();
    }
    Ok(1.4826 * median(&mut values))
}

/// The rain weight used when none is configured: `max(3σ̂, mu_min)`.
pub fn mu_auto<T: Element>(observed: &Tensor3<T>, mu_min: f64) -> Result<f64> {
    Ok((3.0 * noise_sigma(observed)?).max(mu_min))
}

fn replicate(frame: &[f64], dims: [usize; 3]) -> Tensor3<f64> {
    let mut out = Tensor3::<f64>::zeros(dims[0], dims[1], dims[2]).expect("valid dims");
    for f in 0..dims[2] {
        out.frame_mut(f).copy_from_slice(frame);
    }
    out
}

fn rain_sparsity(r: &Tensor3<f64>) -> f64 {
    r.data().iter().filter(|v| **v != 0.0).count() as f64 / r.len() as f64
}

fn require_finite(x: &Tensor3<f64>, step: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "{step} update produced non-finite values"
        )))
    }
}

/// Iterate of the alternating scheme. Each `step_*` method solves one
/// subproblem with every other variable held fixed.
#[derive(Clone, Debug)]
pub struct SolverState {
    observed: VideoTensor,
    cfg: SolverConfig,
    mu: f64,
    tau: Vec<Affine>,
    o_warped: Tensor3<f64>,
    b: Tensor3<f64>,
    r: Tensor3<f64>,
    groups: Vec<PatchGroup>,
    states: Vec<GroupState>,
    /// `J_i` is the low-rank prox of the current projection.
    j_fresh: Vec<bool>,
    /// ADMM and CG iteration counts of the last background update.
    inner_iterations: (usize, usize),
}

impl SolverState {
    /// Initial point: identity alignment, temporal-median background,
    /// soft-thresholded residual as rain.
    pub fn new(observed: &VideoTensor, cfg: &SolverConfig) -> Result<Self> {
        let tau = vec![Affine::IDENTITY; observed.frames()];
        Self::with_tau(observed, cfg, &tau)
    }

    /// Like [`SolverState::new`] but starting from the given alignment.
    pub fn with_tau(observed: &VideoTensor, cfg: &SolverConfig, tau: &[Affine]) -> Result<Self> {
        cfg.validate()?;
        let t = observed.frames();
        if t < 2 {
            return Err(Error::arg(format!(
                "the decomposition needs at least 2 frames, got {t}"
            )));
        }
        let mu = match cfg.mu {
            Some(mu) => mu,
            None => mu_auto(observed, cfg.mu_min)?,
        };
        let o_warped = warp_video(observed, tau)?;
        let reference = temporal_median(&o_warped);
        let med: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
        let b = replicate(&med, o_warped.dims());
        let r = solve_r(&o_warped, &b, mu)?;
        let groups = cluster_groups(
            &reference,
            cfg.patch,
            cfg.group,
            cfg.stride,
            cfg.search_radius,
        )?;
        let mut state = SolverState {
            observed: observed.clone(),
            cfg: cfg.clone(),
            mu,
            tau: tau.to_vec(),
            o_warped,
            b,
            r,
            groups: Vec::new(),
            states: Vec::new(),
            j_fresh: Vec::new(),
            inner_iterations: (0, 0),
        };
        let states = groups
            .iter()
            .map(|g| Ok(state.fresh_group_state(g)?.0))
            .collect::<Result<Vec<_>>>()?;
        state.j_fresh = vec![true; groups.len()];
        state.groups = groups;
        state.states = states;
        Ok(state)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn background(&self) -> &Tensor3<f64> {
        &self.b
    }

    pub fn rain(&self) -> &Tensor3<f64> {
        &self.r
    }

    pub fn tau(&self) -> &[Affine] {
        &self.tau
    }

    pub fn warped_observation(&self) -> &Tensor3<f64> {
        &self.o_warped
    }

    pub fn groups(&self) -> &[PatchGroup] {
        &self.groups
    }

    pub fn group_states(&self) -> &[GroupState] {
        &self.states
    }

    /// Current value of the full objective.
    pub fn objective(&self) -> Result<f64> {
        Ok(self.objective_terms()?.total())
    }

    pub fn objective_terms(&self) -> Result<ObjectiveTerms> {
        objective::terms_warped(
            &self.o_warped,
            &self.b,
            &self.r,
            self.mu,
            &self.groups,
            &self.states,
            &self.cfg,
            true,
        )
    }

    fn candidate_basis(&self, tubes: &[f64]) -> Matrix {
        let t = self.b.frames();
        if !self.cfg.enable_subspace {
            return Matrix::identity(t);
        }
        let (basis, sigma) = temporal_basis(tubes, t);
        let d = select_rank(&sigma, self.cfg.d_max).min(t);
        Matrix::from_fn(d, t, |r, c| basis.get(r, c))
    }

    /// Subspace and low-rank surrogate fitted to the current background,
    /// with the group term they attain.
    fn fresh_group_state(&self, group: &PatchGroup) -> Result<(GroupState, f64)> {
        let t = self.b.frames();
        let tubes = gather_tubes(&self.b, group);
        let q = self.candidate_basis(&tubes);
        let proj = project_tubes(&tubes, t, group, &q);
        let lambda = self.cfg.lambda_global;
        let (j, j_tnn) = solve_j_with_norm(&proj, lambda)?;
        let value = group_value(&proj, &j, j_tnn, self.cfg.omega, lambda);
        Ok((
            GroupState {
                q,
                j,
                lambda,
                j_tnn,
            },
            value,
        ))
    }

    fn current_group_value(&self, i: usize) -> f64 {
        let t = self.b.frames();
        let (g, s) = (&self.groups[i], &self.states[i]);
        let proj = project_tubes(&gather_tubes(&self.b, g), t, g, &s.q);
        group_value(&proj, &s.j, s.j_tnn, self.cfg.omega, s.lambda)
    }

    /// One linearised alignment step per frame, with the rain layer of that
    /// frame minimised out jointly: the step decreases `Σ huber_μ(O∘τ − B)`
    /// and the frame's `R` is reset to the matching shrinkage. A frame whose
    /// step fails numerically keeps its previous parameters.
    pub fn step_tau(&mut self) -> Result<()> {
        let t = self.b.frames();
        for f in 0..t {
            let frame = self.observed.frame_image(f);
            let next = match update_tau_robust(&frame, self.b.frame(f), self.mu, &self.tau[f]) {
                Ok((p, _)) => p,
                Err(Error::Numeric(_)) => continue,
                Err(e) => return Err(e),
            };
            if next != self.tau[f] {
                let warped = crate::align::warp_affine_f64(&frame, &next)?;
                let mu = self.mu;
                for ((r, &o), &b) in self
                    .r
                    .frame_mut(f)
                    .iter_mut()
                    .zip(&warped)
                    .zip(self.b.frame(f))
                {
                    let e = o - b;
                    *r = e.signum() * (e.abs() - mu).max(0.0);
                }
                self.o_warped.frame_mut(f).copy_from_slice(&warped);
                self.tau[f] = next;
            }
        }
        require_finite(&self.o_warped, "alignment")
    }

    pub fn step_rain(&mut self) -> Result<()> {
        self.r = solve_r(&self.o_warped, &self.b, self.mu)?;
        require_finite(&self.r, "rain")
    }

    /// Temporal bases from the top singular vectors of each group.
    ///
    /// The top-`d` basis maximises the energy captured by the projection,
    /// which is not the same as minimising the group term for the current
    /// `J_i`. The new pair `(Q_i, prox(S_iB ×₃ Q_i))` is therefore only
    /// accepted when it does not raise the group term; otherwise the previous
    /// pair is kept. With the subspace disabled the bases stay at the identity.
    pub fn step_subspace(&mut self) -> Result<()> {
        if !self.cfg.enable_subspace || self.cfg.omega == 0.0 {
            return Ok(());
        }
        for i in 0..self.groups.len() {
            let (candidate, new_value) = self.fresh_group_state(&self.groups[i])?;
            if new_value <= self.current_group_value(i) {
                self.states[i] = candidate;
                self.j_fresh[i] = true;
            }
        }
        let bad = self
            .states
            .iter()
            .any(|s| !s.j.is_finite() || !s.q.data().iter().all(|v| v.is_finite()));
        if bad {
            return Err(Error::numeric("subspace update produced non-finite values"));
        }
        Ok(())
    }

    /// `J_i = svt_tnn(S_iB ×₃ Q_i, λ²/2)` for every group whose surrogate is stale.
    pub fn step_lowrank(&mut self) -> Result<()> {
        let t = self.b.frames();
        for i in 0..self.groups.len() {
            if self.j_fresh[i] {
                continue;
            }
            let g = &self.groups[i];
            let s = &mut self.states[i];
            let proj = project_tubes(&gather_tubes(&self.b, g), t, g, &s.q);
            let (j, j_tnn) = solve_j_with_norm(&proj, s.lambda)?;
            if !j.is_finite() || !j_tnn.is_finite() {
                return Err(Error::numeric("low-rank update produced non-finite values"));
            }
            s.j = j;
            s.j_tnn = j_tnn;
            self.j_fresh[i] = true;
        }
        Ok(())
    }

    pub fn step_background(&mut self) -> Result<()> {
        let report = solve_b_report(
            &self.o_warped,
            &self.r,
            &self.groups,
            &self.states,
            &self.cfg,
            &self.b,
        )?;
        require_finite(&report.b, "background")?;
        self.inner_iterations = (report.admm_iterations, report.cg_iterations);
        self.b = report.b;
        self.j_fresh.fill(false);
        Ok(())
    }

    /// Re-runs block matching on the temporal median of the current
    /// background. The new grouping (with fitted `Q_i`, `J_i`) replaces the
    /// old one only if its total group term is not larger. Returns whether
    /// the grouping changed.
    pub fn recluster(&mut self) -> Result<bool> {
        let cfg = &self.cfg;
        let reference = temporal_median(&self.b);
        let groups = cluster_groups(
            &reference,
            cfg.patch,
            cfg.group,
            cfg.stride,
            cfg.search_radius,
        )?;
        if groups == self.groups {
            return Ok(false);
        }
        let mut states = Vec::with_capacity(groups.len());
        let mut new_total = 0.0;
        for g in &groups {
            let (s, value) = self.fresh_group_state(g)?;
            states.push(s);
            new_total += value;
        }
        let old_total: f64 = (0..self.groups.len())
            .map(|i| self.current_group_value(i))
            .sum();
        if new_total > old_total {
            return Ok(false);
        }
        self.j_fresh = vec![true; groups.len()];
        self.groups = groups;
        self.states = states;
        Ok(true)
    }

    /// Runs one full outer iteration and returns its diagnostics.
    pub fn iterate(&mut self, iteration: usize) -> Result<IterationRecord> {
        let previous = self.b.clone();
        if self.cfg.enable_affine {
            self.step_tau()?;
        }
        self.step_rain()?;
        self.step_subspace()?;
        self.step_lowrank()?;
        self.step_background()?;
        if self.cfg.recluster_every > 0 && iteration.is_multiple_of(self.cfg.recluster_every) {
            self.recluster()?;
        }
        let objective = self.objective()?;
        if !objective.is_finite() {
            return Err(Error::numeric(format!(
                "objective became non-finite after the background update of iteration {iteration}"
            )));
        }
        let base = previous.frobenius_norm();
        let diff = self.b.sub(&previous)?.frobenius_norm();
        let relative_change = if base > 0.0 {
            diff / base
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(IterationRecord {
            objective,
            relative_change,
            rain_sparsity: rain_sparsity(&self.r),
            admm_iterations: self.inner_iterations.0,
            cg_iterations: self.inner_iterations.1,
        })
    }

    /// Exports the current iterate.
    pub fn finish(
        self,
        initial_objective: f64,
        history: Vec<IterationRecord>,
        converged: bool,
    ) -> DecompositionResult {
        let clamped = self.b.map(|v| v.clamp(0.0, 1.0));
        let rain = self.o_warped.sub(&clamped).expect("same shape");
        let residual = self
            .o_warped
            .zip_with(&self.b, |o, b| o - b)
            .and_then(|x| x.sub(&self.r))
            .expect("same shape");
        DecompositionResult {
            background: clamped.cast(),
            rain: rain.cast(),
            sparse_rain: self.r.cast(),
            tau: self.tau,
            residual: residual.cast(),
            initial_objective,
            history,
            converged,
            mu: self.mu,
        }
    }
}

fn run(mut state: SolverState) -> Result<DecompositionResult> {
    let initial = state.objective()?;
    let mut history = Vec::with_capacity(state.cfg.outer_max);
    let mut converged = false;
    for it in 1..=state.cfg.outer_max {
        let record = state.iterate(it)?;
        history.push(record);
        if record.relative_change < state.cfg.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(state.finish(initial, history, converged))
}

/// Decomposes a single-channel video into background and rain.
pub fn derain(observed: &VideoTensor, cfg: &SolverConfig) -> Result<DecompositionResult> {
    run(SolverState::new(observed, cfg)?)
}

/// Decomposition with a fixed alignment; `cfg.enable_affine` is ignored.
pub fn derain_with_tau(
    observed: &VideoTensor,
    cfg: &SolverConfig,
    tau: &[Affine],
) -> Result<DecompositionResult> {
    let cfg = SolverConfig {
        enable_affine: false,
        ..cfg.clone()
    };
    run(SolverState::with_tau(observed, &cfg, tau)?)
}

/// Per-channel decomposition. For colour input the alignment is estimated
/// once on the luminance and shared by all channels.
pub fn derain_channels(
    channels: &[VideoTensor],
    cfg: &SolverConfig,
) -> Result<Vec<DecompositionResult>> {
    match channels {
        [] => Err(Error::arg("no channels to decompose")),
        [single] => Ok(vec![derain(single, cfg)?]),
        [r, g, b] => {
            let tau = if cfg.enable_affine {
                let mut luma = r.clone();
                for (((o, &r), &g), &b) in luma
                    .data_mut()
                    .iter_mut()
                    .zip(r.data())
                    .zip(g.data())
                    .zip(b.data())
                {
                    *o = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32;
                }
                derain(&luma, cfg)?.tau
            } else {
                vec![Affine::IDENTITY; r.frames()]
            };
            channels
                .iter()
                .map(|c| derain_with_tau(c, cfg, &tau))
                .collect()
        }
        _ => Err(Error::arg(format!(
            "expected 1 or 3 channels, got {}",
            channels.len()
        ))),
    }
}
