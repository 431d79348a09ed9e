use super::config::SolverConfig;
use super::steps::project_tubes;
use crate::align::{warp_affine_f64, Affine};
use crate::error::{Error, Result};
use crate::linalg::tnn;
use crate::nonlocal::{gather_tubes, GroupState, PatchGroup};
use crate::tensor::{temporal_gradient, Element, Tensor3};

/// `O∘τ`: every frame warped by its own affine parameters.
pub fn warp_video<T: Element>(observed: &Tensor3<T>, tau: &[Affine]) -> Result<Tensor3<f64>> {
    let t = observed.frames();
    if tau.len() != t {
        return Err(Error::arg(format!(
            "{} affine parameter sets for {t} frames",
            tau.len()
        )));
    }
    let mut out = Tensor3::<f64>::zeros(observed.height(), observed.width(), t)?;
    for (f, params) in tau.iter().enumerate() {
        if params.is_identity() {
            params.validate()?;
            for (o, &v) in out.frame_mut(f).iter_mut().zip(observed.frame(f)) {
                *o = v.to_f64();
            }
        } else {
            let warped = warp_affine_f64(&observed.frame_image(f), params)?;
            out.frame_mut(f).copy_from_slice(&warped);
        }
    }
    Ok(out)
}

/// The individual terms of the full objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// `½‖B + R − O∘τ‖²`
    pub fidelity: f64,
    /// `μ‖R‖₁`
    pub sparsity: f64,
    /// `ω Σ_i (λ_i⁻²‖S_iB ×₃ Q_i − J_i‖² + tnn(J_i))`
    pub nonlocal: f64,
    /// `γ‖∇_t B‖₁`
    pub smoothness: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.sparsity + self.nonlocal + self.smoothness
    }
}

/// Full objective for a given `O∘τ`; `use_cached_tnn` trusts `GroupState::j_tnn`.
pub(crate) fn terms_warped(
    o_warped: &Tensor3<f64>,
    b: &Tensor3<f64>,
    r: &Tensor3<f64>,
    mu: f64,
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
    use_cached_tnn: bool,
) -> Result<ObjectiveTerms> {
    o_warped.require_same_shape(b, "objective")?;
    o_warped.require_same_shape(r, "objective")?;
    if groups.len() != states.len() {
        return Err(Error::arg(format!(
            "{} groups but {} group states",
            groups.len(),
            states.len()
        )));
    }
    let t = b.frames();
    let mut terms = ObjectiveTerms::default();
    for ((&o, &bv), &rv) in o_warped.data().iter().zip(b.data()).zip(r.data()) {
        let e = bv + rv - o;
        terms.fidelity += 0.5 * e * e;
        terms.sparsity += rv.abs();
    }
    terms.sparsity *= mu;
    if cfg.omega != 0.0 {
        for (group, state) in groups.iter().zip(states) {
            let pp = group.patch_size * group.patch_size;
            let expected = [pp, group.members.len(), state.q.rows()];
            if state.q.cols() != t || state.j.dims() != expected {
                return Err(Error::arg(format!(
                    "group state has Q {}x{} and J {:?}; expected Q dx{t} and J {expected:?}",
                    state.q.rows(),
                    state.q.cols(),
                    state.j.dims()
                )));
            }
            let tubes = gather_tubes(b, group);
            let proj = project_tubes(&tubes, t, group, &state.q);
            let fit: f64 = proj
                .data()
                .iter()
                .zip(state.j.data())
                .map(|(a, c)| (a - c).powi(2))
                .sum();
            let nuclear = if use_cached_tnn {
                state.j_tnn
            } else {
                tnn(&state.j)?
            };
            terms.nonlocal += fit / (state.lambda * state.lambda) + nuclear;
        }
        terms.nonlocal *= cfg.omega;
    }
    if cfg.gamma != 0.0 && t > 1 {
        terms.smoothness = cfg.gamma * temporal_gradient(b)?.l1_norm();
    }
    Ok(terms)
}

/// Value of the full decomposition objective.
///
/// `mu` is taken from the configuration and must be set explicitly.
pub fn objective<T: Element>(
    observed: &Tensor3<T>,
    b: &Tensor3<f64>,
    r: &Tensor3<f64>,
    tau: &[Affine],
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(objective_terms(observed, b, r, tau, groups, states, cfg)?.total())
}

pub fn objective_terms<T: Element>(
    observed: &Tensor3<T>,
    b: &Tensor3<f64>,
    r: &Tensor3<f64>,
    tau: &[Affine],
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
) -> Result<ObjectiveTerms> {
    let mu = cfg
        .mu
        .ok_or_else(|| Error::arg("objective needs an explicit mu in the solver configuration"))?;
    observed.require_same_shape(b, "objective")?;
    let warped = warp_video(observed, tau)?;
    terms_warped(&warped, b, r, mu, groups, states, cfg, false)
}
