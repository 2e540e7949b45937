use super::{embed_flat, EmbedFn, ProbeError};
use crate::geometry::Conformation;
use crate::rng::Rng;
use crate::tensor::{dot, norm};

/// Empirical prediction changes of a linear head under coordinate noise,
/// against the bound `B · L_f · ‖ε‖₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub trials: usize,
    pub max_delta: f64,
    pub mean_delta: f64,
    /// Largest `|Δ| / bound` seen (0 when every bound was 0).
    pub max_ratio: f64,
    /// Trials with `|Δ| > bound·(1 + 1e-9)`.
    pub violations: usize,
}

/// Draws `trials` Gaussian perturbations of scale `sigma` and compares
/// `|⟨w, f(x+ε) − f(x)⟩|` with `bound · lipschitz · ‖ε‖₂`. Violations are
/// counted, not treated as errors: `lipschitz` is a local estimate.
#[allow(clippy::too_many_arguments)]
pub fn noise_robustness_check<E: EmbedFn + ?Sized>(
    embed: &E,
    conf: &Conformation,
    weights: &[f64],
    bound: f64,
    lipschitz: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<RobustnessReport, ProbeError> {
    if trials == 0 {
        return Err(ProbeError::InvalidInput("need at least one trial".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ProbeError::InvalidInput(format!("sigma must be non-negative, got {sigma}")));
    }
    if norm(weights) > bound * (1.0 + 1e-12) {
        log::warn!("head norm {} exceeds the stated bound {bound}", norm(weights));
    }
    let species = conf.atomic_numbers();
    let x = conf.flat_coords();
    let base = embed_flat(embed, &x, species)?;
    if base.len() != weights.len() {
        return Err(ProbeError::InvalidInput(format!("head has {} weights for a {}-dim embedding", weights.len(), base.len())));
    }
    let head = dot(weights, &base);
    let mut rng = Rng::new(seed);
    let mut report = RobustnessReport { trials, max_delta: 0.0, mean_delta: 0.0, max_ratio: 0.0, violations: 0 };
    for _ in 0..trials {
        let eps: Vec<f64> = (0..x.len()).map(|_| sigma * rng.gaussian()).collect();
        let moved: Vec<f64> = x.iter().zip(&eps).map(|(a, b)| a + b).collect();
        let delta = (dot(weights, &embed_flat(embed, &moved, species)?) - head).abs();
        let limit = bound * lipschitz * norm(&eps);
        report.max_delta = report.max_delta.max(delta);
        report.mean_delta += delta / trials as f64;
        if limit > 0.0 {
            report.max_ratio = report.max_ratio.max(delta / limit);
        }
        if delta > limit * (1.0 + 1e-9) {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Tape, Var};
    use crate::probes::FnEmbed;

    fn identity<'t>(_: &'t Tape, x: Var<'t>) -> Var<'t> {
        x
    }

    fn water() -> Conformation {
        Conformation::new(vec![8, 1, 1], vec![[0.0; 3], [0.96, 0.0, 0.0], [-0.24, 0.93, 0.0]]).unwrap()
    }

    #[test]
    fn identity_with_unit_head_never_violates() {
        let mut w = vec![0.0; 9];
        w[0] = 1.0;
        let rep = noise_robustness_check(&FnEmbed(identity), &water(), &w, 1.0, 1.0, 0.3, 500, 4).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.max_ratio <= 1.0);
        assert!(rep.mean_delta > 0.0);
    }

    #[test]
    fn zero_noise_is_the_boundary_case() {
        let w = vec![0.5; 9];
        let rep = noise_robustness_check(&FnEmbed(identity), &water(), &w, 2.0, 1.0, 0.0, 3, 4).unwrap();
        assert_eq!((rep.max_delta, rep.violations), (0.0, 0));
    }
}
