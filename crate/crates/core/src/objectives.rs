//! Pretraining losses, their weighted total, and the score-matching oracle
//! that ties noise prediction to the score of a smoothed data distribution.

use thiserror::Error;

use crate::ad::Var;
use crate::geometry::{NoiseTriple, Vec3};
use crate::model::{coords_tensor, ModelError, ModelVars};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("shape mismatch: {left} rows vs {right} rows")]
    ShapeMismatch { left: usize, right: usize },
    #[error("loss weights must be finite and non-negative, got ({w_nsd}, {w_rec}, {w_cln})")]
    NegativeWeight { w_nsd: f64, w_rec: f64, w_cln: f64 },
    #[error("loss component is not finite")]
    NonFinite,
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("score oracle needs at least one center")]
    NoCenters,
    #[error("center {index} has {found} atoms, expected {expected}")]
    CenterSize { index: usize, expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Weights of the denoising, reconstruction and clean-alignment losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_nsd: f64,
    pub w_rec: f64,
    pub w_cln: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_nsd: 1.0, w_rec: 0.45, w_cln: 0.1 }
    }
}

impl LossWeights {
    /// Denoising only.
    pub const COORD: LossWeights = LossWeights { w_nsd: 1.0, w_rec: 0.0, w_cln: 0.0 };

    pub fn new(w_nsd: f64, w_rec: f64, w_cln: f64) -> Result<Self, ObjectiveError> {
        let w = LossWeights { w_nsd, w_rec, w_cln };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.w_nsd) && ok(self.w_rec) && ok(self.w_cln) {
            Ok(())
        } else {
            Err(ObjectiveError::NegativeWeight { w_nsd: self.w_nsd, w_rec: self.w_rec, w_cln: self.w_cln })
        }
    }

    pub fn is_zero(&self) -> bool {
        self.w_nsd == 0.0 && self.w_rec == 0.0 && self.w_cln == 0.0
    }
}

/// Loss components and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub nsd: f64,
    pub rec: f64,
    pub cln: f64,
    pub total: f64,
}

fn mse(a: &[Vec3], b: &[Vec3]) -> Result<f64, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).powi(2))).sum();
    Ok(sum / (3 * a.len()) as f64)
}

/// Mean squared error between predicted and true noise over all `3N`
/// components.
pub fn loss_nsd(eps_hat: &[Vec3], epsilon: &[Vec3]) -> Result<f64, ObjectiveError> {
    mse(eps_hat, epsilon)
}

/// Mean squared error against the scaled noise `λ·ε`.
pub fn loss_rec(eps_hat_rec: &[Vec3], epsilon: &[Vec3], lambda: f64) -> Result<f64, ObjectiveError> {
    let target: Vec<Vec3> = epsilon.iter().map(|e| e.map(|x| lambda * x)).collect();
    mse(eps_hat_rec, &target)
}

/// Mean squared clean-pass prediction (its target is zero noise).
pub fn loss_cln(eps_hat_cln: &[Vec3]) -> f64 {
    mse(eps_hat_cln, &vec![[0.0; 3]; eps_hat_cln.len()]).expect("lengths agree")
}

pub fn total_loss(nsd: f64, rec: f64, cln: f64, weights: &LossWeights) -> Result<LossReport, ObjectiveError> {
    weights.validate()?;
    if !(nsd.is_finite() && rec.is_finite() && cln.is_finite()) {
        return Err(ObjectiveError::NonFinite);
    }
    let total = weights.w_nsd * nsd + weights.w_rec * rec + weights.w_cln * cln;
    Ok(LossReport { nsd, rec, cln, total })
}

/// `(clean − noised) / σ²`, the denoising score-matching target.
pub fn dsm_target(clean: &[Vec3], noised: &[Vec3], sigma: f64) -> Result<Vec<Vec3>, ObjectiveError> {
    if !(sigma > 0.0) {
        return Err(ObjectiveError::InvalidSigma(sigma));
    }
    if clean.len() != noised.len() {
        return Err(ObjectiveError::ShapeMismatch { left: clean.len(), right: noised.len() });
    }
    let s2 = sigma * sigma;
    Ok(clean.iter().zip(noised).map(|(c, n)| [0, 1, 2].map(|k| (c[k] - n[k]) / s2)).collect())
}

/// Equal-weight isotropic Gaussian mixture over conformations.
#[derive(Clone, Debug)]
pub struct ScoreOracle {
    centers: Vec<Vec<Vec3>>,
    sigma: f64,
}

impl ScoreOracle {
    pub fn new(centers: Vec<Vec<Vec3>>, sigma: f64) -> Result<Self, ObjectiveError> {
        if centers.is_empty() {
            return Err(ObjectiveError::NoCenters);
        }
        if !(sigma > 0.0) {
            return Err(ObjectiveError::InvalidSigma(sigma));
        }
        let n = centers[0].len();
        if let Some((index, c)) = centers.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(ObjectiveError::CenterSize { index, expected: n, found: c.len() });
        }
        Ok(ScoreOracle { centers, sigma })
    }

    pub fn centers(&self) -> &[Vec<Vec3>] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_atoms(&self) -> usize {
        self.centers[0].len()
    }

    /// Draws a point: a uniformly chosen center plus `σ·N(0, I)`.
    pub fn sample(&self, rng: &mut Rng) -> (usize, Vec<Vec3>) {
        let k = rng.below(self.centers.len());
        let x = self.centers[k].iter().map(|c| c.map(|v| v + self.sigma * rng.gaussian())).collect();
        (k, x)
    }
}

/// `∇ₓ log q_σ(x)` for the mixture: the responsibility-weighted average of
/// `(center − x)/σ²`, with responsibilities from a log-sum-exp.
pub fn analytic_mixture_score(oracle: &ScoreOracle, x: &[Vec3]) -> Vec<Vec3> {
    let s2 = oracle.sigma * oracle.sigma;
    let logits: Vec<f64> = oracle
        .centers
        .iter()
        .map(|c| {
            let d2: f64 = c.iter().zip(x).flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2))).sum();
            -d2 / (2.0 * s2)
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut score = vec![[0.0; 3]; x.len()];
    for (c, w) in oracle.centers.iter().zip(&weights) {
        let r = w / z;
        for (s, (ci, xi)) in score.iter_mut().zip(c.iter().zip(x)) {
            for k in 0..3 {
                s[k] += r * (ci[k] - xi[k]) / s2;
            }
        }
    }
    score
}

/// Mean of squared differences on the tape.
pub fn mse_var<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let r = a - b;
    (r * r).mean()
}

/// Pretraining losses for one molecule, recorded on a tape.
///
/// Passes whose weight is zero are not run; their components are `None`.
/// The reconstruction loss flows back through both the rec pass and the
/// clean conditioning pass.
#[derive(Clone, Copy, Debug)]
pub struct PretrainLosses<'t> {
    pub nsd: Option<Var<'t>>,
    pub rec: Option<Var<'t>>,
    pub cln: Option<Var<'t>>,
    pub total: Var<'t>,
}

impl PretrainLosses<'_> {
    /// Component values; skipped passes read as zero.
    pub fn report(&self) -> LossReport {
        let get = |v: Option<Var<'_>>| v.map_or(0.0, |v| v.item());
        LossReport { nsd: get(self.nsd), rec: get(self.rec), cln: get(self.cln), total: self.total.item() }
    }
}

pub fn pretraining_losses<'t>(
    m: &ModelVars<'_, 't>,
    species: &[u32],
    triple: &NoiseTriple,
    weights: &LossWeights,
) -> Result<PretrainLosses<'t>, ObjectiveError> {
    weights.validate()?;
    let tape = m.tape();
    let eps = tape.constant(coords_tensor(&triple.epsilon));
    let mut total = tape.scalar(0.0);

    let nsd = if weights.w_nsd > 0.0 {
        let nodes = m.encode(tape.constant(coords_tensor(&triple.noised)), species)?;
        let l = mse_var(m.denoise(&nodes), eps);
        total = total + l * weights.w_nsd;
        Some(l)
    } else {
        None
    };

    let (mut rec, mut cln) = (None, None);
    if weights.w_rec > 0.0 || weights.w_cln > 0.0 {
        let clean_nodes = m.encode(tape.constant(coords_tensor(&triple.clean)), species)?;
        if weights.w_cln > 0.0 {
            let p = m.denoise(&clean_nodes);
            let l = (p * p).mean();
            total = total + l * weights.w_cln;
            cln = Some(l);
        }
        if weights.w_rec > 0.0 {
            let g = clean_nodes.pool();
            let rec_nodes = m.encode(tape.constant(coords_tensor(&triple.rec)), species)?;
            let l = mse_var(m.reconstruct(g, &rec_nodes)?, eps * triple.lambda);
            total = total + l * weights.w_rec;
            rec = Some(l);
        }
    }
    Ok(PretrainLosses { nsd, rec, cln, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nsd_examples() {
        let e = vec![[0.3, -0.1, 2.0], [1.0, 1.0, -4.0]];
        assert_eq!(loss_nsd(&e, &e).unwrap(), 0.0);
        assert_eq!(loss_nsd(&[[0.0; 3]; 2], &[[1.0; 3]; 2]).unwrap(), 1.0);
        assert!(loss_nsd(&e, &e[..1]).is_err());
    }

    #[test]
    fn rec_examples() {
        let e = vec![[0.3, -0.1, 2.0], [1.0, 1.0, -4.0]];
        let scaled: Vec<Vec3> = e.iter().map(|r| r.map(|x| 1.5 * x)).collect();
        assert_eq!(loss_rec(&scaled, &e, 1.5).unwrap(), 0.0);
        let p = vec![[0.2, 0.0, 0.1], [0.0, 0.5, 0.0]];
        assert_eq!(loss_rec(&p, &e, 0.0).unwrap(), loss_cln(&p));
        assert_eq!(loss_rec(&p, &e, 1.0).unwrap(), loss_nsd(&p, &e).unwrap());
    }

    #[test]
    fn cln_examples() {
        assert_eq!(loss_cln(&[[0.0; 3]; 4]), 0.0);
        assert_eq!(loss_cln(&[[1.0; 3]]), 1.0);
    }

    #[test]
    fn total_examples() {
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(0.3, 0.2, 0.1, &zero).unwrap().total, 0.0);
        assert_eq!(total_loss(0.3, 0.2, 0.1, &LossWeights::COORD).unwrap().total, 0.3);
        for w_rec in [0.40, 0.45, 0.50] {
            let r = total_loss(0.3, 0.2, 0.1, &LossWeights::new(1.0, w_rec, 0.1).unwrap()).unwrap();
            assert!((r.total - (0.3 + w_rec * 0.2 + 0.01)).abs() < 1e-12);
        }
        assert!(LossWeights::new(1.0, -0.1, 0.0).is_err());
        let bad = LossWeights { w_nsd: -1.0, w_rec: 0.0, w_cln: 0.0 };
        assert!(total_loss(0.0, 0.0, 0.0, &bad).is_err());
    }

    #[test]
    fn dsm_examples() {
        let c = vec![[0.1, 0.2, 0.3]];
        assert_eq!(dsm_target(&c, &c, 0.5).unwrap(), vec![[0.0; 3]]);
        let t = dsm_target(&[[0.0; 3]], &[[0.04, 0.0, 0.0]], 0.04).unwrap();
        assert!((t[0][0] + 25.0).abs() < 1e-12);
        assert!(dsm_target(&c, &c, 0.0).is_err());
    }

    #[test]
    fn mixture_score_examples() {
        let center = vec![[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]];
        let single = ScoreOracle::new(vec![center.clone()], 0.3).unwrap();
        assert_eq!(analytic_mixture_score(&single, &center), vec![[0.0; 3]; 2]);
        let x = vec![[1.5, 2.0, 2.0], [0.1, -1.2, 0.0]];
        let s = analytic_mixture_score(&single, &x);
        for i in 0..2 {
            for k in 0..3 {
                assert!((s[i][k] - (center[i][k] - x[i][k]) / 0.09).abs() < 1e-12);
            }
        }
        let pair = ScoreOracle::new(vec![vec![[1.0, 0.0, 0.0]], vec![[-1.0, 0.0, 0.0]]], 0.5).unwrap();
        assert_eq!(analytic_mixture_score(&pair, &[[0.0; 3]]), vec![[0.0; 3]]);
    }

    #[test]
    fn far_points_do_not_underflow() {
        let pair = ScoreOracle::new(vec![vec![[1.0, 0.0, 0.0]], vec![[-1.0, 0.0, 0.0]]], 0.01).unwrap();
        let s = analytic_mixture_score(&pair, &[[50.0, 0.0, 0.0]]);
        assert!(s[0][0].is_finite());
        assert!((s[0][0] - (1.0 - 50.0) / 1e-4).abs() < 1e-6);
    }
}
