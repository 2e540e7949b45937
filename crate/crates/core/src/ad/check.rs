//! Finite-difference verification of reverse-mode gradients.

use std::fmt;

use super::{Tape, Var};
use crate::rng::Rng;
use crate::tensor::{norm, Tensor};

/// Result for one named parameter block.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: String,
    /// `‖ad − fd‖ / max(‖ad‖, ‖fd‖, 1e-6)` over the checked entries.
    pub rel_error: f64,
    pub max_abs_error: f64,
    /// Number of entries compared.
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradientReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradientReport {
    /// True when every block passed; an empty report passes.
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| !b.passed)
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<32} {:>5} entries  rel {:.3e}  abs {:.3e}  {}",
                b.name,
                b.checked,
                b.rel_error,
                b.max_abs_error,
                if b.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn evaluate<F>(f: &F, params: &[(String, Tensor)]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = f(&tape, &vars);
    let v = out.value();
    if v.numel() == 1 {
        v.data()[0]
    } else {
        f64::NAN
    }
}

/// Compares [`Tape::backward`] against central differences for every entry of
/// every block.
///
/// `f` receives one parameter variable per block, in order, and must return a
/// scalar. The step for entry `p` is `1e-5·(1 + |p|)`.
pub fn check_gradients<F>(f: F, params: &[(String, Tensor)], tol: f64) -> GradientReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    check_impl(&f, params, tol, None)
}

/// Like [`check_gradients`] but compares at most `per_block` randomly chosen
/// entries of each block.
pub fn check_gradients_sampled<F>(
    f: F,
    params: &[(String, Tensor)],
    tol: f64,
    per_block: usize,
    seed: u64,
) -> GradientReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    check_impl(&f, params, tol, Some((per_block, seed)))
}

fn check_impl<F>(f: &F, params: &[(String, Tensor)], tol: f64, sample: Option<(usize, u64)>) -> GradientReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    if params.is_empty() {
        return GradientReport::default();
    }
    let analytic: Option<Vec<Vec<f64>>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let out = f(&tape, &vars);
        tape.backward(out).ok().map(|g| vars.iter().map(|v| g.get_or_zeros(*v)).collect())
    };
    let Some(analytic) = analytic else {
        let blocks = params
            .iter()
            .map(|(name, _)| BlockCheck {
                name: name.clone(),
                rel_error: f64::INFINITY,
                max_abs_error: f64::INFINITY,
                checked: 0,
                passed: false,
            })
            .collect();
        return GradientReport { blocks };
    };

    let mut rng = sample.map(|(_, seed)| Rng::new(seed));
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, (name, tensor)) in params.iter().enumerate() {
        let mut idx: Vec<usize> = (0..tensor.numel()).collect();
        if let (Some((per_block, _)), Some(rng)) = (sample, rng.as_mut()) {
            if idx.len() > per_block {
                rng.shuffle(&mut idx);
                idx.truncate(per_block);
                idx.sort_unstable();
            }
        }
        let mut ad = Vec::with_capacity(idx.len());
        let mut fd = Vec::with_capacity(idx.len());
        for &i in &idx {
            let p = tensor.data()[i];
            let h = 1e-5 * (1.0 + p.abs());
            work[b].1.data_mut()[i] = p + h;
            let plus = evaluate(f, &work);
            work[b].1.data_mut()[i] = p - h;
            let minus = evaluate(f, &work);
            work[b].1.data_mut()[i] = p;
            fd.push((plus - minus) / (2.0 * h));
            ad.push(analytic[b][i]);
        }
        let diff: Vec<f64> = ad.iter().zip(&fd).map(|(a, d)| a - d).collect();
        let max_abs_error = diff.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let denom = norm(&ad).max(norm(&fd)).max(1e-6);
        let rel_error = norm(&diff) / denom;
        blocks.push(BlockCheck {
            name: name.clone(),
            rel_error,
            max_abs_error,
            checked: idx.len(),
            passed: rel_error.is_finite() && rel_error <= tol,
        });
    }
    GradientReport { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{GradientFault, OpKind};

    fn regression_params() -> Vec<(String, Tensor)> {
        vec![
            ("w".into(), Tensor::from_rows(&[[0.3], [-0.8], [1.1]])),
            ("b".into(), Tensor::scalar(0.25)),
        ]
    }

    fn regression_loss<'t>(tape: &'t Tape, p: &[Var<'t>]) -> Var<'t> {
        let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0, 0.5], [-1.0, 0.3, 2.2], [0.0, -0.7, 1.4]]));
        let y = tape.constant(Tensor::column(vec![1.0, -2.0, 0.5]));
        let r = x.matmul(p[0]) + p[1] - y;
        (r * r).mean()
    }

    #[test]
    fn linear_regression_passes() {
        let report = check_gradients(regression_loss, &regression_params(), 1e-4);
        assert!(report.passed(), "{report}");
        assert_eq!(report.blocks.len(), 2);
    }

    #[test]
    fn empty_parameter_list_passes() {
        let report = check_gradients(|tape, _| tape.scalar(3.0), &[], 1e-4);
        assert!(report.blocks.is_empty());
        assert!(report.passed());
    }

    #[test]
    fn corrupted_rule_is_caught() {
        fn faulty<'t>(tape: &'t Tape, p: &[Var<'t>]) -> Var<'t> {
            tape.set_gradient_fault(Some(GradientFault { kind: OpKind::MatMul, scale: 1.5 }));
            regression_loss(tape, p)
        }
        let report = check_gradients(faulty, &regression_params(), 1e-4);
        assert!(!report.passed());
        assert_eq!(report.failures().next().unwrap().name, "w");
    }

    #[test]
    fn sampled_check_limits_entries() {
        let params = vec![("w".into(), Tensor::from_rows(&[[0.3], [-0.8], [1.1]])), ("b".into(), Tensor::scalar(0.25))];
        let report = check_gradients_sampled(regression_loss, &params, 1e-4, 2, 9);
        assert_eq!(report.blocks[0].checked, 2);
        assert!(report.passed());
    }
}
