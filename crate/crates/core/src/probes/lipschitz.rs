use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::{linearize, write_text, EmbedFn, ProbeError};
use crate::ad::Linearization;
use crate::geometry::{rigid_basis, Conformation, RigidProjector};
use crate::parallel;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{dot, norm};

/// How the dominant eigenvalue of `M = P Jᵀ J P` is extracted from the
/// sequence of operator applications. Both cost one JVP and one VJP per step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PowerMethod {
    /// Rayleigh–Ritz over the Krylov space spanned by all iterates, with full
    /// reorthogonalization. Exact once the step count reaches the non-rigid
    /// dimension `3N − 6`.
    #[default]
    Krylov,
    /// Classic power iteration: `v ← M v / ‖M v‖`, estimate `vᵀ M v`.
    Plain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzEstimate {
    /// Estimates of `λ_max(M)` after each step; non-decreasing.
    pub rayleigh: Vec<f64>,
    pub method: PowerMethod,
}

impl LipschitzEstimate {
    /// `L(x)` after the final step.
    pub fn value(&self) -> f64 {
        self.at(self.rayleigh.len())
    }

    /// `L(x)` after `steps` steps (clamped to the run length).
    pub fn at(&self, steps: usize) -> f64 {
        let k = steps.clamp(1, self.rayleigh.len());
        self.rayleigh[k - 1].max(0.0).sqrt()
    }
}

struct Operator<'a> {
    lin: &'a Linearization,
    proj: &'a RigidProjector,
}

impl Operator<'_> {
    /// `P Jᵀ J P v`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, ProbeError> {
        let pv = self.proj.project(v)?;
        let jv = self.lin.jvp(&pv)?;
        Ok(self.proj.project(&self.lin.vjp(&jv)?)?)
    }
}

fn start_vector(proj: &RigidProjector, seed: u64) -> Result<Vec<f64>, ProbeError> {
    let mut rng = Rng::new(seed);
    for _ in 0..10 {
        let p = proj.project(&rng.unit_vector(proj.dimension()))?;
        let n = norm(&p);
        if n > 1e-8 {
            return Ok(p.into_iter().map(|x| x / n).collect());
        }
    }
    Err(ProbeError::Undefined)
}

/// Local Lipschitz constant `‖J_f(x) P‖₂` of `embed` at `conf`, where `P`
/// removes rigid-motion directions. Uses only Jacobian-vector products.
pub fn lipschitz_power<E: EmbedFn + ?Sized>(
    embed: &E,
    conf: &Conformation,
    steps: usize,
    seed: u64,
    method: PowerMethod,
) -> Result<LipschitzEstimate, ProbeError> {
    if steps == 0 {
        return Err(ProbeError::InvalidSteps);
    }
    let proj = rigid_basis(conf);
    if proj.rank() == 0 {
        return Err(ProbeError::Undefined);
    }
    let v0 = start_vector(&proj, seed)?;
    let lin = linearize(embed, conf)?;
    let op = Operator { lin: &lin, proj: &proj };
    let rayleigh = match method {
        PowerMethod::Plain => plain(&op, v0, steps)?,
        PowerMethod::Krylov => krylov(&op, v0, steps, proj.rank())?,
    };
    Ok(LipschitzEstimate { rayleigh, method })
}

fn plain(op: &Operator<'_>, mut v: Vec<f64>, steps: usize) -> Result<Vec<f64>, ProbeError> {
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let w = op.apply(&v)?;
        out.push(dot(&v, &w));
        let n = norm(&w);
        if n == 0.0 {
            out.resize(steps, 0.0);
            break;
        }
        v = w.into_iter().map(|x| x / n).collect();
    }
    Ok(out)
}

fn krylov(op: &Operator<'_>, v0: Vec<f64>, steps: usize, rank: usize) -> Result<Vec<f64>, ProbeError> {
    let mut basis = vec![v0];
    let mut h = DMatrix::<f64>::zeros(steps, steps);
    let mut out = Vec::with_capacity(steps);
    for j in 0..steps {
        let w = op.apply(&basis[j])?;
        for (i, q) in basis.iter().enumerate() {
            let c = dot(q, &w);
            h[(i, j)] = c;
            h[(j, i)] = c;
        }
        let k = j + 1;
        let ritz = SymmetricEigen::new(h.view((0, 0), (k, k)).into_owned()).eigenvalues.max();
        out.push(ritz);

        let mut r = w.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &r);
                r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let rn = norm(&r);
        // An invariant subspace makes the Ritz value exact.
        if k == rank || rn <= 1e-10 * norm(&w).max(f64::MIN_POSITIVE) {
            out.resize(steps, ritz);
            break;
        }
        basis.push(r.into_iter().map(|x| x / rn).collect());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzRow {
    pub molecule: usize,
    pub steps: usize,
    pub lipschitz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzSummary {
    pub steps: usize,
    pub median: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
    pub summary: Vec<LipschitzSummary>,
    /// Molecules without non-rigid directions, left out of the report.
    pub skipped: Vec<usize>,
}

impl LipschitzReport {
    pub fn summary_at(&self, steps: usize) -> Option<&LipschitzSummary> {
        self.summary.iter().find(|s| s.steps == steps)
    }
}

/// Quantile `q ∈ [0, 1]` with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `L(x)` for every molecule at each of `step_counts`, read as prefixes of a
/// single run per molecule, with median and 95th percentile per step count.
/// Molecules are probed in parallel with per-molecule seeds.
pub fn lipschitz_report<E: EmbedFn + ?Sized>(
    embed: &E,
    molecules: &[Conformation],
    step_counts: &[usize],
    seed: u64,
    method: PowerMethod,
) -> Result<LipschitzReport, ProbeError> {
    if molecules.is_empty() {
        return Err(ProbeError::EmptyCorpus);
    }
    let max_steps = step_counts.iter().copied().max().ok_or(ProbeError::InvalidSteps)?;
    if step_counts.contains(&0) {
        return Err(ProbeError::InvalidSteps);
    }
    let estimates: Vec<Option<LipschitzEstimate>> = parallel::install(|| {
        molecules
            .par_iter()
            .enumerate()
            .map(|(i, conf)| match lipschitz_power(embed, conf, max_steps, derive_seed(seed, i as u64), method) {
                Ok(e) => Ok(Some(e)),
                Err(ProbeError::Undefined) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_, _>>()
    })?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (molecule, est) in estimates.iter().enumerate() {
        match est {
            Some(e) => rows.extend(step_counts.iter().map(|&steps| LipschitzRow { molecule, steps, lipschitz: e.at(steps) })),
            None => skipped.push(molecule),
        }
    }
    if rows.is_empty() {
        return Err(ProbeError::Undefined);
    }
    let summary = step_counts
        .iter()
        .map(|&steps| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.steps == steps).map(|r| r.lipschitz).collect();
            LipschitzSummary { steps, median: percentile(&vals, 0.5), p95: percentile(&vals, 0.95) }
        })
        .collect();
    Ok(LipschitzReport { rows, summary, skipped })
}

/// `molecule_id,steps,L` rows.
pub fn write_lipschitz_csv(path: &Path, report: &LipschitzReport) -> Result<(), ProbeError> {
    let mut out = String::from("molecule_id,steps,L\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{:e}", r.molecule, r.steps, r.lipschitz);
    }
    write_text(path, &out)
}

/// One row per statistic (median, p95), one column per step count.
pub fn write_lipschitz_summary_csv(path: &Path, report: &LipschitzReport) -> Result<(), ProbeError> {
    let mut out = String::from("statistic");
    for s in &report.summary {
        let _ = write!(out, ",steps_{}", s.steps);
    }
    out.push('\n');
    for (name, pick) in [("median", (|s: &LipschitzSummary| s.median) as fn(&LipschitzSummary) -> f64), ("p95", |s| s.p95)] {
        out.push_str(name);
        for s in &report.summary {
            let _ = write!(out, ",{:e}", pick(s));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Tape, Var};
    use crate::probes::FnEmbed;
    use crate::tensor::Tensor;

    fn conf(n: usize, seed: u64) -> Conformation {
        let mut rng = Rng::new(seed);
        Conformation::new(vec![6; n], (0..n).map(|_| [rng.gaussian(), rng.gaussian(), rng.gaussian()]).collect()).unwrap()
    }

    fn identity<'t>(_: &'t Tape, x: Var<'t>) -> Var<'t> {
        x
    }

    fn constant<'t>(tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        x * 0.0 + tape.scalar(1.0)
    }

    #[test]
    fn identity_has_unit_constant() {
        for method in [PowerMethod::Krylov, PowerMethod::Plain] {
            let est = lipschitz_power(&FnEmbed(identity), &conf(5, 1), 10, 3, method).unwrap();
            assert!((est.value() - 1.0).abs() < 1e-12, "{method:?}: {}", est.value());
        }
    }

    #[test]
    fn constant_map_has_zero_constant() {
        for method in [PowerMethod::Krylov, PowerMethod::Plain] {
            let est = lipschitz_power(&FnEmbed(constant), &conf(4, 2), 5, 3, method).unwrap();
            assert_eq!(est.value(), 0.0);
            assert_eq!(est.rayleigh.len(), 5);
        }
    }

    #[test]
    fn single_atom_is_undefined_and_zero_steps_invalid() {
        let one = Conformation::new(vec![1], vec![[0.0; 3]]).unwrap();
        assert!(matches!(lipschitz_power(&FnEmbed(identity), &one, 5, 0, PowerMethod::Krylov), Err(ProbeError::Undefined)));
        assert!(matches!(lipschitz_power(&FnEmbed(identity), &conf(3, 1), 0, 0, PowerMethod::Krylov), Err(ProbeError::InvalidSteps)));
    }

    #[test]
    fn diagonal_scaling_in_nonrigid_space() {
        // f(x) = 2x on a dimer: only the bond stretch is non-rigid, L = 2.
        fn double<'t>(_: &'t Tape, x: Var<'t>) -> Var<'t> {
            x * 2.0
        }
        let dimer = Conformation::new(vec![1, 1], vec![[0.0; 3], [0.7, 0.1, 0.0]]).unwrap();
        let est = lipschitz_power(&FnEmbed(double), &dimer, 3, 9, PowerMethod::Krylov).unwrap();
        assert!((est.value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_prefixes_and_quantiles() {
        let mols: Vec<Conformation> = (0..5).map(|s| conf(4, s)).collect();
        let rep = lipschitz_report(&FnEmbed(identity), &mols, &[1, 3], 7, PowerMethod::Krylov).unwrap();
        assert_eq!(rep.rows.len(), 10);
        for s in &rep.summary {
            assert!(s.p95 >= s.median);
        }
        let single = lipschitz_report(&FnEmbed(identity), &mols[..1], &[2], 7, PowerMethod::Krylov).unwrap();
        assert_eq!(single.summary[0].median, single.summary[0].p95);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert!((percentile(&(1..=20).map(f64::from).collect::<Vec<_>>(), 0.95) - 19.05).abs() < 1e-12);
    }

    #[test]
    fn matrix_map_matches_dense_svd() {
        let c = conf(4, 11);
        let mut rng = Rng::new(5);
        let a = Tensor::new([12, 7], (0..84).map(|_| rng.gaussian()).collect());
        let at = a.clone();
        let embed = FnEmbed::new(move |tape, x| x.matmul(tape.constant(at.clone())));
        // xA with x a row: the Jacobian is Aᵀ.
        let p = DMatrix::from_row_slice(12, 12, &rigid_basis(&c).matrix());
        let jac = DMatrix::from_row_slice(12, 7, a.data()).transpose();
        let expected = (jac * p).singular_values().max();
        let est = lipschitz_power(&embed, &c, 25, 1, PowerMethod::Krylov).unwrap();
        assert!((est.value() - expected).abs() / expected < 1e-10);
        assert!(est.rayleigh.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-10)));
    }
}
