//! Synthetic near-equilibrium molecules: random clusters relaxed under a
//! pairwise Lennard-Jones potential, labelled with their energy and a
//! point-charge dipole magnitude.

use rayon::prelude::*;
use thiserror::Error;

use super::corpus::Corpus;
use crate::geometry::{center, centroid, Conformation, Vec3};
use crate::rng::{derive_seed, splitmix64, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("atom range {min}..={max} must lie within 2..=16 with min <= max")]
    InvalidRange { min: usize, max: usize },
    #[error("need at least one molecule")]
    NoMolecules,
    #[error("species set is empty")]
    NoSpecies,
    #[error("no Lennard-Jones parameters for atomic number {0}")]
    UnknownSpecies(u32),
    #[error("molecule {index} failed to relax after {attempts} attempts")]
    RelaxationFailed { index: usize, attempts: usize },
}

/// Lennard-Jones parameters and the fixed partial charge of one species.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeciesParams {
    pub atomic_number: u32,
    pub well_depth: f64,
    pub radius: f64,
    pub charge: f64,
}

/// Pairwise Lennard-Jones potential with Lorentz–Berthelot mixing:
/// `ε_ij = √(ε_i ε_j)`, `σ_ij = (σ_i + σ_j)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPotential {
    species: Vec<SpeciesParams>,
}

impl Default for ToyPotential {
    /// H, C and O with charges +0.1, 0 and -0.1.
    fn default() -> Self {
        ToyPotential {
            species: vec![
                SpeciesParams { atomic_number: 1, well_depth: 0.5, radius: 0.9, charge: 0.1 },
                SpeciesParams { atomic_number: 6, well_depth: 1.0, radius: 1.3, charge: 0.0 },
                SpeciesParams { atomic_number: 8, well_depth: 0.8, radius: 1.2, charge: -0.1 },
            ],
        }
    }
}

impl ToyPotential {
    /// Rejects non-positive well depths or radii.
    pub fn new(species: Vec<SpeciesParams>) -> Option<Self> {
        species.iter().all(|s| s.well_depth > 0.0 && s.radius > 0.0).then_some(ToyPotential { species })
    }

    pub fn species(&self, z: u32) -> Option<&SpeciesParams> {
        self.species.iter().find(|s| s.atomic_number == z)
    }

    fn params(&self, z: u32) -> Result<&SpeciesParams, SynthError> {
        self.species(z).ok_or(SynthError::UnknownSpecies(z))
    }

    /// Mixed `(ε, σ)` for a pair.
    pub fn pair(&self, a: u32, b: u32) -> Result<(f64, f64), SynthError> {
        let (pa, pb) = (self.params(a)?, self.params(b)?);
        Ok(((pa.well_depth * pb.well_depth).sqrt(), 0.5 * (pa.radius + pb.radius)))
    }

    /// Separation of the pair minimum, `2^{1/6} σ`.
    pub fn pair_minimum(&self, a: u32, b: u32) -> Result<f64, SynthError> {
        Ok(2f64.powf(1.0 / 6.0) * self.pair(a, b)?.1)
    }

    /// Total energy and forces `−∇E`.
    pub fn energy_forces(&self, species: &[u32], coords: &[Vec3]) -> Result<(f64, Vec<Vec3>), SynthError> {
        let n = species.len();
        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; n];
        for i in 0..n {
            for j in i + 1..n {
                let (eps, sig) = self.pair(species[i], species[j])?;
                let d = [0, 1, 2].map(|k| coords[i][k] - coords[j][k]);
                let r2 = d.iter().map(|x| x * x).sum::<f64>();
                let s6 = (sig * sig / r2).powi(3);
                energy += 4.0 * eps * (s6 * s6 - s6);
                // -dE/dr / r, so that F_i = coef · (r_i − r_j).
                let coef = 24.0 * eps * (2.0 * s6 * s6 - s6) / r2;
                for k in 0..3 {
                    forces[i][k] += coef * d[k];
                    forces[j][k] -= coef * d[k];
                }
            }
        }
        Ok((energy, forces))
    }

    /// Magnitude of the point-charge dipole about the centroid.
    pub fn dipole(&self, species: &[u32], coords: &[Vec3]) -> Result<f64, SynthError> {
        let c = centroid(coords);
        let mut mu = [0.0; 3];
        for (z, r) in species.iter().zip(coords) {
            let q = self.params(*z)?.charge;
            for k in 0..3 {
                mu[k] += q * (r[k] - c[k]);
            }
        }
        Ok(mu.iter().map(|x| x * x).sum::<f64>().sqrt())
    }
}

fn max_component(forces: &[Vec3]) -> f64 {
    forces.iter().flatten().fold(0.0, |m: f64, f| m.max(f.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxOptions {
    /// Convergence threshold on the largest force component.
    pub force_tolerance: f64,
    pub max_iterations: usize,
    /// Per-atom displacement cap for one step, in Å.
    pub max_displacement: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions { force_tolerance: 1e-3, max_iterations: 5000, max_displacement: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relaxation {
    pub coords: Vec<Vec3>,
    pub energy: f64,
    pub max_force: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Steepest descent with an adaptive step: a step that lowers the energy is
/// kept and the step grows by 10%, otherwise it is discarded and halved.
pub fn relax(
    potential: &ToyPotential,
    species: &[u32],
    coords: &[Vec3],
    options: &RelaxOptions,
) -> Result<Relaxation, SynthError> {
    let mut x = coords.to_vec();
    let (mut energy, mut forces) = potential.energy_forces(species, &x)?;
    let mut step: f64 = 0.01;
    let mut iterations = 0;
    while iterations < options.max_iterations && energy.is_finite() {
        if max_component(&forces) < options.force_tolerance {
            break;
        }
        iterations += 1;
        let largest = forces.iter().map(|f| f.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let scale = step.min(options.max_displacement / largest);
        let trial: Vec<Vec3> = x.iter().zip(&forces).map(|(r, f)| [0, 1, 2].map(|k| r[k] + scale * f[k])).collect();
        let (e, f) = potential.energy_forces(species, &trial)?;
        if e <= energy {
            x = trial;
            energy = e;
            forces = f;
            step *= 1.1;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    let max_force = max_component(&forces);
    let finite = energy.is_finite() && x.iter().flatten().all(|c| c.is_finite());
    Ok(Relaxation { converged: finite && max_force < options.force_tolerance, coords: x, energy, max_force, iterations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_molecules: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
    pub species: Vec<u32>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_molecules: 256, min_atoms: 3, max_atoms: 8, species: vec![1, 6, 8], seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self, potential: &ToyPotential) -> Result<(), SynthError> {
        if self.n_molecules == 0 {
            return Err(SynthError::NoMolecules);
        }
        if self.min_atoms < 2 || self.max_atoms > 16 || self.min_atoms > self.max_atoms {
            return Err(SynthError::InvalidRange { min: self.min_atoms, max: self.max_atoms });
        }
        if self.species.is_empty() {
            return Err(SynthError::NoSpecies);
        }
        self.species.iter().try_for_each(|&z| potential.params(z).map(|_| ()))
    }
}

const MAX_ATTEMPTS: usize = 20;

/// One relaxed, centered molecule with its energy and dipole.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthMolecule {
    pub conformation: Conformation,
    pub energy: f64,
    pub dipole: f64,
    pub relaxation_steps: usize,
}

fn place_atoms(potential: &ToyPotential, species: &[u32], rng: &mut Rng) -> Result<Vec<Vec3>, SynthError> {
    let mut coords: Vec<Vec3> = vec![[0.0; 3]];
    for (i, &z) in species.iter().enumerate().skip(1) {
        loop {
            let anchor = rng.below(i);
            let r = rng.uniform_in(0.9, 1.6) * potential.pair_minimum(z, species[anchor])?;
            let u = rng.unit_vector(3);
            let p = [0, 1, 2].map(|k| coords[anchor][k] + r * u[k]);
            let clash = coords.iter().zip(species).any(|(q, &zq)| {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                d < 0.8 * potential.pair_minimum(z, zq).unwrap_or(0.0)
            });
            if !clash {
                coords.push(p);
                break;
            }
        }
    }
    Ok(coords)
}

/// Generates molecule `index` of a corpus; depends only on `(config.seed, index)`.
pub fn synth_molecule(
    potential: &ToyPotential,
    config: &SynthConfig,
    index: usize,
    options: &RelaxOptions,
) -> Result<SynthMolecule, SynthError> {
    let base = derive_seed(config.seed, index as u64);
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = Rng::new(derive_seed(base, attempt as u64));
        let n = config.min_atoms + rng.below(config.max_atoms - config.min_atoms + 1);
        let species: Vec<u32> = (0..n).map(|_| config.species[rng.below(config.species.len())]).collect();
        let start = place_atoms(potential, &species, &mut rng)?;
        let relaxed = relax(potential, &species, &start, options)?;
        if !relaxed.converged {
            continue;
        }
        let Ok(conf) = Conformation::new(species.clone(), relaxed.coords) else { continue };
        let conformation = center(&conf);
        let dipole = potential.dipole(&species, conformation.coords())?;
        return Ok(SynthMolecule { conformation, energy: relaxed.energy, dipole, relaxation_steps: relaxed.iterations });
    }
    Err(SynthError::RelaxationFailed { index, attempts: MAX_ATTEMPTS })
}

/// A labelled corpus (`energy`, `dipole`) with an 80/10/10 split. Molecules
/// are generated in parallel; the result is independent of thread count.
pub fn synth_corpus(config: &SynthConfig) -> Result<Corpus, SynthError> {
    let potential = ToyPotential::default();
    config.validate(&potential)?;
    let options = RelaxOptions::default();
    let molecules: Vec<SynthMolecule> = (0..config.n_molecules)
        .into_par_iter()
        .map(|i| synth_molecule(&potential, config, i, &options))
        .collect::<Result<_, _>>()?;
    let energy = molecules.iter().map(|m| m.energy).collect();
    let dipole = molecules.iter().map(|m| m.dipole).collect();
    let mut corpus = Corpus::new(molecules.into_iter().map(|m| m.conformation).collect());
    corpus.set_label("energy", energy).expect("one label per molecule");
    corpus.set_label("dipole", dipole).expect("one label per molecule");
    corpus.assign_splits(splitmix64(config.seed ^ 0x5eed_5b17), 0.8, 0.1);
    Ok(corpus)
}
