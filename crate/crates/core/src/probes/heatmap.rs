use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{embed_flat, write_text, EmbedFn, ProbeError};
use crate::geometry::{Conformation, Vec3};
use crate::parallel;

/// Where and how finely to scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatmapSpec {
    pub atom: usize,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    /// Half-width of the displacement window, in Å.
    pub range: f64,
    /// Cells per side; odd so that one cell sits at zero displacement.
    pub resolution: usize,
}

impl HeatmapSpec {
    /// 41 x 41 cells over ±1 Å along x and y.
    pub fn new(atom: usize) -> Self {
        HeatmapSpec { atom, axis_u: [1.0, 0.0, 0.0], axis_v: [0.0, 1.0, 0.0], range: 1.0, resolution: 41 }
    }

    /// Displacement of cell `i` along an axis. The middle cell is exactly 0.
    pub fn offset(&self, i: usize) -> f64 {
        if self.resolution == 1 {
            return 0.0;
        }
        let m = (self.resolution - 1) as f64;
        self.range * (2.0 * i as f64 - m) / m
    }
}

/// `‖g(x + δ) − g(x)‖` over a grid of displacements `δ = a·u + b·v` of one
/// atom, row-major with the `u` offset varying slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub spec: HeatmapSpec,
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn get(&self, iu: usize, iv: usize) -> f64 {
        self.values[iu * self.spec.resolution + iv]
    }

    pub fn center(&self) -> f64 {
        let c = self.spec.resolution / 2;
        self.get(c, c)
    }
}

fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn heatmap<E: EmbedFn + ?Sized>(embed: &E, conf: &Conformation, spec: &HeatmapSpec) -> Result<HeatmapGrid, ProbeError> {
    if spec.atom >= conf.len() {
        return Err(ProbeError::AtomOutOfRange { atom: spec.atom, num_atoms: conf.len() });
    }
    if spec.resolution % 2 == 0 {
        return Err(ProbeError::InvalidResolution(spec.resolution));
    }
    if !(spec.range > 0.0 && spec.range.is_finite()) {
        return Err(ProbeError::InvalidRange(spec.range));
    }
    let (u, v) = (&spec.axis_u, &spec.axis_v);
    let tol = 1e-9;
    if (dot3(u, u) - 1.0).abs() > tol || (dot3(v, v) - 1.0).abs() > tol || dot3(u, v).abs() > tol {
        return Err(ProbeError::AxesNotOrthonormal);
    }
    let species = conf.atomic_numbers();
    let base_flat = conf.flat_coords();
    let base = embed_flat(embed, &base_flat, species)?;
    let res = spec.resolution;
    let values = parallel::install(|| {
        (0..res * res)
            .into_par_iter()
            .map(|cell| {
                let (a, b) = (spec.offset(cell / res), spec.offset(cell % res));
                if a == 0.0 && b == 0.0 {
                    return Ok(0.0);
                }
                let mut x = base_flat.clone();
                for k in 0..3 {
                    x[3 * spec.atom + k] += a * u[k] + b * v[k];
                }
                let g = embed_flat(embed, &x, species)?;
                Ok(g.iter().zip(&base).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
            })
            .collect::<Result<Vec<f64>, ProbeError>>()
    })?;
    Ok(HeatmapGrid { spec: *spec, values })
}

/// `du,dv,delta_norm` rows.
pub fn write_heatmap_csv(path: &Path, grid: &HeatmapGrid) -> Result<(), ProbeError> {
    let res = grid.spec.resolution;
    let mut out = String::from("du,dv,delta_norm\n");
    for iu in 0..res {
        for iv in 0..res {
            let _ = writeln!(out, "{},{},{:e}", grid.spec.offset(iu), grid.spec.offset(iv), grid.get(iu, iv));
        }
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Tape, Var};
    use crate::probes::FnEmbed;
    use crate::tensor::Tensor;

    fn pair() -> Conformation {
        Conformation::new(vec![1, 8], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn constant_map_gives_zero_grid() {
        let flat = FnEmbed::new(|tape: &Tape, x| x * 0.0 + tape.scalar(3.0));
        let grid = heatmap(&flat, &pair(), &HeatmapSpec { resolution: 5, ..HeatmapSpec::new(0) }).unwrap();
        assert!(grid.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_map_is_symmetric_under_axis_swap() {
        // g = distance from atom 0 to atom 1; axes symmetric about the bond.
        fn distance<'t>(tape: &'t Tape, x: Var<'t>) -> Var<'t> {
            let diff = x.matmul(tape.constant(Tensor::from_rows(&[[-1.0], [0.0], [0.0], [1.0], [0.0], [0.0]])));
            let dy = x.matmul(tape.constant(Tensor::from_rows(&[[0.0], [-1.0], [0.0], [0.0], [1.0], [0.0]])));
            let dz = x.matmul(tape.constant(Tensor::from_rows(&[[0.0], [0.0], [-1.0], [0.0], [0.0], [1.0]])));
            (diff * diff + dy * dy + dz * dz).sqrt()
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let spec = HeatmapSpec { atom: 1, axis_u: [h, h, 0.0], axis_v: [h, -h, 0.0], range: 0.5, resolution: 9 };
        let grid = heatmap(&FnEmbed(distance), &pair(), &spec).unwrap();
        assert_eq!(grid.center(), 0.0);
        for i in 0..9 {
            for j in 0..9 {
                assert!((grid.get(i, j) - grid.get(j, i)).abs() < 1e-12);
                // Analytic oracle: |‖r + δ‖ − 1| for r = (1, 0, 0).
                let (a, b) = (spec.offset(i), spec.offset(j));
                let d = [1.0 + h * (a + b), h * (a - b), 0.0];
                let expect = ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt() - 1.0;
                assert!((grid.get(i, j) - expect.abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let id = FnEmbed::new(|_: &Tape, x| x);
        let c = pair();
        assert!(matches!(heatmap(&id, &c, &HeatmapSpec::new(2)), Err(ProbeError::AtomOutOfRange { atom: 2, num_atoms: 2 })));
        assert!(matches!(heatmap(&id, &c, &HeatmapSpec { resolution: 4, ..HeatmapSpec::new(0) }), Err(ProbeError::InvalidResolution(4))));
        let skew = HeatmapSpec { axis_v: [1.0, 0.0, 0.0], ..HeatmapSpec::new(0) };
        assert!(matches!(heatmap(&id, &c, &skew), Err(ProbeError::AxesNotOrthonormal)));
    }

    #[test]
    fn offsets_span_the_window() {
        let s = HeatmapSpec::new(0);
        assert_eq!(s.offset(0), -1.0);
        assert_eq!(s.offset(20), 0.0);
        assert_eq!(s.offset(40), 1.0);
    }
}
