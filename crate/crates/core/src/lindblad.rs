//! Dense density-matrix integration of the master equation on a small 1D
//! grid, used to check MCWF ensemble averages.
//!
//! Matrices hold `rho_jk = <x_j|rho|x_k>` scaled by `dx`, so the trace is
//! the plain diagonal sum. The kinetic term is applied column-wise by FFT.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveFunction};
use crate::lattice::{coherent_amplitude, DetectorIndex, DetectorLattice};
use crate::mcwf::{parallel_map, run_trajectory_observed, Prepared, RunConfig};
use crate::propagator::Potential;

pub const MAX_POINTS: usize = 256;
const SUPPORT_SIGMAS: f64 = 12.0;

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub grid: SpatialGrid,
    pub rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    fn check_grid(grid: &SpatialGrid) -> Result<()> {
        if grid.dim != 1 || grid.points > MAX_POINTS {
            return Err(Error::Config(format!(
                "density matrices need a 1D grid of at most {MAX_POINTS} points"
            )));
        }
        Ok(())
    }

    /// `|psi><psi|` in the lab frame, normalised.
    pub fn pure(psi: &WaveFunction) -> Result<Self> {
        Self::check_grid(&psi.grid)?;
        let v = lab_vector(psi);
        Ok(Self {
            grid: psi.grid,
            rho: &v * v.adjoint(),
        })
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_part(&self.rho)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    /// Hermitian to 1e-10, unit trace to 1e-8, no eigenvalue below -1e-8.
    pub fn check_invariants(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > 1e-10 {
            return Err(Error::InvariantViolation(format!(
                "hermiticity error {h:e}"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > 1e-8 {
            return Err(Error::InvariantViolation(format!("trace {tr}")));
        }
        let low = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if low < -1e-8 {
            return Err(Error::InvariantViolation(format!("eigenvalue {low:e}")));
        }
        Ok(())
    }

    /// Probability density `rho(x, x)` on the grid.
    pub fn position_density(&self) -> Vec<f64> {
        self.rho
            .diagonal()
            .iter()
            .map(|c| c.re / self.grid.dx)
            .collect()
    }

    /// `<a|rho|a>` for a grid vector `a`.
    pub fn expectation(&self, a: &DVector<Complex64>) -> f64 {
        (a.adjoint() * &self.rho * a)[(0, 0)].re
    }
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Normalised lab-frame amplitudes `psi(x_j) sqrt(dx)`.
pub fn lab_vector(psi: &WaveFunction) -> DVector<Complex64> {
    let s = psi.grid.dx.sqrt();
    let mut v = DVector::from_iterator(
        psi.grid.points,
        (0..psi.grid.points).map(|j| psi.amplitude(j) * s),
    );
    let n = v.norm();
    if n > 0.0 {
        v /= Complex64::new(n, 0.0);
    }
    v
}

/// Meter state on the grid, `alpha(x_j) sqrt(dx)`, cut to the meter support.
pub fn meter_vector(
    grid: &SpatialGrid,
    lattice: &DetectorLattice,
    idx: &DetectorIndex,
) -> DVector<Complex64> {
    let s = grid.dx.sqrt();
    let xm = lattice.position(idx.m[0]);
    DVector::from_iterator(
        grid.points,
        (0..grid.points).map(|j| {
            let x = grid.coord(0, j);
            if (x - xm).abs() > SUPPORT_SIGMAS * lattice.sigma {
                Complex64::default()
            } else {
                coherent_amplitude(&[x], idx, lattice) * s
            }
        }),
    )
}

/// Meters that the propagator can represent on this grid: support meets the
/// window and the momentum lies inside the fold band.
pub fn grid_detectors(grid: &SpatialGrid, lattice: &DetectorLattice) -> Result<Vec<DetectorIndex>> {
    let fold = grid
        .fold_for(lattice.dp_spacing)
        .ok_or_else(|| Error::Config("grid is not commensurate with the lattice".into()))?
        as i32;
    let w = SUPPORT_SIGMAS * lattice.sigma;
    let lo = grid.coord(0, 0);
    let hi = grid.coord(0, grid.points - 1);
    Ok(lattice
        .indices()
        .into_iter()
        .filter(|i| {
            let x = lattice.position(i.m[0]);
            x + w >= lo && x - w <= hi && 2 * i.n[0].abs() < fold
        })
        .collect())
}

/// Right-hand side of the master equation for a fixed grid, lattice and
/// potential.
pub struct Lindblad {
    grid: SpatialGrid,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
    frozen: bool,
    /// `(gamma, a, a / |a|)`: the jump operator is `sqrt(gamma) |a_hat><a|`,
    /// which matches a trajectory that renormalises a clipped meter state.
    meters: Vec<(f64, DVector<Complex64>, DVector<Complex64>)>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Lindblad {
    pub fn new(grid: SpatialGrid, lattice: &DetectorLattice, potential: Potential) -> Result<Self> {
        DensityMatrix::check_grid(&grid)?;
        if lattice.dim() != 1 {
            return Err(Error::Config(
                "the master-equation check is one-dimensional".into(),
            ));
        }
        let meters = grid_detectors(&grid, lattice)?
            .into_iter()
            .map(|i| {
                let a = meter_vector(&grid, lattice, &i);
                let unit = a.normalize();
                (lattice.detector_gamma(&i), a, unit)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let n = grid.points;
        Ok(Self {
            grid,
            kinetic: (0..n).map(|j| 0.5 * grid.wavenumber(j).powi(2)).collect(),
            potential: (0..n)
                .map(|j| potential.value(grid.coord(0, j), 0.0))
                .collect(),
            frozen: matches!(potential, Potential::Frozen),
            meters,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn detector_count(&self) -> usize {
        self.meters.len()
    }

    /// `H m`, column by column.
    fn apply_h(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.grid.points;
        let mut out = m.clone();
        let scale = 1.0 / n as f64;
        for mut col in out.column_iter_mut() {
            let buf = col.as_mut_slice();
            let orig: Vec<Complex64> = buf.to_vec();
            self.fwd.process(buf);
            buf.iter_mut()
                .zip(&self.kinetic)
                .for_each(|(c, k)| *c *= k * scale);
            self.inv.process(buf);
            buf.iter_mut()
                .zip(&self.potential)
                .zip(&orig)
                .for_each(|((c, v), o)| *c += o * v);
        }
        out
    }

    pub fn rhs(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.grid.points;
        let mut out = DMatrix::zeros(n, n);
        if !self.frozen {
            let h_rho = self.apply_h(rho);
            let rho_h = self.apply_h(&rho.adjoint()).adjoint();
            out += (h_rho - rho_h) * Complex64::new(0.0, -1.0);
        }
        for (gamma, a, unit) in &self.meters {
            let rho_a = rho * a;
            let a_rho = a.adjoint() * rho;
            let pop = (a.adjoint() * &rho_a)[(0, 0)];
            let g = Complex64::new(*gamma, 0.0);
            out -= (a * &a_rho + &rho_a * a.adjoint()) * (g * 0.5);
            out += unit * unit.adjoint() * (g * pop);
        }
        out
    }

    /// Classic RK4 from `rho0` over `[0, t]` with steps no longer than `dt`;
    /// invariants are checked at the end.
    pub fn integrate(&self, rho0: &DensityMatrix, t: f64, dt: f64) -> Result<DensityMatrix> {
        if rho0.grid != self.grid {
            return Err(Error::Config(
                "density matrix grid differs from the integrator grid".into(),
            ));
        }
        let steps = (t / dt).ceil().max(1.0) as usize;
        let h = Complex64::new(t / steps as f64, 0.0);
        let mut rho = rho0.rho.clone();
        for _ in 0..steps {
            let k1 = self.rhs(&rho);
            let k2 = self.rhs(&(&rho + &k1 * (h * 0.5)));
            let k3 = self.rhs(&(&rho + &k2 * (h * 0.5)));
            let k4 = self.rhs(&(&rho + &k3 * h));
            rho += (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * (h / 6.0);
        }
        let out = DensityMatrix {
            grid: self.grid,
            rho,
        };
        out.check_invariants()?;
        Ok(out)
    }
}

/// Trace-norm distance `(1/2) sum |eig(a - b)|`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = hermitian_part(&(&a.rho - &b.rho));
    0.5 * d
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.abs())
        .sum::<f64>()
}

/// Ensemble average of `|psi(t_max)><psi(t_max)|` over `n_traj` MCWF
/// trajectories. Every trajectory must stay on the window of the initial
/// state, so `config.recenter` has to be off unless the window is already
/// centred at the origin.
pub fn mcwf_density(config: &RunConfig, n_traj: u64, workers: usize) -> Result<DensityMatrix> {
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    let prepared = Prepared::new(config)?;
    let grid = prepared.psi0.grid;
    DensityMatrix::check_grid(&grid)?;
    let finals = parallel_map(n_traj, workers, |i, prop| {
        let (_, psi) = run_trajectory_observed(config, &prepared, i, prop, &mut |_, _| {})?;
        if psi.grid != grid {
            return Err(Error::Config("trajectory left the initial window".into()));
        }
        Ok(lab_vector(&psi))
    })?;
    let n = grid.points;
    let mut rho = DMatrix::zeros(n, n);
    for v in &finals {
        rho.gerc(Complex64::new(1.0, 0.0), v, v, Complex64::new(1.0, 0.0));
    }
    Ok(DensityMatrix {
        grid,
        rho: rho / Complex64::new(n_traj as f64, 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::DEFAULT_SIGMA;
    use proptest::prelude::*;

    fn grid() -> SpatialGrid {
        SpatialGrid::for_lattice(&lattice(), 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap()
    }

    fn lattice() -> DetectorLattice {
        DetectorLattice::square_1d(2.0, 1.0, [-2, 2], [0, 0])
    }

    fn random_rho(seed: &[f64]) -> DMatrix<Complex64> {
        let n = grid().points;
        let v = DVector::from_iterator(
            n,
            (0..n).map(|j| {
                Complex64::new(
                    (seed[j % seed.len()] * (j + 1) as f64).sin(),
                    (seed[(j + 1) % seed.len()] * j as f64).cos(),
                )
            }),
        );
        let w = DVector::from_iterator(
            n,
            (0..n).map(|j| Complex64::new((j as f64 * seed[0]).cos(), 0.3)),
        );
        let m = &v * v.adjoint() + &w * w.adjoint() * Complex64::new(0.5, 0.0);
        let tr = m.trace();
        m / tr
    }

    #[test]
    fn five_meters_on_the_grid() {
        let g = SpatialGrid::for_lattice(&lattice(), 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap();
        let l = Lindblad::new(g, &lattice(), Potential::Free).unwrap();
        assert_eq!(l.detector_count(), 5);
    }

    #[test]
    fn unitary_rhs_is_traceless() {
        let mut lat = lattice();
        lat.gamma0 = 0.0;
        let l = Lindblad::new(grid(), &lat, Potential::Harmonic1d { omega: 1.0 }).unwrap();
        let d = l.rhs(&random_rho(&[0.3, 1.7, 2.9]));
        assert!(d.trace().norm() < 1e-12);
    }

    #[test]
    fn isolated_meter_state_is_stationary_without_dynamics() {
        let lat = DetectorLattice::square_1d(2.0, 1.0, [0, 0], [0, 0]);
        let g = SpatialGrid::for_lattice(&lat, 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap();
        let psi = WaveFunction::coherent(g, &lat, &DetectorIndex::new(0, 0));
        let rho = DensityMatrix::pure(&psi).unwrap();
        let l = Lindblad::new(g, &lat, Potential::Frozen).unwrap();
        let d = l.rhs(&rho.rho);
        assert!(d.iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn free_dispersion() {
        let w0 = 0.9;
        let mut lat = DetectorLattice::square_1d(std::f64::consts::PI, 0.0, [0, 0], [0, 0]);
        let g = SpatialGrid::for_lattice(&lat, 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap();
        let psi = WaveFunction::gaussian(g, 0.0, 0.0, w0);
        lat.gamma0 = 0.0;
        let l = Lindblad::new(g, &lat, Potential::Free).unwrap();
        let rho = l
            .integrate(&DensityMatrix::pure(&psi).unwrap(), 1.0, 2e-3)
            .unwrap();
        let dens = rho.position_density();
        let var: f64 = dens
            .iter()
            .enumerate()
            .map(|(j, p)| p * g.coord(0, j).powi(2))
            .sum::<f64>()
            * g.dx;
        let exact = w0 * w0 + 1.0 / (4.0 * w0 * w0);
        assert!((var - exact).abs() < 1e-6, "{var} {exact}");
    }

    #[test]
    fn step_halving_converges() {
        let lat = lattice();
        let g = SpatialGrid::for_lattice(&lat, 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap();
        let psi = WaveFunction::gaussian(g, 0.5, 1.0, 1.0);
        let l = Lindblad::new(g, &lat, Potential::Harmonic1d { omega: 1.0 }).unwrap();
        let rho0 = DensityMatrix::pure(&psi).unwrap();
        let a = l.integrate(&rho0, 0.5, 4e-3).unwrap();
        let b = l.integrate(&rho0, 0.5, 2e-3).unwrap();
        let diff = (&a.rho - &b.rho)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn trace_distance_of_orthogonal_states_is_one() {
        let g = grid();
        let a = DensityMatrix::pure(&WaveFunction::gaussian(g, -5.0, 0.0, 0.5)).unwrap();
        let b = DensityMatrix::pure(&WaveFunction::gaussian(g, 5.0, 0.0, 0.5)).unwrap();
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-9);
        assert!(trace_distance(&a, &a) < 1e-12);
    }

    #[test]
    fn invariant_violations_are_reported() {
        let g = grid();
        let mut rho = DensityMatrix::pure(&WaveFunction::gaussian(g, 0.0, 0.0, 1.0)).unwrap();
        rho.rho[(0, 1)] += Complex64::new(1e-6, 0.0);
        assert!(matches!(
            rho.check_invariants(),
            Err(Error::InvariantViolation(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn rhs_preserves_trace(a in 0.1f64..3.0, b in 0.1f64..3.0, c in 0.1f64..3.0, omega in 0.0f64..2.0) {
            let l = Lindblad::new(grid(), &lattice(), Potential::Harmonic1d { omega }).unwrap();
            let d = l.rhs(&random_rho(&[a, b, c]));
            prop_assert!(d.trace().norm() < 1e-10);
        }
    }
}
