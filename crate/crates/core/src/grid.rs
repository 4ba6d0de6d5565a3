//! Uniform periodic spatial grids and wavefunctions living on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{amplitude_norm, DetectorIndex, DetectorLattice};

/// Fraction of the window (per side) watched by the wrap-around guard.
pub const BOUNDARY_FRACTION: f64 = 0.05;
/// Largest probability tolerated in the guarded margin.
pub const BOUNDARY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    /// Points per axis, a power of two.
    pub points: usize,
    pub dx: f64,
    /// Window centre per axis; the y entry is ignored in 1D.
    pub center: [f64; 2],
}

impl SpatialGrid {
    pub fn new(dim: usize, points: usize, dx: f64, center: [f64; 2]) -> Self {
        Self {
            dim,
            points,
            dx,
            center,
        }
    }

    /// Grid whose spacing is commensurate with the lattice momentum spacing:
    /// `fold * dx * D_p = 2 pi` for the smallest power of two `fold` that gives
    /// `dx <= max_dx`. Momentum lattice offsets then map onto DFT bins.
    pub fn for_lattice(
        lattice: &DetectorLattice,
        points: usize,
        max_dx: f64,
        center: [f64; 2],
    ) -> Result<Self> {
        let fold = fold_size(lattice.dp_spacing, max_dx);
        if fold > points {
            return Err(Error::Config(format!(
                "grid of {points} points cannot resolve momentum spacing {} at dx <= {max_dx}",
                lattice.dp_spacing
            )));
        }
        let dx = 2.0 * PI / (fold as f64 * lattice.dp_spacing);
        Ok(Self {
            dim: lattice.dim(),
            points,
            dx,
            center,
        })
    }

    pub fn validate(&self, sigma: f64) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(Error::Config("grid dimension must be 1 or 2".into()));
        }
        if !self.points.is_power_of_two() || self.points < 8 {
            return Err(Error::Config(format!(
                "grid points {} must be a power of two >= 8",
                self.points
            )));
        }
        if self.dx > sigma / 4.0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!("dx = {} exceeds sigma/4", self.dx)));
        }
        if self.length() < 16.0 * sigma * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "window {} shorter than 16 sigma",
                self.length()
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.points as f64 * self.dx
    }

    /// Coordinate of the first grid point on `axis`.
    pub fn origin(&self, axis: usize) -> f64 {
        self.center[axis] - (self.points / 2) as f64 * self.dx
    }

    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        self.origin(axis) + j as f64 * self.dx
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    /// Integration weight of one cell.
    pub fn cell(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// Angular frequency of DFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.points as i64;
        let j = j as i64;
        let s = if j < n / 2 { j } else { j - n };
        2.0 * PI * s as f64 / self.length()
    }

    /// Fold size `M` of the lattice-commensurate DFT, if this grid is
    /// commensurate with `dp_spacing`.
    pub fn fold_for(&self, dp_spacing: f64) -> Option<usize> {
        let m = 2.0 * PI / (self.dx * dp_spacing);
        let r = m.round();
        if (m - r).abs() < 1e-9 * m
            && r >= 1.0
            && (r as usize).is_power_of_two()
            && (r as usize) <= self.points
        {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Smallest power of two `M` with `2 pi / (M D) <= max_dx`.
pub fn fold_size(dp_spacing: f64, max_dx: f64) -> usize {
    let need = 2.0 * PI / (dp_spacing * max_dx);
    let mut m = 1usize;
    while (m as f64) < need * (1.0 - 1e-12) {
        m *= 2;
    }
    m
}

/// Complex amplitudes on a [`SpatialGrid`].
///
/// The stored array is the envelope `phi` in a boosted frame,
/// `psi(x) = exp(i k_c . x) phi(x)`, so a fast packet whose momentum sits near
/// `k_c` stays well resolved. Row-major in 2D with x fastest.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    pub grid: SpatialGrid,
    pub frame_k: [f64; 2],
    pub phi: Vec<Complex64>,
    pub current_norm: f64,
    /// Momentum mean/std of the current amplitudes, when known. Anything
    /// that changes `phi` other than renormalisation must clear it.
    pub momentum_cache: Option<Moments>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl WaveFunction {
    pub fn zeros(grid: SpatialGrid, frame_k: [f64; 2]) -> Self {
        Self {
            grid,
            frame_k,
            phi: vec![Complex64::new(0.0, 0.0); grid.len()],
            current_norm: 0.0,
            momentum_cache: None,
        }
    }

    /// Fill from a function of the coordinates returning the full amplitude
    /// `psi(x)`; the frame factor is removed on the way in.
    pub fn from_fn(
        grid: SpatialGrid,
        frame_k: [f64; 2],
        f: impl Fn(f64, f64) -> Complex64,
    ) -> Self {
        let mut psi = Self::zeros(grid, frame_k);
        let n = grid.points;
        if grid.dim == 1 {
            for j in 0..n {
                let x = grid.coord(0, j);
                psi.phi[j] = f(x, 0.0) * Complex64::from_polar(1.0, -frame_k[0] * x);
            }
        } else {
            for iy in 0..n {
                let y = grid.coord(1, iy);
                for ix in 0..n {
                    let x = grid.coord(0, ix);
                    let ph = Complex64::from_polar(1.0, -(frame_k[0] * x + frame_k[1] * y));
                    psi.phi[iy * n + ix] = f(x, y) * ph;
                }
            }
        }
        psi.current_norm = psi.norm_sqr();
        psi
    }

    /// Meter state `|alpha_idx>` on a window centred at the meter, in the
    /// meter's own momentum frame. Normalised on the grid.
    pub fn coherent(grid: SpatialGrid, lattice: &DetectorLattice, idx: &DetectorIndex) -> Self {
        let mut grid = grid;
        let mut frame = [0.0; 2];
        for a in 0..grid.dim {
            grid.center[a] = lattice.position(idx.m[a]);
            frame[a] = lattice.momentum(idx.n[a]);
        }
        let mut psi = Self::coherent_in(grid, frame, lattice, idx);
        psi.normalize();
        psi
    }

    /// Meter state on a given window and frame (no renormalisation).
    pub fn coherent_in(
        grid: SpatialGrid,
        frame_k: [f64; 2],
        lattice: &DetectorLattice,
        idx: &DetectorIndex,
    ) -> Self {
        let s = lattice.sigma;
        let norm = amplitude_norm(s);
        let axis = |a: usize| -> Vec<Complex64> {
            let xm = lattice.position(idx.m[a]);
            let q = lattice.momentum(idx.n[a]) - frame_k[a];
            (0..grid.points)
                .map(|j| {
                    let x = grid.coord(a, j);
                    let u = x - xm;
                    Complex64::from_polar(norm * (-u * u / (4.0 * s * s)).exp(), q * x)
                })
                .collect()
        };
        let mut psi = Self::zeros(grid, frame_k);
        let ax = axis(0);
        if grid.dim == 1 {
            psi.phi = ax;
        } else {
            let ay = axis(1);
            let n = grid.points;
            for iy in 0..n {
                for ix in 0..n {
                    psi.phi[iy * n + ix] = ax[ix] * ay[iy];
                }
            }
        }
        psi.current_norm = psi.norm_sqr();
        psi
    }

    /// Gaussian packet with position width `width` (the `sigma` of
    /// `exp(-(x-x0)^2 / (4 width^2))`) and mean momentum `k0`, 1D.
    pub fn gaussian(grid: SpatialGrid, x0: f64, k0: f64, width: f64) -> Self {
        let norm = amplitude_norm(width);
        let mut psi = Self::from_fn(grid, [k0, 0.0], |x, _| {
            let u = x - x0;
            Complex64::from_polar(norm * (-u * u / (4.0 * width * width)).exp(), k0 * x)
        });
        psi.normalize();
        psi
    }

    /// Angular-momentum state `exp(-w r^2 / 2) (sqrt(w) r e^{i phi})^lz` in 2D.
    pub fn angular_momentum(grid: SpatialGrid, lz: u32, omega: f64) -> Self {
        // log-amplitude keeps large powers finite
        let mut psi = Self::from_fn(grid, [0.0, 0.0], |x, y| {
            let r2 = x * x + y * y;
            if r2 == 0.0 {
                return if lz == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            let logamp = -omega * r2 / 2.0 + lz as f64 * 0.5 * (omega * r2).ln();
            let phase = lz as f64 * y.atan2(x);
            Complex64::from_polar(logamp.exp(), phase)
        });
        psi.normalize();
        psi
    }

    pub fn norm_sqr(&self) -> f64 {
        self.phi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.cell()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr();
        if n > 0.0 {
            let s = 1.0 / n.sqrt();
            self.phi.iter_mut().for_each(|c| *c *= s);
        }
        self.current_norm = 1.0;
    }

    /// Full amplitude `psi` at flat index `i`.
    pub fn amplitude(&self, i: usize) -> Complex64 {
        let n = self.grid.points;
        let (ix, iy) = (i % n, i / n);
        let mut phase = self.frame_k[0] * self.grid.coord(0, ix);
        if self.grid.dim == 2 {
            phase += self.frame_k[1] * self.grid.coord(1, iy);
        }
        self.phi[i] * Complex64::from_polar(1.0, phase)
    }

    /// `<other|self>` on a shared grid.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        if self.grid == other.grid && self.frame_k == other.frame_k {
            return self
                .phi
                .iter()
                .zip(&other.phi)
                .map(|(a, b)| b.conj() * a)
                .sum::<Complex64>()
                * self.grid.cell();
        }
        (0..self.phi.len())
            .map(|i| other.amplitude(i).conj() * self.amplitude(i))
            .sum::<Complex64>()
            * self.grid.cell()
    }

    pub fn density(&self) -> Vec<f64> {
        self.phi.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Mean and standard deviation of position per axis.
    pub fn position_moments(&self) -> Moments {
        let g = &self.grid;
        let n = g.points;
        let mut w = 0.0;
        let mut s1 = [0.0; 2];
        let mut s2 = [0.0; 2];
        // offsets relative to the window centre keep the variance well conditioned
        for (i, c) in self.phi.iter().enumerate() {
            let p = c.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let ux = (i % n) as f64 - (n / 2) as f64;
            w += p;
            s1[0] += p * ux;
            s2[0] += p * ux * ux;
            if g.dim == 2 {
                let uy = (i / n) as f64 - (n / 2) as f64;
                s1[1] += p * uy;
                s2[1] += p * uy * uy;
            }
        }
        let mut m = Moments::default();
        if w == 0.0 {
            return m;
        }
        for a in 0..g.dim {
            let mu = s1[a] / w;
            m.mean[a] = g.center[a] + mu * g.dx;
            m.std[a] = ((s2[a] / w - mu * mu).max(0.0)).sqrt() * g.dx;
        }
        m
    }

    /// Fraction of probability in the outer margin of the window.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.grid.points;
        let k = ((n as f64 * BOUNDARY_FRACTION).ceil() as usize).max(1);
        let edge = |j: usize| j < k || j >= n - k;
        let mut total = 0.0;
        let mut margin = 0.0;
        for (i, c) in self.phi.iter().enumerate() {
            let p = c.norm_sqr();
            total += p;
            let on_edge = if self.grid.dim == 1 {
                edge(i)
            } else {
                edge(i % n) || edge(i / n)
            };
            if on_edge {
                margin += p;
            }
        }
        if total > 0.0 {
            margin / total
        } else {
            0.0
        }
    }

    /// Shift the window by whole grid cells along `axis`; content leaving one
    /// side re-enters the other, which the boundary guard keeps negligible.
    pub fn shift_window(&mut self, axis: usize, cells: i64) {
        if cells == 0 {
            return;
        }
        let n = self.grid.points;
        let s = cells.rem_euclid(n as i64) as usize;
        if self.grid.dim == 1 {
            self.phi.rotate_left(s);
        } else if axis == 0 {
            for row in self.phi.chunks_mut(n) {
                row.rotate_left(s);
            }
        } else {
            self.phi.rotate_left(s * n);
        }
        self.grid.center[axis] += cells as f64 * self.grid.dx;
    }

    /// Re-express the amplitudes in the frame `k` on `axis`.
    pub fn set_frame(&mut self, axis: usize, k: f64) {
        let dq = k - self.frame_k[axis];
        if dq == 0.0 {
            return;
        }
        let n = self.grid.points;
        let ramp: Vec<Complex64> = (0..n)
            .map(|j| Complex64::from_polar(1.0, -dq * self.grid.coord(axis, j)))
            .collect();
        for (i, c) in self.phi.iter_mut().enumerate() {
            let j = if self.grid.dim == 1 || axis == 0 {
                i % n
            } else {
                i / n
            };
            *c *= ramp[j];
        }
        self.frame_k[axis] = k;
    }

    /// Move the momentum frame by whole DFT bins on `axis`.
    pub fn shift_frame(&mut self, axis: usize, bins: i64) {
        if bins == 0 {
            return;
        }
        let dq = 2.0 * PI / self.grid.length() * bins as f64;
        let n = self.grid.points;
        let x0 = self.grid.origin(axis);
        let ramp: Vec<Complex64> = (0..n)
            .map(|j| Complex64::from_polar(1.0, -dq * (x0 + j as f64 * self.grid.dx)))
            .collect();
        if self.grid.dim == 1 {
            self.phi.iter_mut().zip(&ramp).for_each(|(c, r)| *c *= r);
        } else {
            for (i, c) in self.phi.iter_mut().enumerate() {
                let j = if axis == 0 { i % n } else { i / n };
                *c *= ramp[j];
            }
        }
        self.frame_k[axis] += dq;
    }
}
