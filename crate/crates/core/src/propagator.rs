//! Split-operator evolution and meter overlaps on a [`SpatialGrid`].
//!
//! Overlaps `<alpha_mn|psi>` for all momenta `n` at one position `m` come from
//! a single short DFT: the Gaussian-weighted amplitudes are folded onto `M`
//! bins, where `M dx D_p = 2 pi`, so lattice momenta land exactly on bins.
//! The dissipative update is the adjoint of the same fold.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Moments, SpatialGrid, WaveFunction, BOUNDARY_TOLERANCE};
use crate::lattice::{amplitude_norm, DetectorIndex, DetectorLattice};

/// Meter support half-width in units of sigma.
const SUPPORT_SIGMAS: f64 = 12.0;
/// Active-window margins: `8 sigma + 4 sigma_x` in position and the
/// corresponding momentum expression.
const WINDOW_BASE: f64 = 8.0;
const WINDOW_SPREAD: f64 = 4.0;
/// Largest norm loss accepted from one dissipative step.
pub const MAX_STEP_LOSS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Free,
    /// `H_S = 0`: no kinetic or potential evolution between clicks.
    Frozen,
    Harmonic1d {
        omega: f64,
    },
    /// `V = omega^2 (x^2 + y^2) / 2`.
    Harmonic2d {
        omega: f64,
    },
}

impl Potential {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Potential::Free | Potential::Frozen => 0.0,
            Potential::Harmonic1d { omega } => 0.5 * omega * omega * x * x,
            Potential::Harmonic2d { omega } => 0.5 * omega * omega * (x * x + y * y),
        }
    }

    fn has_potential(&self) -> bool {
        matches!(
            self,
            Potential::Harmonic1d { .. } | Potential::Harmonic2d { .. }
        )
    }
}

/// One meter overlap together with its rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub idx: DetectorIndex,
    pub amp: Complex64,
    pub gamma: f64,
}

impl Overlap {
    /// `gamma |<alpha|psi>|^2`.
    pub fn rate(&self) -> f64 {
        self.gamma * self.amp.norm_sqr()
    }
}

/// Overlaps of all meters in the active window, sorted in row-major index
/// order (position indices first, then momentum indices).
#[derive(Clone, Debug, Default)]
pub struct Overlaps {
    pub entries: Vec<Overlap>,
}

impl Overlaps {
    pub fn total_rate(&self) -> f64 {
        self.entries.iter().map(Overlap::rate).sum()
    }

    pub fn get(&self, idx: &DetectorIndex) -> Option<&Overlap> {
        self.entries
            .binary_search_by(|o| o.idx.cmp(idx))
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// Result of a no-jump step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// `1 - ||psi(t+dt)||^2` for a normalised input.
    pub norm_loss: f64,
}

struct FoldPlan {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

pub struct Propagator {
    pub potential: Potential,
    planner: FftPlanner<f64>,
    grid_fft: Option<(usize, Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    fold: Option<FoldPlan>,
    work: Vec<Complex64>,
    kin_key: Option<(u64, u64, [u64; 2], usize)>,
    kin: [Vec<Complex64>; 2],
    pot_key: Option<(u64, u64, [u64; 2], usize)>,
    pot: [Vec<Complex64>; 2],
}

fn bits(v: f64) -> u64 {
    v.to_bits()
}

/// `exp(-(x - xm)^2 / (4 s^2))` at `x = x0 + j dx`, `j = 0..count`, by
/// multiplicative recurrence.
fn gaussian_row(out: &mut Vec<f64>, x0: f64, dx: f64, count: usize, xm: f64, s: f64) {
    let a = 1.0 / (4.0 * s * s);
    let u0 = x0 - xm;
    let mut g = (-a * u0 * u0).exp();
    let mut r = (-a * (2.0 * u0 * dx + dx * dx)).exp();
    let c = (-2.0 * a * dx * dx).exp();
    out.clear();
    for _ in 0..count {
        out.push(g);
        g *= r;
        r *= c;
    }
}

/// `exp(i l theta)` for `|l| < fold / 2`, built by recurrence.
struct PhaseTable {
    half: i32,
    values: Vec<Complex64>,
}

impl PhaseTable {
    fn new(fold: usize, theta: f64) -> Self {
        let half = (fold / 2) as i32;
        let mut values = vec![Complex64::new(1.0, 0.0); (2 * half + 1) as usize];
        let step = Complex64::from_polar(1.0, theta);
        let back = step.conj();
        for l in 1..=half as usize {
            values[half as usize + l] = values[half as usize + l - 1] * step;
            values[half as usize - l] = values[half as usize - l + 1] * back;
        }
        Self { half, values }
    }

    fn get(&self, l: i32) -> Complex64 {
        self.values[(l + self.half) as usize]
    }
}

/// Index range of grid points within the meter support around `xm`.
fn support(grid: &SpatialGrid, axis: usize, xm: f64, sigma: f64) -> Option<(usize, usize)> {
    let x0 = grid.origin(axis);
    let w = SUPPORT_SIGMAS * sigma;
    let lo = ((xm - w - x0) / grid.dx).ceil().max(0.0);
    let hi = ((xm + w - x0) / grid.dx)
        .floor()
        .min(grid.points as f64 - 1.0);
    if hi < lo {
        None
    } else {
        Some((lo as usize, hi as usize + 1))
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in 0..n {
            dst[c * n + r] = src[r * n + c];
        }
    }
}

fn fft_square(data: &mut [Complex64], tmp: &mut [Complex64], fft: &Arc<dyn Fft<f64>>, n: usize) {
    fft.process(data);
    transpose(data, tmp, n);
    fft.process(tmp);
    transpose(tmp, data, n);
}

impl Default for Propagator {
    fn default() -> Self {
        Self::new(Potential::Free)
    }
}

impl Propagator {
    pub fn new(potential: Potential) -> Self {
        Self {
            potential,
            planner: FftPlanner::new(),
            grid_fft: None,
            fold: None,
            work: Vec::new(),
            kin_key: None,
            kin: [Vec::new(), Vec::new()],
            pot_key: None,
            pot: [Vec::new(), Vec::new()],
        }
    }

    fn grid_plans(&mut self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        match &self.grid_fft {
            Some((k, f, i)) if *k == n => (f.clone(), i.clone()),
            _ => {
                let f = self.planner.plan_fft_forward(n);
                let i = self.planner.plan_fft_inverse(n);
                self.grid_fft = Some((n, f.clone(), i.clone()));
                (f, i)
            }
        }
    }

    fn fold_plan(&mut self, m: usize, dim: usize) -> &mut FoldPlan {
        let size = m.pow(dim as u32);
        if self
            .fold
            .as_ref()
            .map(|f| f.m != m || f.buf.len() != size)
            .unwrap_or(true)
        {
            self.fold = Some(FoldPlan {
                m,
                fwd: self.planner.plan_fft_forward(m),
                inv: self.planner.plan_fft_inverse(m),
                buf: vec![Complex64::default(); size],
                tmp: vec![Complex64::default(); size],
            });
        }
        self.fold.as_mut().unwrap()
    }

    /// In-place forward (or inverse, unnormalised) DFT of the grid array.
    fn transform(&mut self, psi: &mut WaveFunction, forward: bool) {
        let n = psi.grid.points;
        let (f, i) = self.grid_plans(n);
        let plan = if forward { f } else { i };
        if psi.grid.dim == 1 {
            plan.process(&mut psi.phi);
        } else {
            self.work.resize(n * n, Complex64::default());
            fft_square(&mut psi.phi, &mut self.work, &plan, n);
        }
    }

    fn kinetic_factors(&mut self, grid: &SpatialGrid, frame: [f64; 2], dt: f64) {
        let key = (
            bits(dt),
            bits(grid.dx),
            [bits(frame[0]), bits(frame[1])],
            grid.points,
        );
        if self.kin_key == Some(key) {
            return;
        }
        for a in 0..grid.dim {
            self.kin[a] = (0..grid.points)
                .map(|j| {
                    let k = grid.wavenumber(j) + frame[a];
                    Complex64::from_polar(1.0, -0.25 * k * k * dt)
                })
                .collect();
        }
        self.kin_key = Some(key);
    }

    fn potential_factors(&mut self, grid: &SpatialGrid, dt: f64) {
        let key = (
            bits(dt),
            bits(grid.dx),
            [bits(grid.center[0]), bits(grid.center[1])],
            grid.points,
        );
        if self.pot_key == Some(key) {
            return;
        }
        for a in 0..grid.dim {
            self.pot[a] = (0..grid.points)
                .map(|j| {
                    let x = grid.coord(a, j);
                    let v = if a == 0 {
                        self.potential.value(x, 0.0)
                    } else {
                        self.potential.value(0.0, x)
                    };
                    Complex64::from_polar(1.0, -v * dt)
                })
                .collect();
        }
        self.pot_key = Some(key);
    }

    fn apply_kinetic(&mut self, psi: &mut WaveFunction) {
        let n = psi.grid.points;
        if psi.grid.dim == 1 {
            psi.phi
                .iter_mut()
                .zip(&self.kin[0])
                .for_each(|(c, k)| *c *= k);
        } else {
            for (iy, row) in psi.phi.chunks_mut(n).enumerate() {
                let ky = self.kin[1][iy];
                row.iter_mut()
                    .zip(&self.kin[0])
                    .for_each(|(c, kx)| *c *= kx * ky);
            }
        }
    }

    /// Momentum mean/std from amplitudes currently in the DFT domain.
    fn spectral_moments(psi: &WaveFunction) -> Moments {
        let g = &psi.grid;
        let n = g.points;
        let mut w = 0.0;
        let mut s1 = [0.0; 2];
        let mut s2 = [0.0; 2];
        for (i, c) in psi.phi.iter().enumerate() {
            let p = c.norm_sqr();
            w += p;
            let kx = g.wavenumber(i % n);
            s1[0] += p * kx;
            s2[0] += p * kx * kx;
            if g.dim == 2 {
                let ky = g.wavenumber(i / n);
                s1[1] += p * ky;
                s2[1] += p * ky * ky;
            }
        }
        let mut m = Moments::default();
        if w > 0.0 {
            for a in 0..g.dim {
                let mu = s1[a] / w;
                m.mean[a] = mu + psi.frame_k[a];
                m.std[a] = (s2[a] / w - mu * mu).max(0.0).sqrt();
            }
        }
        m
    }

    /// Momentum moments of `psi`, computed by FFT when not cached.
    pub fn momentum_moments(&mut self, psi: &mut WaveFunction) -> Moments {
        if let Some(m) = psi.momentum_cache {
            return m;
        }
        let n = psi.grid.len();
        let mut tmp = WaveFunction {
            phi: psi.phi.clone(),
            momentum_cache: None,
            ..*psi
        };
        debug_assert_eq!(tmp.phi.len(), n);
        self.transform(&mut tmp, true);
        let m = Self::spectral_moments(&tmp);
        psi.momentum_cache = Some(m);
        m
    }

    /// Unitary Strang step `K/2 V K/2` under the system Hamiltonian.
    pub fn unitary_step(&mut self, psi: &mut WaveFunction, dt: f64) {
        self.strang_step(psi, dt, None);
    }

    /// Strang step `K/2 V K/2`; `damping`, real factors on the grid
    /// (`exp(-r dt / 2)` for a rate density `r`), multiplies the middle step.
    pub fn strang_step(&mut self, psi: &mut WaveFunction, dt: f64, damping: Option<&[f64]>) {
        let grid = psi.grid;
        let apply_damping = |psi: &mut WaveFunction| {
            if let Some(d) = damping {
                psi.phi.iter_mut().zip(d).for_each(|(c, f)| *c *= f);
            }
        };
        if matches!(self.potential, Potential::Frozen) {
            apply_damping(psi);
            if damping.is_some() {
                psi.momentum_cache = None;
            }
            return;
        }
        self.kinetic_factors(&grid, psi.frame_k, dt);
        let n_total = grid.len() as f64;
        self.transform(psi, true);
        self.apply_kinetic(psi);
        self.transform(psi, false);
        let scale = 1.0 / n_total;
        if self.potential.has_potential() {
            self.potential_factors(&grid, dt);
            let n = grid.points;
            if grid.dim == 1 {
                psi.phi
                    .iter_mut()
                    .zip(&self.pot[0])
                    .for_each(|(c, v)| *c *= v * scale);
            } else {
                for (iy, row) in psi.phi.chunks_mut(n).enumerate() {
                    let vy = self.pot[1][iy] * scale;
                    row.iter_mut()
                        .zip(&self.pot[0])
                        .for_each(|(c, vx)| *c *= vx * vy);
                }
            }
        } else {
            psi.phi.iter_mut().for_each(|c| *c *= scale);
        }
        apply_damping(psi);
        self.transform(psi, true);
        self.apply_kinetic(psi);
        let moments = Self::spectral_moments(psi);
        self.transform(psi, false);
        psi.phi.iter_mut().for_each(|c| *c *= scale);
        psi.momentum_cache = Some(moments);
    }

    /// Index ranges of the active meter window, intersected with the lattice
    /// extents and the band representable on the fold.
    fn window(
        &mut self,
        psi: &mut WaveFunction,
        lattice: &DetectorLattice,
        fold: usize,
    ) -> Vec<([i32; 2], [i32; 2])> {
        let s = lattice.sigma;
        let sp = 0.5 / s;
        let xm = psi.position_moments();
        let km = self.momentum_moments(psi);
        let half = (fold / 2) as i32;
        let mut out = Vec::with_capacity(psi.grid.dim);
        for a in 0..psi.grid.dim {
            let wx = WINDOW_BASE * s + WINDOW_SPREAD * xm.std[a];
            let wk = WINDOW_BASE * sp + WINDOW_SPREAD * km.std[a];
            let ext = &lattice.extents[a];
            let m_lo = (((xm.mean[a] - wx) / lattice.dx_spacing).ceil() as i32).max(ext.m[0]);
            let m_hi = (((xm.mean[a] + wx) / lattice.dx_spacing).floor() as i32).min(ext.m[1]);
            let nc = (psi.frame_k[a] / lattice.dp_spacing).round() as i32;
            let n_lo = (((km.mean[a] - wk) / lattice.dp_spacing).ceil() as i32)
                .max(ext.n[0])
                .max(nc - half + 1);
            let n_hi = (((km.mean[a] + wk) / lattice.dp_spacing).floor() as i32)
                .min(ext.n[1])
                .min(nc + half - 1);
            out.push(([m_lo, m_hi], [n_lo, n_hi]));
        }
        out
    }

    /// Bring the frame onto the momentum lattice so lattice momenta map to
    /// fold bins.
    fn align_frame(psi: &mut WaveFunction, dp: f64) {
        for a in 0..psi.grid.dim {
            let k = (psi.frame_k[a] / dp).round() * dp;
            if k != psi.frame_k[a] {
                psi.set_frame(a, k);
            }
        }
    }

    fn fold_size(psi: &WaveFunction, lattice: &DetectorLattice) -> Result<usize> {
        psi.grid.fold_for(lattice.dp_spacing).ok_or_else(|| {
            Error::Config(format!(
                "grid spacing {} is not commensurate with momentum spacing {}",
                psi.grid.dx, lattice.dp_spacing
            ))
        })
    }

    /// Overlaps `<alpha|psi>` of every meter in the active window.
    pub fn active_overlaps(
        &mut self,
        psi: &mut WaveFunction,
        lattice: &DetectorLattice,
    ) -> Result<Overlaps> {
        let fold = Self::fold_size(psi, lattice)?;
        Self::align_frame(psi, lattice.dp_spacing);
        let win = self.window(psi, lattice, fold);
        let mut rows: [Vec<f64>; 2] = Default::default();
        let grid = psi.grid;
        let s = lattice.sigma;
        let norm = amplitude_norm(s).powi(grid.dim as i32) * grid.cell();
        let dp = lattice.dp_spacing;
        let nc = [
            (psi.frame_k[0] / dp).round() as i32,
            (psi.frame_k[1] / dp).round() as i32,
        ];
        let mut entries = Vec::new();
        if grid.dim == 1 {
            let ([m_lo, m_hi], [n_lo, n_hi]) = win[0];
            if n_lo > n_hi {
                return Ok(Overlaps { entries });
            }
            let x0 = grid.origin(0);
            let table = PhaseTable::new(fold, -dp * x0);
            for m in m_lo..=m_hi {
                let xm = lattice.position(m);
                let Some((j0, j1)) = support(&grid, 0, xm, s) else {
                    continue;
                };
                gaussian_row(&mut rows[0], grid.coord(0, j0), grid.dx, j1 - j0, xm, s);
                let g = &rows[0];
                let plan = self.fold_plan(fold, 1);
                plan.buf.iter_mut().for_each(|c| *c = Complex64::default());
                for (j, gj) in (j0..j1).zip(g) {
                    plan.buf[j % fold] += psi.phi[j] * gj;
                }
                plan.fwd.process(&mut plan.buf);
                for n in n_lo..=n_hi {
                    let l = n - nc[0];
                    let bin = l.rem_euclid(fold as i32) as usize;
                    let phase = table.get(l) * norm;
                    let idx = DetectorIndex::new(m, n);
                    entries.push(Overlap {
                        idx,
                        amp: plan.buf[bin] * phase,
                        gamma: lattice.detector_gamma(&idx),
                    });
                }
            }
        } else {
            let ([mx_lo, mx_hi], [nx_lo, nx_hi]) = win[0];
            let ([my_lo, my_hi], [ny_lo, ny_hi]) = win[1];
            if nx_lo > nx_hi || ny_lo > ny_hi {
                return Ok(Overlaps { entries });
            }
            let (x0, y0) = (grid.origin(0), grid.origin(1));
            let (tx, ty) = (
                PhaseTable::new(fold, -dp * x0),
                PhaseTable::new(fold, -dp * y0),
            );
            let n = grid.points;
            for mx in mx_lo..=mx_hi {
                let xm = lattice.position(mx);
                let Some((jx0, jx1)) = support(&grid, 0, xm, s) else {
                    continue;
                };
                gaussian_row(&mut rows[0], grid.coord(0, jx0), grid.dx, jx1 - jx0, xm, s);
                for my in my_lo..=my_hi {
                    let ym = lattice.position(my);
                    let Some((jy0, jy1)) = support(&grid, 1, ym, s) else {
                        continue;
                    };
                    gaussian_row(&mut rows[1], grid.coord(1, jy0), grid.dx, jy1 - jy0, ym, s);
                    let (gx, gy) = (&rows[0], &rows[1]);
                    let plan = self.fold_plan(fold, 2);
                    plan.buf.iter_mut().for_each(|c| *c = Complex64::default());
                    for (jy, gyv) in (jy0..jy1).zip(gy) {
                        let row = &psi.phi[jy * n..(jy + 1) * n];
                        let brow = (jy % fold) * fold;
                        for (jx, gxv) in (jx0..jx1).zip(gx) {
                            plan.buf[brow + jx % fold] += row[jx] * (gxv * gyv);
                        }
                    }
                    let fwd = plan.fwd.clone();
                    fft_square(&mut plan.buf, &mut plan.tmp, &fwd, fold);
                    for nx in nx_lo..=nx_hi {
                        let lx = nx - nc[0];
                        let bx = lx.rem_euclid(fold as i32) as usize;
                        for ny in ny_lo..=ny_hi {
                            let ly = ny - nc[1];
                            let by = ly.rem_euclid(fold as i32) as usize;
                            let phase = tx.get(lx) * ty.get(ly) * norm;
                            let idx = DetectorIndex::new_2d(mx, nx, my, ny);
                            entries.push(Overlap {
                                idx,
                                amp: plan.buf[by * fold + bx] * phase,
                                gamma: lattice.detector_gamma(&idx),
                            });
                        }
                    }
                }
            }
            entries.sort_by_key(|e| e.idx);
        }
        Ok(Overlaps { entries })
    }

    /// `psi -= scale * sum_alpha c_alpha |alpha>` for coefficients given per
    /// overlap entry. Entries must share the frame used to compute them.
    pub fn add_meter_states(
        &mut self,
        psi: &mut WaveFunction,
        lattice: &DetectorLattice,
        entries: &[Overlap],
        coeff: impl Fn(&Overlap) -> Complex64,
        scale: f64,
    ) -> Result<()> {
        let fold = Self::fold_size(psi, lattice)?;
        let grid = psi.grid;
        let s = lattice.sigma;
        let norm = amplitude_norm(s).powi(grid.dim as i32);
        let dp = lattice.dp_spacing;
        let nc = [
            (psi.frame_k[0] / dp).round() as i32,
            (psi.frame_k[1] / dp).round() as i32,
        ];
        let mut rows: [Vec<f64>; 2] = Default::default();
        let tx = PhaseTable::new(fold, dp * grid.origin(0));
        let ty = PhaseTable::new(
            fold,
            if grid.dim == 2 {
                dp * grid.origin(1)
            } else {
                0.0
            },
        );
        let mut start = 0;
        while start < entries.len() {
            let m = entries[start].idx.m;
            let mut end = start;
            while end < entries.len() && entries[end].idx.m == m {
                end += 1;
            }
            let block = &entries[start..end];
            start = end;
            if grid.dim == 1 {
                let xm = lattice.position(m[0]);
                let Some((j0, j1)) = support(&grid, 0, xm, s) else {
                    continue;
                };
                let plan = self.fold_plan(fold, 1);
                plan.buf.iter_mut().for_each(|c| *c = Complex64::default());
                for o in block {
                    let l = o.idx.n[0] - nc[0];
                    if l.abs() >= (fold / 2) as i32 {
                        continue;
                    }
                    let bin = l.rem_euclid(fold as i32) as usize;
                    plan.buf[bin] += coeff(o) * tx.get(l);
                }
                plan.inv.process(&mut plan.buf);
                gaussian_row(&mut rows[0], grid.coord(0, j0), grid.dx, j1 - j0, xm, s);
                let g = &rows[0];
                for (j, gj) in (j0..j1).zip(g) {
                    psi.phi[j] -= plan.buf[j % fold] * (scale * norm * gj);
                }
            } else {
                let (xm, ym) = (lattice.position(m[0]), lattice.position(m[1]));
                let Some((jx0, jx1)) = support(&grid, 0, xm, s) else {
                    continue;
                };
                let Some((jy0, jy1)) = support(&grid, 1, ym, s) else {
                    continue;
                };
                let n = grid.points;
                let plan = self.fold_plan(fold, 2);
                plan.buf.iter_mut().for_each(|c| *c = Complex64::default());
                let half = (fold / 2) as i32;
                for o in block {
                    let lx = o.idx.n[0] - nc[0];
                    let ly = o.idx.n[1] - nc[1];
                    if lx.abs() >= half || ly.abs() >= half {
                        continue;
                    }
                    let bx = lx.rem_euclid(fold as i32) as usize;
                    let by = ly.rem_euclid(fold as i32) as usize;
                    let ph = tx.get(lx) * ty.get(ly);
                    plan.buf[by * fold + bx] += coeff(o) * ph;
                }
                let inv = plan.inv.clone();
                fft_square(&mut plan.buf, &mut plan.tmp, &inv, fold);
                gaussian_row(&mut rows[0], grid.coord(0, jx0), grid.dx, jx1 - jx0, xm, s);
                gaussian_row(&mut rows[1], grid.coord(1, jy0), grid.dx, jy1 - jy0, ym, s);
                let (gx, gy) = (&rows[0], &rows[1]);
                for (jy, gyv) in (jy0..jy1).zip(gy) {
                    let brow = (jy % fold) * fold;
                    let row = &mut psi.phi[jy * n..(jy + 1) * n];
                    for (jx, gxv) in (jx0..jx1).zip(gx) {
                        row[jx] -= plan.buf[brow + jx % fold] * (scale * norm * gxv * gyv);
                    }
                }
            }
        }
        psi.momentum_cache = None;
        Ok(())
    }

    /// One first-order Euler step of the anti-Hermitian part,
    /// `psi -= dt/2 sum_alpha gamma_alpha <alpha|psi> |alpha>`, using overlaps
    /// of the input state.
    pub fn apply_dissipation(
        &mut self,
        psi: &mut WaveFunction,
        lattice: &DetectorLattice,
        dt: f64,
        overlaps: &Overlaps,
    ) -> Result<()> {
        self.add_meter_states(
            psi,
            lattice,
            &overlaps.entries,
            |o| o.amp * o.gamma,
            0.5 * dt,
        )
    }

    /// No-jump step: dissipative Euler update with `overlaps` of the input
    /// state, then the unitary Strang step. The result is left unnormalised.
    pub fn evolve_nonhermitian_step(
        &mut self,
        psi: &mut WaveFunction,
        lattice: &DetectorLattice,
        dt: f64,
        overlaps: &Overlaps,
    ) -> Result<StepInfo> {
        let before = psi.norm_sqr();
        self.apply_dissipation(psi, lattice, dt, overlaps)?;
        let after = psi.norm_sqr();
        let loss = 1.0 - after / before;
        if loss > MAX_STEP_LOSS {
            return Err(Error::StepTooLarge { loss, dt });
        }
        self.unitary_step(psi, dt);
        psi.current_norm = after / before;
        Ok(StepInfo { norm_loss: loss })
    }
}

/// Boundary guard: error if the margin of the window holds too much mass.
pub fn check_boundary(psi: &WaveFunction, t: f64) -> Result<()> {
    let mass = psi.boundary_mass();
    if mass > BOUNDARY_TOLERANCE {
        Err(Error::BoundaryBreach { t, mass })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{coherent_overlap, AxisExtent, DEFAULT_SIGMA};
    use proptest::prelude::*;

    fn lattice(d: f64) -> DetectorLattice {
        DetectorLattice::square_1d(d, 1.0, [-40, 40], [-40, 40])
    }

    fn grid_for(lat: &DetectorLattice, points: usize) -> SpatialGrid {
        SpatialGrid::for_lattice(lat, points, DEFAULT_SIGMA / 8.0, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn overlaps_match_closed_form() {
        let lat = lattice(3.0);
        let g = grid_for(&lat, 512);
        let src = DetectorIndex::new(1, 2);
        let mut psi = WaveFunction::coherent(g, &lat, &src);
        let mut prop = Propagator::new(Potential::Free);
        let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
        assert!(ov.get(&src).is_some());
        for o in &ov.entries {
            let exact = coherent_overlap(&src, &o.idx, &lat).conj();
            assert!(
                (o.amp - exact).norm() < 1e-9,
                "{:?} {} {}",
                o.idx,
                o.amp,
                exact
            );
        }
    }

    #[test]
    fn two_d_overlaps_match_closed_form() {
        let lat = DetectorLattice::square_2d(
            3.0,
            1.0,
            AxisExtent {
                m: [-10, 10],
                n: [-10, 10],
            },
        );
        let g = SpatialGrid::for_lattice(&lat, 128, DEFAULT_SIGMA / 4.0, [0.0, 0.0]).unwrap();
        let src = DetectorIndex::new_2d(1, -1, 0, 2);
        let mut psi = WaveFunction::coherent(g, &lat, &src);
        let mut prop = Propagator::new(Potential::Free);
        let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
        assert!(ov.entries.len() > 50);
        for o in &ov.entries {
            let exact = coherent_overlap(&src, &o.idx, &lat).conj();
            assert!((o.amp - exact).norm() < 1e-8, "{:?}", o.idx);
        }
        assert!(ov.entries.windows(2).all(|w| w[0].idx < w[1].idx));
    }

    #[test]
    fn dissipation_is_adjoint_of_overlaps() {
        // <alpha|psi> computed after adding c |beta> shifts by c <alpha|beta>
        let lat = lattice(2.0);
        let g = grid_for(&lat, 512);
        let src = DetectorIndex::new(0, 0);
        let mut psi = WaveFunction::coherent(g, &lat, &src);
        let mut prop = Propagator::new(Potential::Free);
        let base = prop.active_overlaps(&mut psi, &lat).unwrap();
        let beta = Overlap {
            idx: DetectorIndex::new(1, 1),
            amp: Complex64::new(0.3, -0.2),
            gamma: 1.0,
        };
        prop.add_meter_states(&mut psi, &lat, &[beta], |o| o.amp, 1.0)
            .unwrap();
        let after = prop.active_overlaps(&mut psi, &lat).unwrap();
        for o in &after.entries {
            let Some(b) = base.get(&o.idx) else { continue };
            let expect = b.amp - beta.amp * coherent_overlap(&o.idx, &beta.idx, &lat);
            assert!((o.amp - expect).norm() < 1e-9, "{:?}", o.idx);
        }
    }

    #[test]
    fn free_packet_spreads_analytically() {
        let lat = lattice(5.0);
        let g = grid_for(&lat, 1024);
        let mut psi = WaveFunction::coherent(g, &lat, &DetectorIndex::new(0, 1));
        let mut prop = Propagator::new(Potential::Free);
        let dt = 0.01;
        for _ in 0..100 {
            prop.unitary_step(&mut psi, dt);
        }
        let m = psi.position_moments();
        let s = DEFAULT_SIGMA;
        let expect = (s * s + (1.0 / (2.0 * s)).powi(2)).sqrt();
        assert!((m.mean[0] - 5.0).abs() < 1e-9);
        assert!((m.std[0] - expect).abs() < 1e-9);
        let k = prop.momentum_moments(&mut psi);
        assert!((k.mean[0] - 5.0).abs() < 1e-9);
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_orbit_returns() {
        let lat = lattice(3.0);
        let g = grid_for(&lat, 512);
        let mut psi = WaveFunction::coherent(g, &lat, &DetectorIndex::new(1, 0));
        psi.set_frame(0, 0.0);
        let mut prop = Propagator::new(Potential::Harmonic1d { omega: 1.0 });
        let steps = 2000;
        let dt = std::f64::consts::TAU / steps as f64;
        for i in 0..steps {
            prop.unitary_step(&mut psi, dt);
            if i == steps / 4 - 1 {
                let m = psi.position_moments();
                assert!(m.mean[0].abs() < 1e-4);
                assert!((prop.momentum_moments(&mut psi).mean[0] + 3.0).abs() < 1e-4);
            }
        }
        assert!((psi.position_moments().mean[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn norm_loss_is_second_order_exact() {
        // Euler on the anti-Hermitian part: 1 - |psi'|^2 = dt <A> - dt^2/4 |A psi|^2
        let lat = lattice(2.0);
        let g = grid_for(&lat, 512);
        let mut psi = WaveFunction::gaussian(g, 0.4, 0.7, 0.9);
        let mut prop = Propagator::new(Potential::Free);
        let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
        let dt = 0.05;
        let dp: f64 = ov.entries.iter().map(|o| dt * o.rate()).sum();
        let mut a_psi = psi.clone();
        a_psi.phi.iter_mut().for_each(|c| *c = Complex64::default());
        prop.add_meter_states(&mut a_psi, &lat, &ov.entries, |o| -o.amp * o.gamma, 1.0)
            .unwrap();
        let a2 = a_psi.norm_sqr();
        let info = prop
            .evolve_nonhermitian_step(&mut psi, &lat, dt, &ov)
            .unwrap();
        assert!((info.norm_loss - (dp - dt * dt / 4.0 * a2)).abs() < 1e-12);
    }

    #[test]
    fn frozen_potential_leaves_state() {
        let lat = lattice(3.0);
        let g = grid_for(&lat, 256);
        let mut psi = WaveFunction::coherent(g, &lat, &DetectorIndex::new(0, 1));
        let before = psi.phi.clone();
        Propagator::new(Potential::Frozen).unitary_step(&mut psi, 0.1);
        assert_eq!(before, psi.phi);
    }

    #[test]
    fn boundary_guard_trips() {
        let g = SpatialGrid::new(1, 128, DEFAULT_SIGMA / 8.0, [0.0, 0.0]);
        let psi = WaveFunction::gaussian(g, 5.2, 0.0, DEFAULT_SIGMA);
        assert!(matches!(
            check_boundary(&psi, 1.0),
            Err(Error::BoundaryBreach { .. })
        ));
        let psi = WaveFunction::gaussian(g, 0.0, 0.0, DEFAULT_SIGMA);
        assert!(check_boundary(&psi, 1.0).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn overlap_engine_matches_closed_form(m in -3i32..=3, n in -3i32..=3, d in 1.5f64..4.0) {
            let lat = lattice(d);
            let g = grid_for(&lat, 512);
            let src = DetectorIndex::new(m, n);
            let mut psi = WaveFunction::coherent(g, &lat, &src);
            psi.set_frame(0, 0.0);
            let mut prop = Propagator::new(Potential::Free);
            let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
            for o in &ov.entries {
                let exact = coherent_overlap(&src, &o.idx, &lat).conj();
                prop_assert!((o.amp - exact).norm() < 1e-8);
            }
        }
    }
}
