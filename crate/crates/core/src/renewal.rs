//! Deterministic renewal analysis of the no-click intensities.
//!
//! Between clicks the state follows the renormalised non-Hermitian flow from
//! a detector state, so the click process restarts at every detection. All
//! quantities here are functionals of the per-detector intensities
//! `lambda_i(t) = gamma_i |<alpha_i|psi(t)>|^2` along that flow.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{coherent_overlap, DetectorIndex, DetectorLattice};
use crate::mcwf::{InitialState, RunConfig, TrajectoryRecord};
use crate::propagator::{check_boundary, Propagator};

/// Ratio `lambda(T)/lambda(0)` below which a detector counts as escaped.
pub const ESCAPE_RATIO: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub t: Vec<f64>,
    pub detectors: Vec<DetectorIndex>,
    /// `lambda[d][k]`: intensity of `detectors[d]` at `t[k]`.
    pub lambda: Vec<Vec<f64>>,
    pub lambda_total: Vec<f64>,
    /// Cumulative intensity, trapezoidal.
    pub cumulative: Vec<f64>,
}

impl IntensityTable {
    /// Build from per-detector series on a shared time grid.
    pub fn from_series(t: Vec<f64>, detectors: Vec<DetectorIndex>, lambda: Vec<Vec<f64>>) -> Self {
        let n = t.len();
        let lambda_total: Vec<f64> = (0..n).map(|k| lambda.iter().map(|l| l[k]).sum()).collect();
        let cumulative = trapezoid_cumulative(&t, &lambda_total);
        Self {
            t,
            detectors,
            lambda,
            lambda_total,
            cumulative,
        }
    }

    /// Table of a single constant-rate detector.
    pub fn constant(gamma: f64, t_max: f64, dt: f64) -> Self {
        let n = (t_max / dt).round() as usize + 1;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        Self::from_series(t, vec![DetectorIndex::default()], vec![vec![gamma; n]])
    }

    pub fn series(&self, idx: &DetectorIndex) -> Option<&[f64]> {
        self.detectors
            .iter()
            .position(|d| d == idx)
            .map(|i| self.lambda[i].as_slice())
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap_or(&0.0)
    }

    /// First time with `lambda_total < ESCAPE_RATIO * lambda_total(0)`.
    pub fn escape_horizon(&self) -> Option<f64> {
        let l0 = self.lambda_total[0];
        self.t
            .iter()
            .zip(&self.lambda_total)
            .find(|(_, &l)| l < ESCAPE_RATIO * l0)
            .map(|(&t, _)| t)
    }

    /// Copy truncated to times `<= t_end`.
    pub fn truncated(&self, t_end: f64) -> Self {
        let n = self.t.partition_point(|&t| t <= t_end + 1e-12);
        Self::from_series(
            self.t[..n].to_vec(),
            self.detectors.clone(),
            self.lambda.iter().map(|l| l[..n].to_vec()).collect(),
        )
    }

    /// Every `k`-th grid point.
    pub fn decimated(&self, k: usize) -> Self {
        let pick = |v: &Vec<f64>| v.iter().step_by(k).copied().collect::<Vec<_>>();
        Self::from_series(
            pick(&self.t),
            self.detectors.clone(),
            self.lambda.iter().map(pick).collect(),
        )
    }
}

pub fn trapezoid_cumulative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for k in 0..t.len() {
        if k > 0 {
            acc += 0.5 * (t[k] - t[k - 1]) * (y[k] + y[k - 1]);
        }
        out.push(acc);
    }
    out
}

pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    trapezoid_cumulative(t, y).last().copied().unwrap_or(0.0)
}

/// Propagate the initial detector state without clicks to `t_max` on a
/// uniform grid of step `config.dt_cap`, recording renormalised
/// intensities. The window follows the packet by whole cells.
pub fn compute_intensities(config: &RunConfig, t_max: f64) -> Result<IntensityTable> {
    config.validate()?;
    if !matches!(config.initial_state, InitialState::Coherent { .. }) {
        return Err(Error::Config(
            "intensities need a detector initial state".into(),
        ));
    }
    let lattice = &config.lattice;
    let mut psi = config.initial_wavefunction()?;
    let mut prop = Propagator::new(config.potential);
    let dt = config.dt_cap;
    let steps = (t_max / dt).round() as usize;
    let mut series: BTreeMap<DetectorIndex, Vec<f64>> = BTreeMap::new();
    let mut t_grid = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let overlaps = prop.active_overlaps(&mut psi, lattice)?;
        for o in &overlaps.entries {
            series
                .entry(o.idx)
                .or_insert_with(|| vec![0.0; k])
                .push(o.rate());
        }
        for v in series.values_mut() {
            v.resize(k + 1, 0.0);
        }
        t_grid.push(k as f64 * dt);
        if k == steps {
            break;
        }
        if dt * overlaps.total_rate() > crate::mcwf::MAX_STEP_PROBABILITY {
            return Err(Error::StepTooLarge {
                loss: dt * overlaps.total_rate(),
                dt,
            });
        }
        prop.evolve_nonhermitian_step(&mut psi, lattice, dt, &overlaps)?;
        psi.normalize();
        let t = (k + 1) as f64 * dt;
        check_boundary(&psi, t)?;
        let m = psi.position_moments();
        for a in 0..psi.grid.dim {
            let off = m.mean[a] - psi.grid.center[a];
            if off.abs() > psi.grid.length() / 16.0 {
                psi.shift_window(a, (off / psi.grid.dx).round() as i64);
            }
        }
    }
    let (detectors, lambda): (Vec<_>, Vec<_>) = series.into_iter().unzip();
    Ok(IntensityTable::from_series(t_grid, detectors, lambda))
}

/// No-click intensities for a frozen system Hamiltonian, propagated in the
/// span of `detectors` rather than on a grid. With `H_S = 0` the state never
/// leaves that span, and working in it avoids the exponential growth of
/// round-off outside the span that renormalisation causes on a grid.
/// `psi = sum_j c_j |alpha_j>` obeys `dc_i/dt = -gamma_i/2 (G c)_i` with the
/// Gram matrix `G`; integrated by RK4.
pub fn meter_subspace_intensities(
    lattice: &DetectorLattice,
    detectors: &[DetectorIndex],
    start: &DetectorIndex,
    t_max: f64,
    dt: f64,
) -> Result<IntensityTable> {
    let n = detectors.len();
    let s0 = detectors
        .iter()
        .position(|d| d == start)
        .ok_or_else(|| Error::Config("start detector not in the set".into()))?;
    let gram: Vec<Vec<Complex64>> = detectors
        .iter()
        .map(|a| {
            detectors
                .iter()
                .map(|b| coherent_overlap(a, b, lattice))
                .collect()
        })
        .collect();
    let gam: Vec<f64> = detectors
        .iter()
        .map(|d| lattice.detector_gamma(d))
        .collect();
    let apply = |c: &[Complex64]| -> Vec<Complex64> {
        (0..n)
            .map(|i| (0..n).map(|j| gram[i][j] * c[j]).sum())
            .collect()
    };
    let rhs = |c: &[Complex64]| -> Vec<Complex64> {
        apply(c)
            .iter()
            .zip(&gam)
            .map(|(o, g)| -0.5 * g * o)
            .collect()
    };
    let mut c = vec![Complex64::default(); n];
    c[s0] = Complex64::new(1.0, 0.0);
    let steps = (t_max / dt).round() as usize;
    let mut lambda = vec![Vec::with_capacity(steps + 1); n];
    let mut t = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let o = apply(&c);
        let norm: f64 = c.iter().zip(&o).map(|(ci, oi)| (ci.conj() * oi).re).sum();
        for i in 0..n {
            lambda[i].push(gam[i] * o[i].norm_sqr() / norm);
        }
        t.push(k as f64 * dt);
        if k == steps {
            break;
        }
        let add = |a: &[Complex64], b: &[Complex64], h: f64| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * h).collect()
        };
        let k1 = rhs(&c);
        let k2 = rhs(&add(&c, &k1, 0.5 * dt));
        let k3 = rhs(&add(&c, &k2, 0.5 * dt));
        let k4 = rhs(&add(&c, &k3, dt));
        for i in 0..n {
            c[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0);
        }
        let scale = 1.0 / norm.sqrt();
        c.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(IntensityTable::from_series(t, detectors.to_vec(), lambda))
}

/// Closed-form intensities of two detectors with overlap magnitude `c`
/// under a frozen system Hamiltonian, starting in the first.
pub fn two_detector_rates(gamma: f64, c: f64, t: f64) -> (f64, f64) {
    let t0 = 2.0 / (gamma * c);
    // cosh/sinh ratios written through tanh(t/t0) so large t stays finite
    let th = (t / t0).tanh();
    let den = 1.0 + th * th - 2.0 * c * th;
    (
        gamma * (1.0 - c * th).powi(2) / den,
        gamma * (c - th).powi(2) / den,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstClick {
    pub t: Vec<f64>,
    pub density: Vec<f64>,
    /// Per-detector densities `lambda_i e^{-Lambda}`.
    pub per_detector: Vec<Vec<f64>>,
    /// `e^{-Lambda(t_max)}`.
    pub escaped_mass: f64,
}

pub fn first_click_density(table: &IntensityTable) -> FirstClick {
    let surv: Vec<f64> = table.cumulative.iter().map(|l| (-l).exp()).collect();
    let density = table
        .lambda_total
        .iter()
        .zip(&surv)
        .map(|(l, s)| l * s)
        .collect();
    let per_detector = table
        .lambda
        .iter()
        .map(|li| li.iter().zip(&surv).map(|(l, s)| l * s).collect())
        .collect();
    FirstClick {
        t: table.t.clone(),
        density,
        per_detector,
        escaped_mass: *surv.last().unwrap_or(&1.0),
    }
}

/// Spreading-free estimate `gamma e^{-gamma t} sum_i exp(-(v t - i D)^2)`.
pub fn approx_f_t1(gamma: f64, v: f64, d: f64, t: f64, n_terms: usize) -> f64 {
    let s: f64 = (0..=n_terms)
        .map(|i| (-(v * t - i as f64 * d).powi(2)).exp())
        .sum();
    gamma * (-gamma * t).exp() * s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickStatistics {
    pub p_escape: f64,
    pub mean_clicks: f64,
}

impl ClickStatistics {
    /// Probability of exactly `n` renewals before escape.
    pub fn probability(&self, n: u64) -> f64 {
        self.p_escape * (1.0 - self.p_escape).powf(n as f64)
    }
}

pub fn click_statistics(lambda_t: f64) -> ClickStatistics {
    ClickStatistics {
        p_escape: (-lambda_t).exp(),
        mean_clicks: lambda_t.exp_m1(),
    }
}

/// Renewal estimate of the time to leave the initial detector,
/// `(e^{Lambda(T)} - 1) * int t lambda e^{-Lambda} dt`.
pub fn escape_time(table: &IntensityTable) -> Result<f64> {
    let l0 = table.lambda_total[0];
    let ratio = table.lambda_total.last().copied().unwrap_or(0.0) / l0;
    if !(ratio <= ESCAPE_RATIO) {
        return Err(Error::NotEscaping { ratio });
    }
    let fc = first_click_density(table);
    let tf: Vec<f64> = table
        .t
        .iter()
        .zip(&fc.density)
        .map(|(t, f)| t * f)
        .collect();
    let lt = *table.cumulative.last().unwrap();
    Ok(lt.exp_m1() * trapezoid(&table.t, &tf))
}

/// Mean time of the last click, an ensemble estimate of the escape time.
pub fn sampled_escape_time(records: &[TrajectoryRecord]) -> f64 {
    let n = records.len().max(1) as f64;
    records
        .iter()
        .filter_map(|r| r.events.last())
        .map(|e| e.t)
        .sum::<f64>()
        / n
}

/// `D sum_i i lambda_i / sum_i lambda_i` along the first renewal (1D).
pub fn step_profile(table: &IntensityTable, d: f64) -> Vec<f64> {
    (0..table.t.len())
        .map(|k| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (idx, l) in table.detectors.iter().zip(&table.lambda) {
                num += idx.m[0] as f64 * l[k];
                den += l[k];
            }
            if den > 0.0 {
                d * num / den
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetardationFit {
    pub t_r: f64,
    pub v_fit: f64,
    pub rms: f64,
}

/// Least-squares line through `(t, x)` restricted to `window`, reported as
/// `x = v_fit (t - t_r)`.
pub fn retardation_fit(t: &[f64], x: &[f64], window: (f64, f64), d: f64) -> Result<RetardationFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(x)
        .filter(|(t, x)| **t >= window.0 && **t <= window.1 && x.is_finite())
        .map(|(t, x)| (*t, *x))
        .collect();
    if pts.len() < 3 {
        return Err(Error::BadFit(
            "fewer than three points in the fit window".into(),
        ));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mx)).sum();
    let slope = stx / stt;
    let icpt = mx - slope * mt;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - icpt - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if rms > 0.05 * d {
        return Err(Error::BadFit(format!(
            "residual rms {rms:.3e} exceeds 0.05 D"
        )));
    }
    Ok(RetardationFit {
        t_r: -icpt / slope,
        v_fit: slope,
        rms,
    })
}

/// Click-rate densities of a renewal process on a 1D detector row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalSolution {
    pub t: Vec<f64>,
    /// Position indices covered by `rate`.
    pub m: Vec<i32>,
    /// `rate[j][k]`: density of clicks at `m[j]` at `t[k]`, any renewal.
    pub rate: Vec<Vec<f64>>,
}

impl RenewalSolution {
    /// Mean position of a click at each time, `D sum m g_m / sum g_m`.
    pub fn mean_position(&self, d: f64) -> Vec<f64> {
        (0..self.t.len())
            .map(|k| {
                let (mut num, mut den) = (0.0, 0.0);
                for (m, g) in self.m.iter().zip(&self.rate) {
                    num += *m as f64 * g[k];
                    den += g[k];
                }
                if den > 0.0 {
                    d * num / den
                } else {
                    f64::NAN
                }
            })
            .collect()
    }
}

/// Kernel of the lattice renewal process: first-click densities
/// `f_j = lambda_j e^{-Lambda}` by position displacement `j`, cut at the
/// first time `t_c` where the accumulated first-click mass reaches
/// `1 - cut_tol` of the mass reached by the table horizon. The density is
/// defective (mass that escapes every detector of the row never clicks), so
/// the cut is relative; the defect is `escaped_mass` of the table.
pub fn renewal_kernel(table: &IntensityTable, cut_tol: f64) -> Result<BTreeMap<i32, Vec<f64>>> {
    let fc = first_click_density(table);
    let reached = 1.0 - fc.escaped_mass;
    if !(reached > 0.0) {
        return Err(Error::BadFit(
            "no first-click mass on the table horizon".into(),
        ));
    }
    let kc = table
        .cumulative
        .iter()
        .position(|&l| -(-l).exp_m1() >= (1.0 - cut_tol) * reached)
        .unwrap_or(table.t.len() - 1);
    let mut kernel: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (d, f) in table.detectors.iter().zip(&fc.per_detector) {
        let e = kernel.entry(d.m[0]).or_insert_with(|| vec![0.0; kc + 1]);
        e.iter_mut().zip(&f[..=kc]).for_each(|(a, b)| *a += b);
    }
    Ok(kernel)
}

/// Solve `g_m(t) = f_m(t) + sum_{m'} int_0^t g_{m'}(s) f_{m-m'}(t-s) ds` for
/// `m` in `m_range` on a uniform grid of step `dt` (trapezoidal rule, the
/// `s = t` endpoint solved by fixed-point iteration). Mass that would leave
/// `m_range` is dropped.
pub fn renewal_convolution(
    kernel: &BTreeMap<i32, Vec<f64>>,
    dt: f64,
    t_end: f64,
    m_range: (i32, i32),
) -> RenewalSolution {
    let steps = (t_end / dt).round() as usize;
    let ms: Vec<i32> = (m_range.0..=m_range.1).collect();
    let nm = ms.len();
    let terms: Vec<(i32, &Vec<f64>)> = kernel.iter().map(|(j, f)| (*j, f)).collect();
    let f_at = |f: &Vec<f64>, k: usize| f.get(k).copied().unwrap_or(0.0);
    let mut g = vec![vec![0.0; steps + 1]; nm];
    let mut base = vec![0.0; nm];
    let mut cur = vec![0.0; nm];
    for k in 0..=steps {
        for (mi, &m) in ms.iter().enumerate() {
            let mut acc = kernel.get(&m).map_or(0.0, |f| f_at(f, k));
            if k > 0 {
                for &(j, f) in &terms {
                    let src = m - j;
                    if src < m_range.0 || src > m_range.1 {
                        continue;
                    }
                    let gs = &g[(src - m_range.0) as usize];
                    let lo = k.saturating_sub(f.len() - 1);
                    let mut s = 0.0;
                    for i in lo..k {
                        let w = if i == 0 { 0.5 } else { 1.0 };
                        s += w * gs[i] * f[k - i];
                    }
                    acc += dt * s;
                }
            }
            base[mi] = acc;
        }
        cur.copy_from_slice(&base);
        if k > 0 {
            for _ in 0..6 {
                let prev = cur.clone();
                for (mi, &m) in ms.iter().enumerate() {
                    let mut acc = base[mi];
                    for &(j, f) in &terms {
                        let src = m - j;
                        if src >= m_range.0 && src <= m_range.1 {
                            acc += 0.5 * dt * prev[(src - m_range.0) as usize] * f[0];
                        }
                    }
                    cur[mi] = acc;
                }
            }
        }
        for mi in 0..nm {
            g[mi][k] = cur[mi];
        }
    }
    RenewalSolution {
        t: (0..=steps).map(|k| k as f64 * dt).collect(),
        m: ms,
        rate: g,
    }
}
