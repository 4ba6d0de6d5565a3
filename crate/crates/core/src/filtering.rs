//! Position-only comparison model: Gaussian spatial filters as Kraus
//! operators, `K_m = sqrt(gamma) f(x_m - x)`, acting by multiplication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Moments, WaveFunction};
use crate::lattice::{amplitude_norm, DetectorIndex, DetectorLattice};
use crate::mcwf::{
    parallel_map, trajectory_rng, ClickEvent, Prepared, RunConfig, TerminationReason,
    TrajectoryRecord, MAX_STEP_PROBABILITY,
};
use crate::propagator::{check_boundary, Propagator};
use rand::Rng;

const SUPPORT_SIGMAS: f64 = 12.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub spacing: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Inclusive range of filter centre indices.
    pub m: [i32; 2],
}

impl FilterBank {
    /// Filters at the detector positions of a 1D lattice, with the detector
    /// position profile.
    pub fn from_lattice(lattice: &DetectorLattice) -> Result<Self> {
        if lattice.dim() != 1 {
            return Err(Error::Config(
                "the filtering model is one-dimensional".into(),
            ));
        }
        Ok(Self {
            spacing: lattice.dx_spacing,
            sigma: lattice.sigma,
            gamma: lattice.gamma0,
            m: lattice.extents[0].m,
        })
    }

    pub fn center(&self, m: i32) -> f64 {
        m as f64 * self.spacing
    }

    /// `f(x_m - x) = (2 pi sigma^2)^{-1/4} exp(-(x - x_m)^2 / (4 sigma^2))`.
    pub fn profile(&self, m: i32, x: f64) -> f64 {
        self.profile_with(amplitude_norm(self.sigma), m, x)
    }

    fn profile_with(&self, norm: f64, m: i32, x: f64) -> f64 {
        let u = x - self.center(m);
        norm * (-u * u / (4.0 * self.sigma * self.sigma)).exp()
    }

    /// Centre indices whose support meets `[lo, hi]`.
    fn centers_between(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<i32> {
        let w = SUPPORT_SIGMAS * self.sigma;
        let a = (((lo - w) / self.spacing).ceil() as i32).max(self.m[0]);
        let b = (((hi + w) / self.spacing).floor() as i32).min(self.m[1]);
        a..=b
    }

    /// `gamma sum_m |f(x_m - x)|^2` at every grid point.
    pub fn decay_density(&self, psi: &WaveFunction) -> Vec<f64> {
        let g = &psi.grid;
        let xs: Vec<f64> = (0..g.points).map(|j| g.coord(0, j)).collect();
        let mut out = vec![0.0; g.points];
        let norm = amplitude_norm(self.sigma);
        for m in self.centers_between(xs[0], xs[g.points - 1]) {
            for (o, &x) in out.iter_mut().zip(&xs) {
                let f = self.profile_with(norm, m, x);
                *o += self.gamma * f * f;
            }
        }
        out
    }
}

/// `rate_m = gamma int |f(x_m - x)|^2 |psi|^2 dx` for centres near the packet.
pub fn filter_jump_rates(psi: &WaveFunction, bank: &FilterBank) -> Vec<(i32, f64)> {
    rates_near(psi, bank, &psi.position_moments())
}

fn rates_near(psi: &WaveFunction, bank: &FilterBank, mom: &Moments) -> Vec<(i32, f64)> {
    let g = &psi.grid;
    let reach = 8.0 * bank.sigma + 4.0 * mom.std[0];
    let lo = (mom.mean[0] - reach).max(g.coord(0, 0));
    let hi = (mom.mean[0] + reach).min(g.coord(0, g.points - 1));
    let w = SUPPORT_SIGMAS * bank.sigma;
    let peak = bank.gamma * amplitude_norm(bank.sigma).powi(2);
    // |f|^2 = peak exp(-a u^2), stepped along the row by recurrence
    let a = 1.0 / (2.0 * bank.sigma * bank.sigma);
    let c = (-2.0 * a * g.dx * g.dx).exp();
    bank.centers_between(lo + w, hi - w)
        .map(|m| {
            let xm = bank.center(m);
            let j0 = (((xm - w - g.origin(0)) / g.dx).ceil().max(0.0)) as usize;
            let j1 = (((xm + w - g.origin(0)) / g.dx)
                .floor()
                .min(g.points as f64 - 1.0)) as usize;
            let u0 = g.coord(0, j0) - xm;
            let mut f2 = (-a * u0 * u0).exp();
            let mut r = (-a * (2.0 * u0 * g.dx + g.dx * g.dx)).exp();
            let mut s = 0.0;
            for j in j0..=j1.max(j0) {
                s += f2 * psi.phi[j].norm_sqr();
                f2 *= r;
                r *= c;
            }
            (m, peak * s * g.dx)
        })
        .collect()
}

/// `exp(-r dt / 2)` for the current rate density, rebuilt when `dt` or the
/// density changes.
struct Damping {
    density: Vec<f64>,
    dt: f64,
    factors: Vec<f64>,
}

impl Damping {
    fn new(density: Vec<f64>) -> Self {
        Self {
            density,
            dt: f64::NAN,
            factors: Vec::new(),
        }
    }

    fn factors(&mut self, dt: f64) -> &[f64] {
        if dt != self.dt {
            self.factors = self.density.iter().map(|r| (-0.5 * dt * r).exp()).collect();
            self.dt = dt;
        }
        &self.factors
    }
}

/// `psi' ∝ f(x_m - x) psi(x)`, normalised.
pub fn apply_filter(psi: &WaveFunction, m: i32, bank: &FilterBank) -> Result<WaveFunction> {
    let mut out = psi.clone();
    let g = psi.grid;
    let norm = amplitude_norm(bank.sigma);
    for (j, c) in out.phi.iter_mut().enumerate() {
        *c *= bank.profile_with(norm, m, g.coord(0, j));
    }
    let norm = out.norm_sqr();
    if norm < 1e-12 {
        return Err(Error::ZeroOverlap { norm });
    }
    out.normalize();
    out.momentum_cache = None;
    Ok(out)
}

/// Finite-difference velocities `(x_i - x_{i-1}) / (t_i - t_{i-1})`, the
/// first difference taken from `(t0, x0)`.
pub fn infer_velocity(events: &[(f64, f64)], t0: f64, x0: f64) -> Result<Vec<f64>> {
    let mut prev = (t0, x0);
    let mut out = Vec::with_capacity(events.len());
    for &(t, x) in events {
        let dt = t - prev.0;
        if dt < 1e-9 {
            return Err(Error::DegenerateInterval { dt });
        }
        out.push((x - prev.1) / dt);
        prev = (t, x);
    }
    Ok(out)
}

/// Local wavenumber at `x` from the phase gradient of `psi`.
pub fn local_wavenumber(psi: &WaveFunction, x: f64) -> f64 {
    let g = &psi.grid;
    let j = ((x - g.origin(0)) / g.dx).round() as usize;
    let a = psi.amplitude(j - 1);
    let b = psi.amplitude(j + 1);
    (b * a.conj()).arg() / (2.0 * g.dx)
}

/// One filtering-model trajectory. `config.lattice` supplies the filter
/// positions, width and rate; `config.initial_state` must not need a lattice
/// click at the origin.
pub fn run_filtering_trajectory(
    config: &RunConfig,
    prepared: &Prepared,
    index: u64,
    prop: &mut Propagator,
) -> Result<TrajectoryRecord> {
    prop.potential = config.potential;
    let bank = FilterBank::from_lattice(&config.lattice)?;
    let mut rng = trajectory_rng(config.master_seed, index);
    let mut psi = prepared.psi0.clone();
    let mut damping = Damping::new(bank.decay_density(&psi));
    let mut moments = psi.position_moments();
    let mut events = Vec::new();
    let limit = config.max_events.unwrap_or(usize::MAX);
    let mut t = 0.0;
    let reason = loop {
        if events.len() >= limit {
            break TerminationReason::EventLimit;
        }
        let remaining = config.t_max - t;
        if remaining <= 1e-12 * config.t_max {
            break TerminationReason::ReachedTMax;
        }
        let rates = rates_near(&psi, &bank, &moments);
        let total: f64 = rates.iter().map(|r| r.1).sum();
        let mut dt = config.dt_cap.min(remaining);
        if total > 0.0 {
            dt = dt.min(MAX_STEP_PROBABILITY / total);
        }
        let u: f64 = rng.random();
        t += dt;
        let mut cum = 0.0;
        let hit = rates.iter().find(|r| {
            cum += dt * r.1;
            u < cum
        });
        if let Some(&(m, _)) = hit {
            events.push(ClickEvent {
                t,
                idx: DetectorIndex::new(m, 0),
            });
            psi = apply_filter(&psi, m, &bank)?;
            recentre(&mut psi, bank.center(m), prop);
            damping = Damping::new(bank.decay_density(&psi));
            moments = psi.position_moments();
        } else {
            prop.strang_step(&mut psi, dt, Some(damping.factors(dt)));
            psi.normalize();
            moments = psi.position_moments();
            // follow a packet that drifts far between clicks
            let mean = moments.mean[0];
            if (mean - psi.grid.center[0]).abs() > psi.grid.length() / 8.0 {
                let cells = ((mean - psi.grid.center[0]) / psi.grid.dx).round() as i64;
                psi.shift_window(0, cells);
                damping = Damping::new(bank.decay_density(&psi));
                moments = psi.position_moments();
            }
            if check_boundary(&psi, t).is_err() {
                break TerminationReason::BoundaryBreach;
            }
        }
    };
    Ok(TrajectoryRecord {
        index,
        seed: config.master_seed,
        events,
        reason,
        t_end: t,
        position_only: true,
    })
}

/// Move the window by whole cells so that it is centred near `x` and put
/// the frame on the DFT bin nearest the current mean momentum.
fn recentre(psi: &mut WaveFunction, x: f64, prop: &mut Propagator) {
    let cells = ((x - psi.grid.center[0]) / psi.grid.dx).round() as i64;
    psi.shift_window(0, cells);
    let k = prop.momentum_moments(psi).mean[0];
    let bin = 2.0 * std::f64::consts::PI / psi.grid.length();
    let target = (k / bin).round() * bin;
    let bins = ((target - psi.frame_k[0]) / bin).round() as i64;
    psi.shift_frame(0, bins);
}

pub fn run_filtering_ensemble(
    config: &RunConfig,
    n_traj: u64,
    workers: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let mut cfg = config.clone();
    cfg.first_click_mode = crate::mcwf::FirstClickMode::AssumeAtOrigin;
    let prepared = Prepared::new(&cfg)?;
    parallel_map(n_traj, workers, |i, prop| {
        run_filtering_trajectory(&cfg, &prepared, i, prop)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::lattice::DEFAULT_SIGMA;
    use crate::mcwf::InitialState;
    use crate::propagator::Potential;
    use num_complex::Complex64;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(1, 1024, DEFAULT_SIGMA / 8.0, [0.0, 0.0])
    }

    fn bank(d: f64) -> FilterBank {
        FilterBank {
            spacing: d,
            sigma: DEFAULT_SIGMA,
            gamma: 2.0,
            m: [-100, 100],
        }
    }

    #[test]
    fn narrow_packet_rates() {
        let b = bank(3.0);
        let psi = WaveFunction::gaussian(grid(), 3.0, 0.0, 0.02);
        let rates = filter_jump_rates(&psi, &b);
        let r = |m| rates.iter().find(|r| r.0 == m).unwrap().1;
        let peak = b.gamma * b.profile(1, 3.0).powi(2);
        assert!((r(1) - peak).abs() < 2e-3 * peak);
        let ratio = r(2) / r(1);
        assert!(
            (ratio - (-9.0f64 / (2.0 * 0.5)).exp()).abs() < 0.05 * ratio,
            "{ratio}"
        );
    }

    #[test]
    fn uniform_state_has_equal_rates() {
        let b = bank(2.0);
        let g = grid();
        let psi = WaveFunction::from_fn(g, [0.0, 0.0], |_, _| Complex64::new(1.0, 0.0));
        let rates = filter_jump_rates(&psi, &b);
        let interior: Vec<f64> = rates
            .iter()
            .filter(|r| (r.0 as f64 * 2.0).abs() < 20.0)
            .map(|r| r.1)
            .collect();
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(interior.iter().all(|r| (r - mean).abs() < 0.01 * mean));
    }

    #[test]
    fn dense_bank_total_rate_is_position_independent() {
        let b = bank(0.73);
        let totals: Vec<f64> = (0..10)
            .map(|i| {
                let psi = WaveFunction::gaussian(grid(), i as f64 * 0.073, 1.0, DEFAULT_SIGMA);
                filter_jump_rates(&psi, &b).iter().map(|r| r.1).sum()
            })
            .collect();
        let mean = totals.iter().sum::<f64>() / 10.0;
        assert!(totals.iter().all(|t| (t - mean).abs() < 0.02 * mean));
    }

    #[test]
    fn filter_keeps_local_phase_and_normalises() {
        let b = bank(1.0);
        let psi = WaveFunction::gaussian(grid(), 0.3, 4.0, 2.0);
        let out = apply_filter(&psi, 0, &b).unwrap();
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        let before = local_wavenumber(&psi, 0.0);
        let after = local_wavenumber(&out, 0.0);
        assert!((after - before).abs() < 0.01 * before.abs());
    }

    #[test]
    fn repeated_filters_narrow_and_keep_momentum() {
        let b = bank(1.0);
        let mut prop = Propagator::default();
        let psi = WaveFunction::gaussian(grid(), 0.0, 3.0, 2.0);
        let once = apply_filter(&psi, 0, &b).unwrap();
        let twice = apply_filter(&once, 0, &b).unwrap();
        assert!(twice.position_moments().std[0] < once.position_moments().std[0]);
        // momentum centroid is the Gaussian-weighted input value, not a lattice one
        let mut o = once.clone();
        let k = prop.momentum_moments(&mut o).mean[0];
        assert!((k - 3.0).abs() < 1e-6, "{k}");
    }

    #[test]
    fn filtered_state_remembers_momentum() {
        let b = bank(5.0);
        let psi = WaveFunction::gaussian(grid(), 0.0, 4.0, 2.0);
        let mut out = apply_filter(&psi, 0, &b).unwrap();
        let mut prop = Propagator::default();
        let x0 = out.position_moments().mean[0];
        for _ in 0..100 {
            prop.unitary_step(&mut out, 0.01);
        }
        let v = (out.position_moments().mean[0] - x0) / 1.0;
        assert!((v - 4.0).abs() < 0.4, "{v}");
    }

    #[test]
    fn zero_overlap_is_an_error() {
        let b = bank(5.0);
        let psi = WaveFunction::gaussian(grid(), -30.0, 0.0, 0.5);
        assert!(matches!(
            apply_filter(&psi, 6, &b),
            Err(Error::ZeroOverlap { .. })
        ));
    }

    #[test]
    fn velocity_inference() {
        let ev: Vec<(f64, f64)> = (1..6)
            .map(|i| (i as f64 * 0.3, 5.0 * i as f64 * 0.3))
            .collect();
        assert!(infer_velocity(&ev, 0.0, 0.0)
            .unwrap()
            .iter()
            .all(|k| (k - 5.0).abs() < 1e-12));
        assert_eq!(infer_velocity(&[(0.5, 2.5)], 0.0, 0.0).unwrap(), vec![5.0]);
        assert!(matches!(
            infer_velocity(&[(0.5, 1.0), (0.5, 2.0)], 0.0, 0.0),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn filtering_records_are_position_only() {
        let lat = DetectorLattice::square_1d(0.73, 1.0, [-200, 200], [0, 0]);
        let mut cfg = RunConfig::new(
            lat,
            Potential::Free,
            InitialState::Gaussian {
                x0: [0.0, 0.0],
                k0: [5.0, 0.0],
                width: DEFAULT_SIGMA,
            },
        );
        cfg.t_max = 1.0;
        cfg.dt_cap = 1e-3;
        cfg.grid_points = 512;
        let recs = run_filtering_ensemble(&cfg, 4, 1).unwrap();
        for r in &recs {
            assert!(r.position_only);
            assert!(r.events.iter().all(|e| e.idx.n == [0, 0]));
            assert!(r.events.windows(2).all(|w| w[0].t < w[1].t));
        }
        assert!(recs.iter().map(|r| r.events.len()).sum::<usize>() > 0);
        assert_eq!(recs, run_filtering_ensemble(&cfg, 4, 2).unwrap());
    }
}
