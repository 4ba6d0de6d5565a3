//! Quantum-jump trajectories: jump sampling, first-click handling and the
//! trajectory/ensemble drivers.
//!
//! Trajectory `i` draws from ChaCha8 seeded with the master seed on stream
//! `i`; successive steps consume successive words of that stream, so a record
//! depends only on `(master_seed, i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveFunction};
use crate::lattice::{DetectorIndex, DetectorLattice};
use crate::propagator::{check_boundary, Overlaps, Potential, Propagator};

/// Largest total jump probability allowed in one step.
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Coherent {
        idx: DetectorIndex,
    },
    /// Gaussian packet of position width `width` centred at `x0` with mean
    /// momentum `k0` (per axis).
    Gaussian {
        x0: [f64; 2],
        k0: [f64; 2],
        width: f64,
    },
    /// `exp(-omega r^2/2) (sqrt(omega) r e^{i phi})^lz`, 2D only.
    AngularMomentum {
        lz: u32,
        omega: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstClickMode {
    /// A coherent initial state counts as a click at t = 0; other initial
    /// states simply evolve from t = 0.
    #[default]
    AssumeAtOrigin,
    /// The t = 0 click is drawn from the lattice Husimi weights of the
    /// initial state.
    HusimiSampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lattice: DetectorLattice,
    pub potential: Potential,
    pub initial_state: InitialState,
    pub t_max: f64,
    pub dt_cap: f64,
    #[serde(default)]
    pub first_click_mode: FirstClickMode,
    pub master_seed: u64,
    /// Points per axis of the simulation window.
    pub grid_points: usize,
    /// Upper bound on the grid spacing; the actual spacing is the largest
    /// lattice-commensurate value below it.
    pub max_dx: f64,
    /// Stop once this many clicks (including a t = 0 click) are recorded.
    #[serde(default)]
    pub max_events: Option<usize>,
    /// Re-centre the window on the detector after each jump.
    #[serde(default = "yes")]
    pub recenter: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn new(
        lattice: DetectorLattice,
        potential: Potential,
        initial_state: InitialState,
    ) -> Self {
        let max_dx = lattice.sigma / 4.0;
        Self {
            lattice,
            potential,
            initial_state,
            t_max: 3.0,
            dt_cap: 1e-3,
            first_click_mode: FirstClickMode::AssumeAtOrigin,
            master_seed: 0,
            grid_points: 256,
            max_dx,
            max_events: None,
            recenter: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.t_max > 0.0) {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if !(self.dt_cap > 0.0) {
            return Err(Error::Config("dt_cap must be positive".into()));
        }
        let dim = self.lattice.dim();
        match (&self.potential, dim) {
            (Potential::Harmonic1d { .. }, 2) | (Potential::Harmonic2d { .. }, 1) => {
                return Err(Error::Config(
                    "potential dimension does not match the lattice".into(),
                ))
            }
            _ => {}
        }
        match &self.initial_state {
            InitialState::Coherent { idx } if !self.lattice.contains(idx) => {
                return Err(Error::Config(format!(
                    "initial detector {idx:?} outside the lattice"
                )))
            }
            InitialState::AngularMomentum { .. } if dim != 2 => {
                return Err(Error::Config(
                    "angular-momentum initial state needs a 2D lattice".into(),
                ))
            }
            InitialState::Gaussian { width, .. } if !(*width > 0.0) => {
                return Err(Error::Config("initial width must be positive".into()))
            }
            _ => {}
        }
        self.grid(self.initial_center())?
            .validate(self.lattice.sigma)
    }

    fn initial_center(&self) -> [f64; 2] {
        match &self.initial_state {
            InitialState::Coherent { idx } => [
                self.lattice.position(idx.m[0]),
                self.lattice.position(idx.m[1]),
            ],
            InitialState::Gaussian { x0, .. } => *x0,
            InitialState::AngularMomentum { .. } => [0.0, 0.0],
        }
    }

    pub fn grid(&self, center: [f64; 2]) -> Result<SpatialGrid> {
        SpatialGrid::for_lattice(&self.lattice, self.grid_points, self.max_dx, center)
    }

    /// The initial wavefunction on its starting window.
    pub fn initial_wavefunction(&self) -> Result<WaveFunction> {
        let grid = self.grid(self.initial_center())?;
        let psi = match &self.initial_state {
            InitialState::Coherent { idx } => WaveFunction::coherent(grid, &self.lattice, idx),
            InitialState::Gaussian { x0, k0, width } => {
                let w = *width;
                let dim = grid.dim;
                let norm = crate::lattice::amplitude_norm(w);
                let mut psi = WaveFunction::from_fn(grid, *k0, |x, y| {
                    let u = [x - x0[0], y - x0[1]];
                    let mut amp = num_complex::Complex64::new(1.0, 0.0);
                    for a in 0..dim {
                        let pos = [x, y][a];
                        amp *= num_complex::Complex64::from_polar(
                            norm * (-u[a] * u[a] / (4.0 * w * w)).exp(),
                            k0[a] * pos,
                        );
                    }
                    amp
                });
                psi.normalize();
                psi
            }
            InitialState::AngularMomentum { lz, omega } => {
                WaveFunction::angular_momentum(grid, *lz, *omega)
            }
        };
        Ok(psi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    ReachedTMax,
    BoundaryBreach,
    EventLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub t: f64,
    pub idx: DetectorIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub seed: u64,
    pub events: Vec<ClickEvent>,
    pub reason: TerminationReason,
    /// Time the run stopped.
    pub t_end: f64,
    /// Events carry only a position index (filtering model).
    #[serde(default)]
    pub position_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    NoJump,
    Jump(DetectorIndex),
}

/// The per-trajectory generator.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Pick the detector whose cumulative ladder slot contains `u`, where slot
/// widths are `dt * rate`. `None` means no jump.
pub fn select_jump(overlaps: &Overlaps, dt: f64, u: f64) -> Option<DetectorIndex> {
    let mut cum = 0.0;
    for o in &overlaps.entries {
        cum += dt * o.rate();
        if u < cum {
            return Some(o.idx);
        }
    }
    None
}

/// One MCWF step from the normalised state `psi`, whose overlaps are given.
/// On no-jump `psi` is evolved and renormalised; on a jump it is left for the
/// caller to replace.
pub fn mcwf_step(
    prop: &mut Propagator,
    psi: &mut WaveFunction,
    lattice: &DetectorLattice,
    overlaps: &Overlaps,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let total = dt * overlaps.total_rate();
    if total > 1.0 {
        return Err(Error::StepTooLarge { loss: total, dt });
    }
    let u: f64 = rng.random();
    if let Some(idx) = select_jump(overlaps, dt, u) {
        return Ok(StepOutcome::Jump(idx));
    }
    prop.evolve_nonhermitian_step(psi, lattice, dt, overlaps)?;
    psi.normalize();
    Ok(StepOutcome::NoJump)
}

/// Cumulative lattice Husimi weights of an initial state.
#[derive(Clone, Debug)]
pub struct HusimiTable {
    pub indices: Vec<DetectorIndex>,
    pub cumulative: Vec<f64>,
}

impl HusimiTable {
    pub fn new(
        psi0: &WaveFunction,
        lattice: &DetectorLattice,
        prop: &mut Propagator,
    ) -> Result<Self> {
        let mut psi = psi0.clone();
        let ov = prop.active_overlaps(&mut psi, lattice)?;
        let mut indices = Vec::with_capacity(ov.entries.len());
        let mut cumulative = Vec::with_capacity(ov.entries.len());
        let mut sum = 0.0;
        let mut largest: f64 = 0.0;
        for o in &ov.entries {
            let w = o.amp.norm_sqr();
            largest = largest.max(w);
            sum += w;
            indices.push(o.idx);
            cumulative.push(sum);
        }
        if largest < 1e-12 {
            return Err(Error::DegenerateState);
        }
        cumulative.iter_mut().for_each(|c| *c /= sum);
        Ok(Self {
            indices,
            cumulative,
        })
    }

    pub fn sample(&self, u: f64) -> DetectorIndex {
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.indices.len() - 1);
        self.indices[i]
    }

    /// Probability of one index.
    pub fn weight(&self, idx: &DetectorIndex) -> f64 {
        match self.indices.iter().position(|i| i == idx) {
            Some(0) => self.cumulative[0],
            Some(i) => self.cumulative[i] - self.cumulative[i - 1],
            None => 0.0,
        }
    }
}

/// Draw the t = 0 click from the lattice Husimi weights of `psi0`.
pub fn sample_first_click(
    psi0: &WaveFunction,
    lattice: &DetectorLattice,
    rng: &mut impl Rng,
) -> Result<DetectorIndex> {
    let mut prop = Propagator::default();
    let table = HusimiTable::new(psi0, lattice, &mut prop)?;
    Ok(table.sample(rng.random()))
}

/// Ensemble-wide data shared by all trajectories of one configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub psi0: WaveFunction,
    pub husimi: Option<HusimiTable>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let psi0 = config.initial_wavefunction()?;
        let husimi = match config.first_click_mode {
            FirstClickMode::HusimiSampled => Some(HusimiTable::new(
                &psi0,
                &config.lattice,
                &mut Propagator::new(config.potential),
            )?),
            FirstClickMode::AssumeAtOrigin => None,
        };
        Ok(Self { psi0, husimi })
    }
}

/// State after a click at `idx`.
fn collapse(
    config: &RunConfig,
    current: &SpatialGrid,
    idx: &DetectorIndex,
) -> Result<WaveFunction> {
    if config.recenter {
        let grid = config.grid([0.0, 0.0])?;
        Ok(WaveFunction::coherent(grid, &config.lattice, idx))
    } else {
        let frame = [
            config.lattice.momentum(idx.n[0]),
            config.lattice.momentum(idx.n[1]),
        ];
        let mut psi = WaveFunction::coherent_in(*current, frame, &config.lattice, idx);
        psi.normalize();
        Ok(psi)
    }
}

/// Shift the window by whole cells once the packet has drifted more than
/// an eighth of its length off centre.
fn track_window(psi: &mut WaveFunction) {
    let mean = psi.position_moments().mean;
    for a in 0..psi.grid.dim {
        let off = mean[a] - psi.grid.center[a];
        if off.abs() > psi.grid.length() / 8.0 {
            psi.shift_window(a, (off / psi.grid.dx).round() as i64);
        }
    }
}

/// Run one trajectory, calling `observe(t, psi)` at t = 0 and after every
/// step. Returns the record and the final state.
pub fn run_trajectory_observed(
    config: &RunConfig,
    prepared: &Prepared,
    index: u64,
    prop: &mut Propagator,
    observe: &mut dyn FnMut(f64, &WaveFunction),
) -> Result<(TrajectoryRecord, WaveFunction)> {
    prop.potential = config.potential;
    let lattice = &config.lattice;
    let mut rng = trajectory_rng(config.master_seed, index);
    let mut events = Vec::new();
    let mut psi = match (&prepared.husimi, &config.initial_state) {
        (Some(table), _) => {
            let idx = table.sample(rng.random());
            events.push(ClickEvent { t: 0.0, idx });
            collapse(config, &prepared.psi0.grid, &idx)?
        }
        (None, InitialState::Coherent { idx }) => {
            events.push(ClickEvent { t: 0.0, idx: *idx });
            prepared.psi0.clone()
        }
        (None, _) => prepared.psi0.clone(),
    };
    let limit = config.max_events.unwrap_or(usize::MAX);
    let mut t = 0.0;
    observe(t, &psi);
    let reason = loop {
        if events.len() >= limit {
            break TerminationReason::EventLimit;
        }
        let remaining = config.t_max - t;
        if remaining <= 1e-12 * config.t_max {
            break TerminationReason::ReachedTMax;
        }
        let overlaps = prop.active_overlaps(&mut psi, lattice)?;
        let rate = overlaps.total_rate();
        let mut dt = config.dt_cap.min(remaining);
        if rate > 0.0 {
            dt = dt.min(MAX_STEP_PROBABILITY / rate);
        }
        let outcome = mcwf_step(prop, &mut psi, lattice, &overlaps, dt, &mut rng)?;
        t += dt;
        match outcome {
            StepOutcome::Jump(idx) => {
                events.push(ClickEvent { t, idx });
                psi = collapse(config, &psi.grid, &idx)?;
            }
            StepOutcome::NoJump => {
                if config.recenter {
                    track_window(&mut psi);
                }
                if check_boundary(&psi, t).is_err() {
                    observe(t, &psi);
                    break TerminationReason::BoundaryBreach;
                }
            }
        }
        observe(t, &psi);
    };
    let record = TrajectoryRecord {
        index,
        seed: config.master_seed,
        events,
        reason,
        t_end: t,
        position_only: false,
    };
    Ok((record, psi))
}

/// Renormalised no-click evolution of the initial state on its own window,
/// returned at each of the ascending `times`.
pub fn no_click_snapshots(config: &RunConfig, times: &[f64]) -> Result<Vec<WaveFunction>> {
    config.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Config(
            "snapshot times must be ascending and non-negative".into(),
        ));
    }
    let mut psi = config.initial_wavefunction()?;
    let mut prop = Propagator::new(config.potential);
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    for &target in times {
        while target - t > 1e-12 * target.max(1.0) {
            let overlaps = prop.active_overlaps(&mut psi, &config.lattice)?;
            let mut dt = config.dt_cap.min(target - t);
            if overlaps.total_rate() > 0.0 {
                dt = dt.min(MAX_STEP_PROBABILITY / overlaps.total_rate());
            }
            prop.evolve_nonhermitian_step(&mut psi, &config.lattice, dt, &overlaps)?;
            psi.normalize();
            t += dt;
            check_boundary(&psi, t)?;
        }
        out.push(psi.clone());
    }
    Ok(out)
}

pub fn run_trajectory(config: &RunConfig, trajectory_index: u64) -> Result<TrajectoryRecord> {
    let prepared = Prepared::new(config)?;
    let mut prop = Propagator::new(config.potential);
    run_trajectory_observed(
        config,
        &prepared,
        trajectory_index,
        &mut prop,
        &mut |_, _| {},
    )
    .map(|r| r.0)
}

/// Map `f` over trajectory indices `0..n_traj` on `workers` threads,
/// returning results in index order.
pub fn parallel_map<T, F>(n_traj: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut Propagator) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n_traj)
            .into_par_iter()
            .map_init(Propagator::default, |prop, i| f(i, prop))
            .collect()
    })
}

pub fn run_ensemble(
    config: &RunConfig,
    n_traj: u64,
    workers: usize,
) -> Result<Vec<TrajectoryRecord>> {
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    let prepared = Prepared::new(config)?;
    parallel_map(n_traj, workers, |i, prop| {
        run_trajectory_observed(config, &prepared, i, prop, &mut |_, _| {}).map(|r| r.0)
    })
}

/// Keep records whose first click lies in the polar-angle sector
/// `[from, to)` (radians, measured counter-clockwise from +x).
pub fn post_select_sector(
    records: Vec<TrajectoryRecord>,
    lattice: &DetectorLattice,
    from: f64,
    to: f64,
) -> Vec<TrajectoryRecord> {
    records
        .into_iter()
        .filter(|r| {
            r.events.first().is_some_and(|e| {
                let phi = lattice
                    .position(e.idx.m[1])
                    .atan2(lattice.position(e.idx.m[0]));
                let rel = (phi - from).rem_euclid(std::f64::consts::TAU);
                rel < (to - from).rem_euclid(std::f64::consts::TAU)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{coherent_overlap, AxisExtent};

    fn single(gamma: f64) -> RunConfig {
        let lat = DetectorLattice::square_1d(5.0, gamma, [0, 0], [0, 0]);
        let mut cfg = RunConfig::new(
            lat,
            Potential::Free,
            InitialState::Coherent {
                idx: DetectorIndex::new(0, 0),
            },
        );
        cfg.t_max = 1.0;
        cfg.dt_cap = 1e-3;
        cfg.grid_points = 128;
        cfg
    }

    #[test]
    fn zero_rate_never_jumps() {
        let mut cfg = single(0.0);
        cfg.first_click_mode = FirstClickMode::AssumeAtOrigin;
        cfg.dt_cap = 0.01;
        let rec = run_trajectory(&cfg, 0).unwrap();
        assert_eq!(rec.events.len(), 1);
        assert_eq!(rec.reason, TerminationReason::ReachedTMax);
        assert!((rec.t_end - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let mut cfg = single(5.0);
        cfg.master_seed = 9;
        let a = run_trajectory(&cfg, 3).unwrap();
        let b = run_trajectory(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.events.len() > 1);
        assert!(a.events.windows(2).all(|w| w[0].t < w[1].t));
        let c = run_trajectory(&cfg, 4).unwrap();
        assert_ne!(a.events, c.events);
        let ens = run_ensemble(&cfg, 1, 1).unwrap();
        assert_eq!(ens[0], run_trajectory(&cfg, 0).unwrap());
    }

    #[test]
    fn ensemble_independent_of_workers() {
        let mut cfg = single(5.0);
        cfg.t_max = 0.3;
        let a = run_ensemble(&cfg, 6, 1).unwrap();
        let b = run_ensemble(&cfg, 6, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn norm_loss_equals_jump_probability() {
        // second-order residual of the Euler step is the only mismatch
        let lat = DetectorLattice::square_1d(2.0, 3.0, [-5, 5], [-5, 5]);
        let g = SpatialGrid::for_lattice(&lat, 256, lat.sigma / 4.0, [0.0, 0.0]).unwrap();
        let mut psi = WaveFunction::gaussian(g, 0.3, 1.1, 1.0);
        let mut prop = Propagator::new(Potential::Free);
        let dt = 1e-5;
        let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
        let dp = dt * ov.total_rate();
        let info = prop
            .evolve_nonhermitian_step(&mut psi, &lat, dt, &ov)
            .unwrap();
        assert!((info.norm_loss - dp).abs() < 1e-8);
    }

    #[test]
    fn post_jump_state_is_the_detector_state() {
        let mut cfg = single(5.0);
        cfg.lattice = DetectorLattice::square_1d(2.0, 5.0, [-4, 4], [-4, 4]);
        cfg.t_max = 0.5;
        let prepared = Prepared::new(&cfg).unwrap();
        let mut prop = Propagator::default();
        let mut last = None;
        let (rec, psi) = run_trajectory_observed(&cfg, &prepared, 1, &mut prop, &mut |t, p| {
            last = Some((t, p.clone()))
        })
        .unwrap();
        assert!(rec.events.len() > 1);
        let (_, final_state) = last.unwrap();
        assert_eq!(final_state.phi, psi.phi);
        // replay to the last jump and compare with |alpha>
        let jump = rec.events.last().unwrap();
        let mut at_jump = None;
        run_trajectory_observed(&cfg, &prepared, 1, &mut prop, &mut |t, p| {
            if t == jump.t {
                at_jump = Some(p.clone());
            }
        })
        .unwrap();
        let mut p = at_jump.unwrap();
        let ov = prop.active_overlaps(&mut p, &cfg.lattice).unwrap();
        let o = ov.get(&jump.idx).unwrap();
        assert!((o.amp.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn husimi_sampling_of_detector_state() {
        let lat = DetectorLattice::square_1d(5.0, 1.0, [-5, 5], [-5, 5]);
        let g = SpatialGrid::for_lattice(&lat, 256, lat.sigma / 4.0, [0.0, 0.0]).unwrap();
        let psi = WaveFunction::coherent(g, &lat, &DetectorIndex::new(0, 0));
        let table = HusimiTable::new(&psi, &lat, &mut Propagator::default()).unwrap();
        let w0 = table.weight(&DetectorIndex::new(0, 0));
        // analytic weights: 1 over sum of |<a|a0>|^2
        let total: f64 = lat
            .indices()
            .iter()
            .map(|i| coherent_overlap(i, &DetectorIndex::new(0, 0), &lat).norm_sqr())
            .sum();
        assert!((w0 - 1.0 / total).abs() < 1e-9);
        assert!(w0 > 0.999);
    }

    #[test]
    fn husimi_superposition_is_balanced() {
        let lat = DetectorLattice::square_1d(5.0, 1.0, [-6, 6], [-3, 3]);
        let g = SpatialGrid::for_lattice(&lat, 512, lat.sigma / 4.0, [12.5, 0.0]).unwrap();
        let a = DetectorIndex::new(0, 0);
        let b = DetectorIndex::new(5, 0);
        let sa = WaveFunction::coherent_in(g, [0.0, 0.0], &lat, &a);
        let sb = WaveFunction::coherent_in(g, [0.0, 0.0], &lat, &b);
        let mut psi = sa.clone();
        psi.phi.iter_mut().zip(&sb.phi).for_each(|(x, y)| *x += y);
        psi.normalize();
        let table = HusimiTable::new(&psi, &lat, &mut Propagator::default()).unwrap();
        let mut rng = trajectory_rng(5, 0);
        let hits = (0..10_000)
            .filter(|_| table.sample(rng.random()) == a)
            .count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02, "{hits}");
    }

    #[test]
    fn degenerate_state_is_reported() {
        let lat = DetectorLattice::square_1d(5.0, 1.0, [0, 0], [0, 0]);
        let g = SpatialGrid::for_lattice(&lat, 256, lat.sigma / 4.0, [20.0, 0.0]).unwrap();
        let psi = WaveFunction::gaussian(g, 20.0, 0.0, lat.sigma);
        let mut rng = trajectory_rng(0, 0);
        assert_eq!(
            sample_first_click(&psi, &lat, &mut rng),
            Err(Error::DegenerateState)
        );
    }

    #[test]
    fn born_frequencies_for_frozen_state() {
        let lat = DetectorLattice::square_1d(1.5, 1.0, [-3, 3], [-3, 3]);
        let g = SpatialGrid::for_lattice(&lat, 256, lat.sigma / 4.0, [0.0, 0.0]).unwrap();
        let mut psi = WaveFunction::gaussian(g, 0.4, 0.8, 0.9);
        let mut prop = Propagator::default();
        let ov = prop.active_overlaps(&mut psi, &lat).unwrap();
        let dt = 0.05;
        let mut rng = trajectory_rng(77, 0);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 1_000_000;
        for _ in 0..draws {
            if let Some(i) = select_jump(&ov, dt, rng.random()) {
                *counts.entry(i).or_insert(0usize) += 1;
            }
        }
        for o in &ov.entries {
            let p = o.rate() * dt;
            if p * draws as f64 > 2000.0 {
                let got = counts.get(&o.idx).copied().unwrap_or(0) as f64 / draws as f64;
                assert!((got / p - 1.0).abs() < 0.05, "{:?} {got} {p}", o.idx);
            }
        }
    }

    #[test]
    fn sector_filter() {
        let lat = DetectorLattice::square_2d(
            3.0,
            1.0,
            AxisExtent {
                m: [-5, 5],
                n: [-5, 5],
            },
        );
        let rec = |mx, my| TrajectoryRecord {
            index: 0,
            seed: 0,
            events: vec![ClickEvent {
                t: 0.0,
                idx: DetectorIndex::new_2d(mx, 0, my, 0),
            }],
            reason: TerminationReason::ReachedTMax,
            t_end: 1.0,
            position_only: false,
        };
        let kept = post_select_sector(
            vec![rec(1, 0), rec(0, 1), rec(-1, 0), rec(1, -1)],
            &lat,
            -0.5,
            0.5,
        );
        assert_eq!(kept.len(), 1);
    }
}
