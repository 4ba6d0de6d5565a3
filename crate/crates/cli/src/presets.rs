//! Named scenario bundles, one per figure-style experiment plus the two
//! validation runs.

use std::f64::consts::PI;

use qmeter::lattice::{AxisExtent, DetectorIndex, DetectorLattice, DEFAULT_SIGMA};
use qmeter::mcwf::{FirstClickMode, InitialState, RunConfig};
use qmeter::propagator::Potential;

use crate::config::{
    ConfigError, Model, MomentumCheck, Pipeline, ScenarioConfig, StatsSpec, SCHEMA_VERSION,
};

pub const NAMES: [&str; 11] = [
    "fig1",
    "fig2-free",
    "fig2-harmonic",
    "fig3",
    "fig4",
    "fig5",
    "fig6",
    "fig7",
    "escape-sweep",
    "two-detector",
    "lindblad-check",
];

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg = match name {
        "fig1" => fig1(),
        "fig2-free" => fig2_free(),
        "fig2-harmonic" => fig2_harmonic(),
        "fig3" => fig3(),
        "fig4" => fig4(),
        "fig5" => fig5(),
        "fig6" => fig6(),
        "fig7" => fig7(),
        "escape-sweep" => escape_sweep(),
        "two-detector" => two_detector(),
        "lindblad-check" => lindblad_check(),
        _ => return Err(ConfigError::UnknownPreset(name.into())),
    };
    Ok(ScenarioConfig {
        preset: Some(name.into()),
        ..cfg
    })
}

fn scenario(run: RunConfig, n_traj: u64, pipeline: Pipeline) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        preset: None,
        model: Model::Jump,
        run,
        n_traj,
        bin_width: qmeter::stats::DEFAULT_BIN_WIDTH,
        pipeline,
    }
}

fn stats(fit_window: Option<[f64; 2]>) -> Pipeline {
    Pipeline::Ensemble {
        stats: Some(StatsSpec {
            fit_window,
            click_histogram: false,
        }),
        renewal: false,
        sector: None,
    }
}

/// A particle at rest on a 2D lattice, no clicks.
fn fig1() -> ScenarioConfig {
    let lat = DetectorLattice::square_2d(
        3.0,
        1.0,
        AxisExtent {
            m: [-8, 8],
            n: [-6, 6],
        },
    );
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new_2d(0, 0, 0, 0),
        },
    );
    run.t_max = 2.0;
    run.dt_cap = 1e-2;
    scenario(
        run,
        1,
        Pipeline::Snapshots {
            times: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        },
    )
}

fn fig2_free() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(2.5, 2.0, [-10, 40], [-6, 10]);
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 2),
        },
    );
    run.t_max = 3.0;
    let mut cfg = scenario(run, 20, stats(None));
    cfg.bin_width = 0.1;
    cfg
}

fn fig2_harmonic() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(2.5, 2.0, [-8, 8], [-8, 8]);
    let mut run = RunConfig::new(
        lat,
        Potential::Harmonic1d { omega: 1.0 },
        InitialState::Coherent {
            idx: DetectorIndex::new(2, 0),
        },
    );
    run.t_max = 20.0;
    let mut cfg = scenario(run, 20, stats(None));
    cfg.bin_width = 0.1;
    cfg
}

/// Angular-momentum state in a 2D trap, first click drawn from the Husimi
/// weights.
fn fig3() -> ScenarioConfig {
    let lat = DetectorLattice::square_2d(
        2.5,
        1.0,
        AxisExtent {
            m: [-6, 6],
            n: [-6, 6],
        },
    );
    let mut run = RunConfig::new(
        lat,
        Potential::Harmonic2d { omega: 1.0 },
        InitialState::AngularMomentum { lz: 25, omega: 1.0 },
    );
    run.first_click_mode = FirstClickMode::HusimiSampled;
    run.t_max = 1.0;
    run.dt_cap = 1e-2;
    run.grid_points = 128;
    scenario(
        run,
        200,
        Pipeline::Ensemble {
            stats: None,
            renewal: false,
            sector: None,
        },
    )
}

fn fig4() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(5.0, 1.0, [-2, 12], [0, 2]);
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 1),
        },
    );
    run.t_max = 3.0;
    run.grid_points = 512;
    run.max_events = Some(2);
    scenario(run, 20_000, Pipeline::FirstClick { hist_t_max: 3.0 })
}

/// Two meters at (0, 5) and (5, 5).
fn fig5() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(5.0, 1.0, [0, 1], [1, 1]);
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 1),
        },
    );
    run.t_max = 1.5;
    run.grid_points = 512;
    scenario(
        run,
        5_000,
        Pipeline::Ensemble {
            stats: Some(StatsSpec {
                fit_window: None,
                click_histogram: true,
            }),
            renewal: false,
            sector: None,
        },
    )
}

fn fig6() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(5.0, 1.0, [-6, 12], [1, 1]);
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 1),
        },
    );
    run.grid_points = 512;
    run.t_max = 5.0;
    scenario(
        run,
        1,
        Pipeline::Retardation {
            gammas: vec![0.5, 10.0, 20.0, 50.0],
            intensity_t_max: 6.0,
            t_end: 5.0,
            fit_window: [3.0, 5.0],
            cut_tol: 1e-3,
            m_range: [-6, 12],
            momentum_check: Some(MomentumCheck {
                gamma: 50.0,
                n_traj: 300,
                t_max: 2.0,
                n_range: [-1, 3],
            }),
        },
    )
}

fn fig7() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(0.73, 1.0, [-1000, 1000], [-200, 200]);
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Gaussian {
            x0: [0.0, 0.0],
            k0: [5.0, 0.0],
            width: DEFAULT_SIGMA,
        },
    );
    run.t_max = 12.0;
    run.dt_cap = 1e-2;
    let mut cfg = scenario(
        run,
        10_000,
        Pipeline::Scaling {
            spacings: vec![5.1, 0.73],
            models: vec![Model::Jump, Model::Filtering],
            fit_window: [4.0, 12.0],
            filtering_dt_cap: 5e-3,
            filtering_grid_points: 512,
        },
    );
    cfg.bin_width = 0.1;
    cfg
}

/// Single meter moving with the particle: `D_p` is set to the velocity so
/// the initial state `(0, 1)` carries it.
fn escape_sweep() -> ScenarioConfig {
    let mut lat = DetectorLattice::square_1d(5.0, 15.0, [0, 0], [1, 1]);
    lat.dp_spacing = 2.0;
    let mut run = RunConfig::new(
        lat,
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 1),
        },
    );
    run.grid_points = 512;
    scenario(
        run,
        1,
        Pipeline::EscapeSweep {
            gammas: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            velocity: 2.0,
            velocities: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            gamma: 15.0,
            intensity_t_max: 4.0,
        },
    )
}

/// Meters `(0, 0)` and `(5, 0)` with no Hamiltonian.
fn two_detector() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(5.0, 50.0, [0, 1], [0, 0]);
    let mut run = RunConfig::new(
        lat,
        Potential::Frozen,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 0),
        },
    );
    run.grid_points = 128;
    scenario(
        run,
        1,
        Pipeline::TwoDetector {
            periods: 2.0,
            dt: 1e-3,
        },
    )
}

/// Five meters on a 128-point grid, small enough for the dense master
/// equation.
fn lindblad_check() -> ScenarioConfig {
    let lat = DetectorLattice::square_1d(2.3, 1.0, [-2, 2], [0, 0]);
    let mut run = RunConfig::new(
        lat,
        Potential::Harmonic1d { omega: 1.0 },
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 0),
        },
    );
    run.grid_points = 128;
    run.t_max = 1.0;
    run.recenter = false;
    scenario(
        run,
        1,
        Pipeline::LindbladCheck {
            ensembles: vec![1_000, 10_000],
            dt: 1e-3,
        },
    )
}

/// Lattice extents wide enough for the dense-grid scaling runs at spacing
/// `d`.
pub fn scaling_lattice(d: f64, gamma: f64) -> DetectorLattice {
    let m = (730.0 / d).ceil() as i32;
    let n = (146.0 / d).ceil() as i32;
    DetectorLattice::square_1d(d, gamma, [-m, m], [-n, n])
}

/// Polar angle of a 2D click, in `(-pi, pi]`.
pub fn click_angle(lat: &DetectorLattice, idx: &DetectorIndex) -> f64 {
    lat.position(idx.m[1]).atan2(lat.position(idx.m[0]))
}

/// Angle increment wrapped into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
