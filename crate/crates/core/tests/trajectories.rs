use qmeter::lattice::{DetectorIndex, DetectorLattice};
use qmeter::mcwf::{
    no_click_snapshots, run_ensemble, run_trajectory, InitialState, RunConfig, TerminationReason,
};
use qmeter::propagator::Potential;
use qmeter::renewal::{first_click_density, trapezoid, IntensityTable};
use qmeter::stats::{interarrival_times, ks_test};

fn single_meter(gamma: f64, potential: Potential) -> RunConfig {
    let lat = DetectorLattice::square_1d(5.0, gamma, [0, 0], [0, 0]);
    let mut cfg = RunConfig::new(
        lat,
        potential,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 0),
        },
    );
    cfg.grid_points = 128;
    cfg
}

#[test]
fn ensemble_does_not_depend_on_worker_count() {
    let mut cfg = RunConfig::new(
        DetectorLattice::square_1d(2.5, 2.0, [-12, 12], [-2, 4]),
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 2),
        },
    );
    cfg.t_max = 0.5;
    cfg.master_seed = 11;
    let one = run_ensemble(&cfg, 6, 1).unwrap();
    let three = run_ensemble(&cfg, 6, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(run_trajectory(&cfg, 4).unwrap(), one[4]);
    assert!(one
        .iter()
        .all(|r| r.reason == TerminationReason::ReachedTMax));
    assert!(one
        .iter()
        .all(|r| r.events.windows(2).all(|w| w[0].t <= w[1].t)));
}

#[test]
fn frozen_meter_clicks_are_exponential() {
    let gamma = 4.0;
    let mut cfg = single_meter(gamma, Potential::Frozen);
    cfg.t_max = 2.0;
    cfg.master_seed = 5;
    let records = run_ensemble(&cfg, 1500, 2).unwrap();
    let waits = interarrival_times(&records);
    assert!(waits.len() > 1000);
    let (sum, n): (f64, usize) = (waits.iter().sum(), waits.len());
    let mean = sum / n as f64;
    assert!((mean - 1.0 / gamma).abs() < 0.05, "mean wait {mean}");
    let first: Vec<f64> = records
        .iter()
        .filter_map(|r| r.events.get(1).map(|e| e.t))
        .collect();
    // the first wait is conditioned on falling inside the window
    let norm = 1.0 - (-gamma * cfg.t_max).exp();
    let ks = ks_test(&first, |t| (1.0 - (-gamma * t).exp()) / norm).unwrap();
    assert!(ks.pass, "{ks:?}");
}

#[test]
fn constant_rate_first_click_density_is_normalised() {
    let table = IntensityTable::constant(3.0, 6.0, 1e-3);
    let fc = first_click_density(&table);
    let mass = trapezoid(&fc.t, &fc.density);
    assert!((mass + fc.escaped_mass - 1.0).abs() < 1e-6);
    assert!((fc.density[0] - 3.0).abs() < 1e-12);
}

#[test]
fn no_click_evolution_depletes_neighbouring_sites() {
    let mut cfg = RunConfig::new(
        DetectorLattice::square_1d(3.0, 1.0, [-6, 6], [-4, 4]),
        Potential::Free,
        InitialState::Coherent {
            idx: DetectorIndex::new(0, 0),
        },
    );
    cfg.dt_cap = 5e-3;
    let snaps = no_click_snapshots(&cfg, &[0.0, 1.0, 2.0]).unwrap();
    let last = snaps.last().unwrap();
    let dens = last.density();
    let at = |x: f64| {
        let g = &last.grid;
        dens[((x - g.origin(0)) / g.dx).round() as usize]
    };
    let site = (at(3.0) + at(-3.0)) / 2.0;
    let mid = (at(1.5) + at(-1.5)) / 2.0;
    assert!(site < mid, "site {site} midpoint {mid}");
    for s in &snaps {
        assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
    }
}
