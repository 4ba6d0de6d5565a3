//! The scenario pipelines. Each returns typed results (used directly by the
//! acceptance suite) and records its files in an [`Outputs`].

use serde::Serialize;
use serde_json::{json, Value};

use qmeter::filtering::run_filtering_ensemble;
use qmeter::lattice::{coherent_overlap, DetectorIndex, DetectorLattice};
use qmeter::lindblad::{
    grid_detectors, mcwf_density, meter_vector, trace_distance, DensityMatrix, Lindblad,
};
use qmeter::mcwf::{
    no_click_snapshots, post_select_sector, run_ensemble, run_trajectory, Prepared, RunConfig,
    TrajectoryRecord,
};
use qmeter::renewal::{
    compute_intensities, escape_time, first_click_density, meter_subspace_intensities,
    renewal_convolution, renewal_kernel, retardation_fit, trapezoid, two_detector_rates,
    IntensityTable, RetardationFit,
};
use qmeter::stats::{
    bin_observable, bin_samples, click_time_histogram, fit_power_law, fit_power_law_points,
    interarrival_histogram, linear_fit, normality_by_bin, BinNormality, BinnedSeries,
    ClickHistogram, LinearFit, Observable, PowerLawFit, SeriesColumn,
};

use crate::analysis;
use crate::config::{ConfigError, Model, Pipeline, ScenarioConfig, StatsSpec};
use crate::output::{Cell, Outputs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] qmeter::error::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Sim(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Run the pipeline named in the config; `report.json` is added to the
/// outputs and also returned.
pub fn run_scenario(cfg: &ScenarioConfig, workers: usize, out: &mut Outputs) -> Result<Value> {
    cfg.validate()?;
    let report = match &cfg.pipeline {
        Pipeline::Ensemble {
            stats,
            renewal,
            sector,
        } => ensemble(cfg, workers, stats.as_ref(), *renewal, *sector, out).map(|r| r.report)?,
        Pipeline::Snapshots { times } => serde_json::to_value(snapshots(cfg, times, out)?).unwrap(),
        Pipeline::FirstClick { hist_t_max } => {
            serde_json::to_value(first_click(cfg, *hist_t_max, workers, out)?.summary()).unwrap()
        }
        Pipeline::Retardation { .. } => {
            serde_json::to_value(retardation(cfg, workers, out)?).unwrap()
        }
        Pipeline::Scaling { .. } => {
            let runs = scaling(cfg, workers, out)?;
            json!({ "runs": runs.iter().map(ScalingRun::summary).collect::<Vec<_>>() })
        }
        Pipeline::EscapeSweep { .. } => serde_json::to_value(escape_sweep(cfg, out)?).unwrap(),
        Pipeline::TwoDetector { periods, dt } => {
            serde_json::to_value(two_detector(cfg, *periods, *dt, out)?).unwrap()
        }
        Pipeline::LindbladCheck { ensembles, dt } => {
            serde_json::to_value(lindblad_check(cfg, ensembles, *dt, workers, out)?).unwrap()
        }
    };
    out.json("report.json", report.clone());
    Ok(report)
}

pub fn simulate(
    run: &RunConfig,
    model: Model,
    n_traj: u64,
    workers: usize,
) -> Result<Vec<TrajectoryRecord>> {
    Ok(match model {
        Model::Jump => run_ensemble(run, n_traj, workers)?,
        Model::Filtering => run_filtering_ensemble(run, n_traj, workers)?,
    })
}

/// Detector label used in CSV columns and histogram rows.
pub fn detector_label(idx: &DetectorIndex, dim: usize) -> String {
    if dim == 1 {
        format!("{}:{}", idx.m[0], idx.n[0])
    } else {
        format!("{}:{}:{}:{}", idx.m[0], idx.n[0], idx.m[1], idx.n[1])
    }
}

pub fn trajectory_json(rec: &TrajectoryRecord, dim: usize) -> Value {
    let events: Vec<Value> = rec
        .events
        .iter()
        .map(|e| {
            let n = |a: usize| {
                if rec.position_only {
                    Value::Null
                } else {
                    json!(e.idx.n[a])
                }
            };
            if dim == 1 {
                json!([e.t, e.idx.m[0], n(0)])
            } else {
                json!([e.t, e.idx.m[0], n(0), e.idx.m[1], n(1)])
            }
        })
        .collect();
    json!({ "seed": rec.seed, "index": rec.index, "events": events, "reason": rec.reason, "t_end": rec.t_end })
}

pub fn write_trajectories(
    out: &mut Outputs,
    stem: &str,
    records: &[TrajectoryRecord],
    lattice: &DetectorLattice,
) {
    let dim = lattice.dim();
    out.jsonl(
        &format!("{stem}.jsonl"),
        records.iter().map(|r| trajectory_json(r, dim)),
    );
    let k = |r: &TrajectoryRecord, n: i32| {
        if r.position_only {
            Cell::Empty
        } else {
            lattice.momentum(n).into()
        }
    };
    let rows = records.iter().flat_map(|r| {
        r.events.iter().map(move |e| {
            let mut row: Vec<Cell> = vec![
                r.index.into(),
                e.t.into(),
                lattice.position(e.idx.m[0]).into(),
                k(r, e.idx.n[0]),
            ];
            if dim == 2 {
                row.push(lattice.position(e.idx.m[1]).into());
                row.push(k(r, e.idx.n[1]));
            }
            row
        })
    });
    let cols: &[&str] = if dim == 1 {
        &["trajectory_id", "t", "x_m", "k_n"]
    } else {
        &["trajectory_id", "t", "x_m", "kx_n", "y_m", "ky_n"]
    };
    out.csv(&format!("{stem}.csv"), cols, rows);
}

pub fn write_series(out: &mut Outputs, name: &str, series: &BinnedSeries) {
    let rows = series.rows.iter().map(|r| {
        vec![
            r.t_center().into(),
            r.count.into(),
            r.mean.into(),
            r.std.into(),
            r.stderr.into(),
        ]
    });
    out.csv(
        name,
        &["t_bin_center", "count", "mean", "std", "stderr"],
        rows,
    );
}

pub fn write_histogram(out: &mut Outputs, name: &str, hist: &ClickHistogram, dim: usize) {
    let centers = hist.centers();
    let mut rows = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        rows.push(vec![
            (*c).into(),
            "total".into(),
            hist.density(hist.total[b]).into(),
        ]);
        for (idx, counts) in &hist.per_detector {
            rows.push(vec![
                (*c).into(),
                Cell::S(detector_label(idx, dim)),
                hist.density(counts[b]).into(),
            ]);
        }
    }
    out.csv(name, &["t_bin", "detector_id", "density"], rows);
}

pub fn write_intensities(out: &mut Outputs, stem: &str, table: &IntensityTable, dim: usize) {
    let labels: Vec<String> = table
        .detectors
        .iter()
        .map(|d| format!("lambda_{}", detector_label(d, dim)))
        .collect();
    let mut cols: Vec<&str> = vec!["t"];
    cols.extend(labels.iter().map(String::as_str));
    cols.extend(["lambda_total", "Lambda"]);
    let rows = (0..table.t.len()).map(|k| {
        let mut row: Vec<Cell> = vec![table.t[k].into()];
        row.extend(table.lambda.iter().map(|l| Cell::F(l[k])));
        row.push(table.lambda_total[k].into());
        row.push(table.cumulative[k].into());
        row
    });
    out.csv(&format!("intensities{stem}.csv"), &cols, rows);
    let fc = first_click_density(table);
    out.csv(
        &format!("f_t1{stem}.csv"),
        &["t", "f_T1"],
        fc.t.iter()
            .zip(&fc.density)
            .map(|(t, f)| vec![(*t).into(), (*f).into()]),
    );
}

#[derive(Debug, Clone, Serialize)]
pub struct RenewalReport {
    pub horizon: f64,
    pub lambda_horizon: f64,
    pub p_escape: f64,
    pub mean_clicks: f64,
    /// Mean first-click time given a click before the horizon.
    pub mean_t1: f64,
    pub t_esc: Option<f64>,
}

pub fn renewal_report(table: &IntensityTable) -> RenewalReport {
    let fc = first_click_density(table);
    let mass = trapezoid(&table.t, &fc.density);
    let tf: Vec<f64> = table
        .t
        .iter()
        .zip(&fc.density)
        .map(|(t, f)| t * f)
        .collect();
    let lt = *table.cumulative.last().unwrap_or(&0.0);
    let stats = qmeter::renewal::click_statistics(lt);
    RenewalReport {
        horizon: table.horizon(),
        lambda_horizon: lt,
        p_escape: stats.p_escape,
        mean_clicks: stats.mean_clicks,
        mean_t1: if mass > 0.0 {
            trapezoid(&table.t, &tf) / mass
        } else {
            f64::NAN
        },
        t_esc: escape_time(table).ok(),
    }
}

pub struct EnsembleResult {
    pub records: Vec<TrajectoryRecord>,
    pub report: Value,
}

pub fn ensemble(
    cfg: &ScenarioConfig,
    workers: usize,
    stats: Option<&StatsSpec>,
    renewal: bool,
    sector: Option<[f64; 2]>,
    out: &mut Outputs,
) -> Result<EnsembleResult> {
    let run = &cfg.run;
    let lat = &run.lattice;
    let mut records = simulate(run, cfg.model, cfg.n_traj, workers)?;
    if let Some([from, to]) = sector {
        records = post_select_sector(records, lat, from, to);
        if records.is_empty() {
            return Err(
                ConfigError::Invalid("no trajectory starts in the selected sector".into()).into(),
            );
        }
    }
    write_trajectories(out, "trajectories", &records, lat);
    let mut report = json!({
        "n_traj": cfg.n_traj,
        "n_kept": records.len(),
        "clicks": records.iter().map(|r| r.events.len()).sum::<usize>(),
        "boundary_breaches": analysis::breaches(&records),
    });
    if lat.dim() == 1 {
        report["click_slope"] = json!(analysis::click_slope(&records, lat).ok());
    } else {
        report["circulation"] = json!(analysis::circulation(&records, lat).ok());
    }
    if let Some(spec) = stats {
        let axes: &[(usize, &str)] = if lat.dim() == 1 {
            &[(0, "x")]
        } else {
            &[(0, "x"), (1, "y")]
        };
        let mut fits = serde_json::Map::new();
        for &(axis, name) in axes {
            let xs = bin_observable(
                &records,
                lat,
                Observable::Position,
                axis,
                cfg.bin_width,
                run.t_max,
            )?;
            let k_obs = match cfg.model {
                Model::Jump => Observable::Momentum,
                Model::Filtering => Observable::InferredMomentum {
                    x0: position_origin(run, axis),
                },
            };
            let ks = bin_observable(&records, lat, k_obs, axis, cfg.bin_width, run.t_max)?;
            write_series(out, &format!("stats_{name}.csv"), &xs);
            write_series(out, &format!("stats_k{name}.csv"), &ks);
            if matches!(
                run.potential,
                qmeter::propagator::Potential::Harmonic1d { .. }
                    | qmeter::propagator::Potential::Harmonic2d { .. }
            ) {
                fits.insert(
                    format!("mean_{name}_peak_frequency"),
                    json!(analysis::spectral_peak(&xs).ok()),
                );
            }
            if let Some([lo, hi]) = spec.fit_window {
                fits.insert(
                    format!("sigma_{name}"),
                    json!(fit_power_law(&xs, SeriesColumn::Std, (lo, hi)).ok()),
                );
                fits.insert(
                    format!("sigma_k{name}"),
                    json!(fit_power_law(&ks, SeriesColumn::Std, (lo, hi)).ok()),
                );
            }
        }
        report["stats"] = Value::Object(fits);
        if spec.click_histogram {
            let h = click_time_histogram(&records, cfg.bin_width, run.t_max)?;
            write_histogram(out, "click_hist.csv", &h, lat.dim());
        }
    }
    if renewal {
        let table = compute_intensities(run, run.t_max)?;
        write_intensities(out, "", &table, lat.dim());
        report["renewal"] = serde_json::to_value(renewal_report(&table)).unwrap();
    }
    Ok(EnsembleResult { records, report })
}

fn position_origin(run: &RunConfig, axis: usize) -> f64 {
    match &run.initial_state {
        qmeter::mcwf::InitialState::Coherent { idx } => run.lattice.position(idx.m[axis]),
        qmeter::mcwf::InitialState::Gaussian { x0, .. } => x0[axis],
        qmeter::mcwf::InitialState::AngularMomentum { .. } => 0.0,
    }
}

pub fn single_trajectory(
    cfg: &ScenarioConfig,
    index: u64,
    out: &mut Outputs,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let rec = match cfg.model {
        Model::Jump => run_trajectory(&cfg.run, index)?,
        Model::Filtering => {
            let prepared = Prepared::new(&cfg.run)?;
            let mut prop = qmeter::propagator::Propagator::new(cfg.run.potential);
            qmeter::filtering::run_filtering_trajectory(&cfg.run, &prepared, index, &mut prop)?
        }
    };
    write_trajectories(
        out,
        "trajectory",
        std::slice::from_ref(&rec),
        &cfg.run.lattice,
    );
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotReport {
    pub times: Vec<f64>,
    pub files: Vec<String>,
    /// Last snapshot of a 2D run: mean density at the four sites next to the
    /// starting detector and at the four midpoints between those sites.
    pub neighbour_site_density: Option<f64>,
    pub neighbour_midpoint_density: Option<f64>,
}

pub fn snapshots(cfg: &ScenarioConfig, times: &[f64], out: &mut Outputs) -> Result<SnapshotReport> {
    let snaps = no_click_snapshots(&cfg.run, times)?;
    let mut files = Vec::new();
    for (t, psi) in times.iter().zip(&snaps) {
        let g = psi.grid;
        let dens = psi.density();
        let name = format!("density_t{t:.3}.csv");
        if g.dim == 1 {
            out.csv(
                &name,
                &["x", "density"],
                (0..g.points).map(|j| vec![g.coord(0, j).into(), dens[j].into()]),
            );
        } else {
            let rows = (0..g.points).flat_map(|j| {
                let dens = &dens;
                (0..g.points).map(move |i| {
                    vec![
                        g.coord(0, i).into(),
                        g.coord(1, j).into(),
                        dens[j * g.points + i].into(),
                    ]
                })
            });
            out.csv(&name, &["x", "y", "density"], rows);
        }
        files.push(name);
    }
    let (site, mid) = match (snaps.last(), &cfg.run.initial_state) {
        (Some(psi), qmeter::mcwf::InitialState::Coherent { idx }) if psi.grid.dim == 2 => {
            let lat = &cfg.run.lattice;
            let c = [lat.position(idx.m[0]), lat.position(idx.m[1])];
            let (s, m) = analysis::neighbour_contrast(psi, c, lat.dx_spacing);
            (Some(s), Some(m))
        }
        _ => (None, None),
    };
    Ok(SnapshotReport {
        times: times.to_vec(),
        files,
        neighbour_site_density: site,
        neighbour_midpoint_density: mid,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BinCheck {
    pub t_lo: f64,
    pub t_hi: f64,
    pub density: f64,
    /// Bin average of the renewal first-click density.
    pub expected: f64,
    /// Binomial standard error of the density under the expected value.
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct FirstClickResult {
    pub table: IntensityTable,
    pub histogram: ClickHistogram,
    pub bins: Vec<BinCheck>,
    /// Local maxima of the renewal density.
    pub peaks: Vec<f64>,
}

impl FirstClickResult {
    pub fn outside(&self, z: f64) -> usize {
        self.bins
            .iter()
            .filter(|b| (b.density - b.expected).abs() > z * b.stderr)
            .count()
    }

    pub fn summary(&self) -> Value {
        let worst = self
            .bins
            .iter()
            .map(|b| (b.density - b.expected).abs() / b.stderr)
            .fold(0.0, f64::max);
        json!({
            "bins": self.bins.len(),
            "bins_outside_3_stderr": self.outside(3.0),
            "max_abs_z": worst,
            "density_peaks": self.peaks,
            "escaped_mass": first_click_density(&self.table).escaped_mass,
        })
    }
}

pub fn first_click(
    cfg: &ScenarioConfig,
    hist_t_max: f64,
    workers: usize,
    out: &mut Outputs,
) -> Result<FirstClickResult> {
    let mut run = cfg.run.clone();
    run.max_events = Some(2);
    run.t_max = run.t_max.max(hist_t_max);
    let table = compute_intensities(&run, hist_t_max)?;
    let fc = first_click_density(&table);
    let records = run_ensemble(&run, cfg.n_traj, workers)?;
    let histogram = interarrival_histogram(&records, cfg.bin_width, hist_t_max, true)?;
    let n = records.len() as f64;
    let bins = histogram
        .total
        .iter()
        .enumerate()
        .map(|(b, &count)| {
            let (lo, hi) = (
                b as f64 * histogram.bin_width,
                ((b + 1) as f64 * histogram.bin_width).min(hist_t_max),
            );
            let expected = analysis::bin_average(&fc.t, &fc.density, lo, hi);
            let p = (expected * (hi - lo)).clamp(0.0, 1.0);
            BinCheck {
                t_lo: lo,
                t_hi: hi,
                density: histogram.density(count),
                expected,
                stderr: (p * (1.0 - p) / n).sqrt() / (hi - lo),
            }
        })
        .collect();
    let peaks = analysis::local_maxima(&fc.t, &fc.density);
    write_intensities(out, "", &table, run.lattice.dim());
    write_histogram(out, "first_click_hist.csv", &histogram, run.lattice.dim());
    Ok(FirstClickResult {
        table,
        histogram,
        bins,
        peaks,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRetardation {
    pub gamma: f64,
    pub fit: Option<RetardationFit>,
    pub fit_error: Option<String>,
    /// Escape time of the initial meter alone.
    pub t_esc: Option<f64>,
    pub escaped_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentumChangeReport {
    pub gamma: f64,
    pub n_traj: u64,
    pub clicks: usize,
    pub momentum_changes: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetardationReport {
    pub rates: Vec<RateRetardation>,
    pub momentum_check: Option<MomentumChangeReport>,
}

pub fn retardation(
    cfg: &ScenarioConfig,
    workers: usize,
    out: &mut Outputs,
) -> Result<RetardationReport> {
    let Pipeline::Retardation {
        gammas,
        intensity_t_max,
        t_end,
        fit_window,
        cut_tol,
        m_range,
        momentum_check,
    } = &cfg.pipeline
    else {
        return Err(ConfigError::Invalid("not a retardation pipeline".into()).into());
    };
    let d = cfg.run.lattice.dx_spacing;
    let mut rates = Vec::new();
    let mut curves: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for &gamma in gammas {
        let mut run = cfg.run.clone();
        run.lattice.gamma0 = gamma;
        let table = compute_intensities(&run, *intensity_t_max)?;
        let kernel = renewal_kernel(&table, *cut_tol)?;
        let sol = renewal_convolution(&kernel, run.dt_cap, *t_end, (m_range[0], m_range[1]));
        let mx = sol.mean_position(d);
        let fit = retardation_fit(&sol.t, &mx, (fit_window[0], fit_window[1]), d);
        let mut single = run.clone();
        single.lattice.extents[0].m = [0, 0];
        let single_table = compute_intensities(&single, *intensity_t_max)?;
        rates.push(RateRetardation {
            gamma,
            fit: fit.as_ref().ok().copied(),
            fit_error: fit.err().map(|e| e.to_string()),
            t_esc: escape_time(&single_table).ok(),
            escaped_mass: first_click_density(&table).escaped_mass,
        });
        curves.push((sol.t, mx));
    }
    let labels: Vec<String> = gammas.iter().map(|g| format!("x_gamma_{g}")).collect();
    let mut cols = vec!["t"];
    cols.extend(labels.iter().map(String::as_str));
    let rows = (0..curves[0].0.len()).map(|k| {
        let mut row: Vec<Cell> = vec![curves[0].0[k].into()];
        row.extend(curves.iter().map(|c| Cell::F(c.1[k])));
        row
    });
    out.csv("mean_x.csv", &cols, rows);
    let momentum_check = match momentum_check {
        Some(mc) => {
            let mut run = cfg.run.clone();
            run.lattice.gamma0 = mc.gamma;
            run.lattice.extents[0].n = mc.n_range;
            run.t_max = mc.t_max;
            let records = run_ensemble(&run, mc.n_traj, workers)?;
            let (clicks, changes) = analysis::momentum_changes(&records);
            write_trajectories(out, "momentum_check", &records, &run.lattice);
            Some(MomentumChangeReport {
                gamma: mc.gamma,
                n_traj: mc.n_traj,
                clicks,
                momentum_changes: changes,
                fraction: changes as f64 / clicks.max(1) as f64,
            })
        }
        None => None,
    };
    Ok(RetardationReport {
        rates,
        momentum_check,
    })
}

#[derive(Debug, Clone)]
pub struct ScalingRun {
    pub spacing: f64,
    pub model: Model,
    pub x: BinnedSeries,
    pub k: BinnedSeries,
    pub fit_x: std::result::Result<PowerLawFit, String>,
    pub fit_k: std::result::Result<PowerLawFit, String>,
    /// Per-bin normality of the clicked momenta (jump model only).
    pub normality: Option<BinNormality>,
    pub breaches: usize,
}

impl ScalingRun {
    pub fn summary(&self) -> Value {
        json!({
            "spacing": self.spacing,
            "model": self.model,
            "sigma_x_fit": self.fit_x.as_ref().ok(),
            "sigma_x_fit_error": self.fit_x.as_ref().err(),
            "sigma_k_fit": self.fit_k.as_ref().ok(),
            "sigma_k_fit_error": self.fit_k.as_ref().err(),
            "momentum_normality": self.normality,
            "boundary_breaches": self.breaches,
        })
    }
}

pub fn scaling_config(cfg: &ScenarioConfig, spacing: f64, model: Model) -> Result<RunConfig> {
    let Pipeline::Scaling {
        filtering_dt_cap,
        filtering_grid_points,
        ..
    } = &cfg.pipeline
    else {
        return Err(ConfigError::Invalid("not a scaling pipeline".into()).into());
    };
    let mut run = cfg.run.clone();
    run.lattice = crate::presets::scaling_lattice(spacing, cfg.run.lattice.gamma0);
    run.max_dx = run.lattice.sigma / 4.0;
    if model == Model::Filtering {
        run.dt_cap = *filtering_dt_cap;
        run.grid_points = *filtering_grid_points;
    }
    Ok(run)
}

pub fn scaling_run(
    cfg: &ScenarioConfig,
    spacing: f64,
    model: Model,
    workers: usize,
    out: &mut Outputs,
) -> Result<ScalingRun> {
    let Pipeline::Scaling { fit_window, .. } = &cfg.pipeline else {
        return Err(ConfigError::Invalid("not a scaling pipeline".into()).into());
    };
    let run = scaling_config(cfg, spacing, model)?;
    let records = simulate(&run, model, cfg.n_traj, workers)?;
    let lat = &run.lattice;
    let window = (fit_window[0], fit_window[1]);
    let x = bin_observable(
        &records,
        lat,
        Observable::Position,
        0,
        cfg.bin_width,
        run.t_max,
    )?;
    let k_obs = match model {
        Model::Jump => Observable::Momentum,
        Model::Filtering => Observable::InferredMomentum {
            x0: position_origin(&run, 0),
        },
    };
    let k_samples = bin_samples(&records, lat, k_obs, 0, cfg.bin_width, run.t_max)?;
    let k = qmeter::stats::series_from_samples(&k_samples, cfg.bin_width);
    let normality = match model {
        Model::Jump => Some(normality_by_bin(&k_samples, cfg.bin_width, window)?),
        Model::Filtering => None,
    };
    let stem = format!("scaling_d{spacing}_{}", model.name());
    write_series(out, &format!("{stem}_x.csv"), &x);
    write_series(out, &format!("{stem}_k.csv"), &k);
    Ok(ScalingRun {
        spacing,
        model,
        fit_x: fit_power_law(&x, SeriesColumn::Std, window).map_err(|e| e.to_string()),
        fit_k: fit_power_law(&k, SeriesColumn::Std, window).map_err(|e| e.to_string()),
        x,
        k,
        normality,
        breaches: analysis::breaches(&records),
    })
}

pub fn scaling(cfg: &ScenarioConfig, workers: usize, out: &mut Outputs) -> Result<Vec<ScalingRun>> {
    let Pipeline::Scaling {
        spacings, models, ..
    } = &cfg.pipeline
    else {
        return Err(ConfigError::Invalid("not a scaling pipeline".into()).into());
    };
    let mut runs = Vec::new();
    for &d in spacings {
        for &m in models {
            runs.push(scaling_run(cfg, d, m, workers, out)?);
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeSweepReport {
    pub gammas: Vec<f64>,
    pub t_esc_vs_gamma: Vec<f64>,
    pub gamma_fit: LinearFit,
    pub velocities: Vec<f64>,
    pub t_esc_vs_velocity: Vec<f64>,
    pub velocity_fit: PowerLawFit,
    /// `T_esc ~ v^-kappa`.
    pub kappa: f64,
}

/// Escape time of a single meter carried by the particle at velocity `v`.
pub fn single_meter_escape(run: &RunConfig, gamma: f64, v: f64, t_max: f64) -> Result<f64> {
    let mut run = run.clone();
    run.lattice.gamma0 = gamma;
    run.lattice.dp_spacing = v;
    run.lattice.extents = vec![qmeter::lattice::AxisExtent {
        m: [0, 0],
        n: [1, 1],
    }];
    run.initial_state = qmeter::mcwf::InitialState::Coherent {
        idx: DetectorIndex::new(0, 1),
    };
    Ok(escape_time(&compute_intensities(&run, t_max)?)?)
}

pub fn escape_sweep(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<EscapeSweepReport> {
    let Pipeline::EscapeSweep {
        gammas,
        velocity,
        velocities,
        gamma,
        intensity_t_max,
    } = &cfg.pipeline
    else {
        return Err(ConfigError::Invalid("not an escape-sweep pipeline".into()).into());
    };
    let tg = gammas
        .iter()
        .map(|&g| single_meter_escape(&cfg.run, g, *velocity, *intensity_t_max))
        .collect::<Result<Vec<_>>>()?;
    let tv = velocities
        .iter()
        .map(|&v| single_meter_escape(&cfg.run, *gamma, v, *intensity_t_max))
        .collect::<Result<Vec<_>>>()?;
    out.csv(
        "escape_gamma.csv",
        &["gamma", "t_esc"],
        gammas
            .iter()
            .zip(&tg)
            .map(|(g, t)| vec![(*g).into(), (*t).into()]),
    );
    out.csv(
        "escape_velocity.csv",
        &["v", "t_esc"],
        velocities
            .iter()
            .zip(&tv)
            .map(|(v, t)| vec![(*v).into(), (*t).into()]),
    );
    let gamma_fit = linear_fit(gammas, &tg)?;
    let velocity_fit = fit_power_law_points(velocities, &tv)?;
    Ok(EscapeSweepReport {
        gammas: gammas.clone(),
        t_esc_vs_gamma: tg,
        gamma_fit,
        velocities: velocities.clone(),
        t_esc_vs_velocity: tv,
        kappa: -velocity_fit.exponent,
        velocity_fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoDetectorReport {
    pub gamma: f64,
    pub overlap: f64,
    pub t0: f64,
    pub span: f64,
    pub max_relative_error: f64,
    /// Samples left out of the relative error because the closed form is
    /// below `ZERO_FLOOR * gamma` there (the zero of the second rate).
    pub skipped: usize,
}

pub const ZERO_FLOOR: f64 = 1e-10;

/// Meters `(0, 0)` and `(1, 0)` of the config lattice under a frozen
/// Hamiltonian, integrated in their span, against the closed form.
pub fn two_detector(
    cfg: &ScenarioConfig,
    periods: f64,
    dt: f64,
    out: &mut Outputs,
) -> Result<TwoDetectorReport> {
    let lat = &cfg.run.lattice;
    let gamma = lat.gamma0;
    let (a, b) = (DetectorIndex::new(0, 0), DetectorIndex::new(1, 0));
    let c = coherent_overlap(&a, &b, lat).norm();
    let t0 = 2.0 / (gamma * c);
    let span = periods * t0;
    let table = meter_subspace_intensities(lat, &[a, b], &a, span, dt)?;
    let (la, lb) = (&table.lambda[0], &table.lambda[1]);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let stride = (table.t.len() / 2000).max(1);
    let mut rows = Vec::new();
    for k in 0..table.t.len() {
        let (ea, eb) = two_detector_rates(gamma, c, table.t[k]);
        for (got, want) in [(la[k], ea), (lb[k], eb)] {
            if want < ZERO_FLOOR * gamma {
                skipped += 1;
            } else {
                worst = worst.max(((got - want) / want).abs());
            }
        }
        if k % stride == 0 {
            rows.push(vec![
                table.t[k].into(),
                la[k].into(),
                lb[k].into(),
                ea.into(),
                eb.into(),
            ]);
        }
    }
    out.csv(
        "two_detector.csv",
        &["t", "lambda_a", "lambda_b", "closed_a", "closed_b"],
        rows,
    );
    Ok(TwoDetectorReport {
        gamma,
        overlap: c,
        t0,
        span,
        max_relative_error: worst,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LindbladRow {
    pub n_traj: u64,
    pub trace_distance: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LindbladReport {
    pub grid_points: usize,
    pub detectors: usize,
    pub t: f64,
    pub rows: Vec<LindbladRow>,
}

pub fn lindblad_check(
    cfg: &ScenarioConfig,
    ensembles: &[u64],
    dt: f64,
    workers: usize,
    out: &mut Outputs,
) -> Result<LindbladReport> {
    let mut run = cfg.run.clone();
    run.recenter = false;
    let prepared = Prepared::new(&run)?;
    let grid = prepared.psi0.grid;
    let lat = &run.lattice;
    let oracle = Lindblad::new(grid, lat, run.potential)?;
    let detectors = grid_detectors(&grid, lat)?;
    let meters: Vec<_> = detectors
        .iter()
        .map(|d| meter_vector(&grid, lat, d))
        .collect();
    let segments = 10;
    let mut rho = DensityMatrix::pure(&prepared.psi0)?;
    let mut pop_rows = Vec::new();
    let mut dens_rows = Vec::new();
    for s in 0..=segments {
        let t = run.t_max * s as f64 / segments as f64;
        if s > 0 {
            rho = oracle.integrate(&rho, run.t_max / segments as f64, dt)?;
        }
        for (d, a) in detectors.iter().zip(&meters) {
            pop_rows.push(vec![
                t.into(),
                Cell::S(detector_label(d, 1)),
                rho.expectation(a).into(),
            ]);
        }
        for (j, p) in rho.position_density().iter().enumerate() {
            dens_rows.push(vec![t.into(), grid.coord(0, j).into(), (*p).into()]);
        }
    }
    out.csv(
        "lindblad_populations.csv",
        &["t", "detector_id", "population"],
        pop_rows,
    );
    out.csv("lindblad_density.csv", &["t", "x", "density"], dens_rows);
    let mut rows = Vec::new();
    let mut mc_cols = Vec::new();
    for &n in ensembles {
        let avg = mcwf_density(&run, n, workers)?;
        rows.push(LindbladRow {
            n_traj: n,
            trace_distance: trace_distance(&rho, &avg),
            bound: 5.0 / (n as f64).sqrt(),
        });
        mc_cols.push(avg.position_density());
    }
    let final_density = rho.position_density();
    let labels: Vec<String> = ensembles.iter().map(|n| format!("mcwf_{n}")).collect();
    let mut cols = vec!["x", "lindblad"];
    cols.extend(labels.iter().map(String::as_str));
    out.csv(
        "lindblad_final.csv",
        &cols,
        (0..grid.points).map(|j| {
            let mut row: Vec<Cell> = vec![grid.coord(0, j).into(), final_density[j].into()];
            row.extend(mc_cols.iter().map(|c| Cell::F(c[j])));
            row
        }),
    );
    Ok(LindbladReport {
        grid_points: grid.points,
        detectors: oracle.detector_count(),
        t: run.t_max,
        rows,
    })
}

/// Intensities, first-click density and renewal summary of the initial
/// detector, without trajectories.
pub fn renewal(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<RenewalReport> {
    cfg.validate()?;
    let table = compute_intensities(&cfg.run, cfg.run.t_max)?;
    write_intensities(out, "", &table, cfg.run.lattice.dim());
    let report = renewal_report(&table);
    out.json("report.json", serde_json::to_value(&report).unwrap());
    Ok(report)
}
