//! Small analyses of click records used by the scenario reports.

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use qmeter::error::{Error, Result};
use qmeter::grid::WaveFunction;
use qmeter::lattice::DetectorLattice;
use qmeter::mcwf::{TerminationReason, TrajectoryRecord};
use qmeter::stats::{linear_fit, BinnedSeries, LinearFit};

use crate::presets::{click_angle, wrap_angle};

pub fn breaches(records: &[TrajectoryRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.reason == TerminationReason::BoundaryBreach)
        .count()
}

/// Straight-line fit of click position against click time, pooled over all
/// records (first axis).
pub fn click_slope(records: &[TrajectoryRecord], lat: &DetectorLattice) -> Result<LinearFit> {
    let (t, x): (Vec<f64>, Vec<f64>) = records
        .iter()
        .flat_map(|r| r.events.iter().map(|e| (e.t, lat.position(e.idx.m[0]))))
        .unzip();
    linear_fit(&t, &x)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralPeak {
    pub omega: f64,
    /// Angular-frequency spacing of the transform.
    pub resolution: f64,
}

/// Dominant nonzero angular frequency of the bin means. Empty bins are
/// filled with the series mean.
pub fn spectral_peak(series: &BinnedSeries) -> Result<SpectralPeak> {
    let means: Vec<Option<f64>> = series.rows.iter().map(|r| r.mean).collect();
    let known: Vec<f64> = means.iter().flatten().copied().collect();
    if known.len() < 4 {
        return Err(Error::BadFit("too few bins for a spectrum".into()));
    }
    let avg = known.iter().sum::<f64>() / known.len() as f64;
    let mut buf: Vec<Complex64> = means
        .iter()
        .map(|m| Complex64::new(m.unwrap_or(avg) - avg, 0.0))
        .collect();
    let n = buf.len();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let span = n as f64 * series.bin_width;
    let k = (1..=n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .expect("n >= 4");
    let resolution = 2.0 * std::f64::consts::PI / span;
    Ok(SpectralPeak {
        omega: k as f64 * resolution,
        resolution,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Circulation {
    pub n_traj: usize,
    /// Mean over trajectories of the summed angle increments between
    /// successive clicks.
    pub mean_advance: f64,
    pub stderr: f64,
    pub t_statistic: f64,
    /// One-sided p-value for a positive mean.
    pub p_value: f64,
}

/// Angular advance of 2D click sequences. Clicks at the origin carry no
/// angle and are skipped; records with fewer than two usable clicks are
/// left out.
pub fn circulation(records: &[TrajectoryRecord], lat: &DetectorLattice) -> Result<Circulation> {
    let advances: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let angles: Vec<f64> = r
                .events
                .iter()
                .filter(|e| e.idx.m != [0, 0])
                .map(|e| click_angle(lat, &e.idx))
                .collect();
            (angles.len() >= 2).then(|| angles.windows(2).map(|w| wrap_angle(w[1] - w[0])).sum())
        })
        .collect();
    let n = advances.len();
    if n < 3 {
        return Err(Error::BadFit(format!(
            "{n} trajectories with two or more off-origin clicks"
        )));
    }
    let mean = advances.iter().sum::<f64>() / n as f64;
    let var = advances.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    let t = mean / stderr;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n > 2");
    Ok(Circulation {
        n_traj: n,
        mean_advance: mean,
        stderr,
        t_statistic: t,
        p_value: dist.sf(t),
    })
}

/// Clicks whose momentum label differs from the previous click (the first
/// click is compared with the initial label `n = 1`).
pub fn momentum_changes(records: &[TrajectoryRecord]) -> (usize, usize) {
    let mut clicks = 0;
    let mut changes = 0;
    for r in records {
        let mut n = 1;
        for e in &r.events {
            clicks += 1;
            if e.idx.n[0] != n {
                changes += 1;
                n = e.idx.n[0];
            }
        }
    }
    (clicks, changes)
}

fn density_at(psi: &WaveFunction, dens: &[f64], x: f64, y: f64) -> f64 {
    let g = &psi.grid;
    let idx = |v: f64, a: usize| {
        ((v - g.origin(a)) / g.dx)
            .round()
            .clamp(0.0, (g.points - 1) as f64) as usize
    };
    dens[idx(y, 1) * g.points + idx(x, 0)]
}

/// Mean density at the four lattice sites adjacent to `c` and at the four
/// diagonal cell midpoints around `c`.
pub fn neighbour_contrast(psi: &WaveFunction, c: [f64; 2], d: f64) -> (f64, f64) {
    let dens = psi.density();
    let at = |dx: f64, dy: f64| density_at(psi, &dens, c[0] + dx, c[1] + dy);
    let h = d / 2.0;
    let site = (at(d, 0.0) + at(-d, 0.0) + at(0.0, d) + at(0.0, -d)) / 4.0;
    let mid = (at(h, h) + at(-h, h) + at(h, -h) + at(-h, -h)) / 4.0;
    (site, mid)
}

/// Trapezoid average of a sampled curve over `[lo, hi]`, with linear
/// interpolation at the ends.
pub fn bin_average(t: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    let interp = |s: f64| {
        let k = t.partition_point(|&v| v <= s).clamp(1, t.len() - 1);
        let w = (s - t[k - 1]) / (t[k] - t[k - 1]);
        y[k - 1] + w * (y[k] - y[k - 1])
    };
    let mut pts = vec![(lo, interp(lo))];
    pts.extend(
        t.iter()
            .zip(y)
            .filter(|(s, _)| **s > lo && **s < hi)
            .map(|(s, v)| (*s, *v)),
    );
    pts.push((hi, interp(hi)));
    let area: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1))
        .sum();
    area / (hi - lo)
}

/// Times of strict interior local maxima.
pub fn local_maxima(t: &[f64], y: &[f64]) -> Vec<f64> {
    (1..y.len().saturating_sub(1))
        .filter(|&k| y[k] > y[k - 1] && y[k] >= y[k + 1])
        .map(|k| t[k])
        .collect()
}
