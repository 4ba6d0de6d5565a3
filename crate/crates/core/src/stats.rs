//! Ensemble reductions of trajectory records and the goodness-of-fit tests
//! used to compare them with predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::filtering::infer_velocity;
use crate::lattice::{DetectorIndex, DetectorLattice};
use crate::mcwf::{ClickEvent, TrajectoryRecord};

pub const DEFAULT_BIN_WIDTH: f64 = 0.02;
/// Asymptotic two-sided Kolmogorov-Smirnov critical value at the 1% level,
/// divided by `sqrt(n)` at use.
pub const KS_CRIT_1PCT: f64 = 1.6276;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// Clicked meter position `x_m`.
    Position,
    /// Clicked meter momentum `k_n`.
    Momentum,
    /// Finite-difference velocity between successive clicks, the first one
    /// taken from `(0, x0)`. The only momentum available for position-only
    /// records.
    InferredMomentum { x0: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean: Option<f64>,
    /// Sample standard deviation across the ensemble; 0 for a single value.
    pub std: Option<f64>,
    pub stderr: Option<f64>,
}

impl BinRow {
    pub fn t_center(&self) -> f64 {
        0.5 * (self.t_lo + self.t_hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub bin_width: f64,
    pub rows: Vec<BinRow>,
}

impl BinnedSeries {
    pub fn empty_bins(&self) -> usize {
        self.rows.iter().filter(|r| r.count == 0).count()
    }
}

/// Per-bin samples of `observable` along `axis` over `[0, t_max]`.
pub fn bin_samples(
    records: &[TrajectoryRecord],
    lattice: &DetectorLattice,
    observable: Observable,
    axis: usize,
    bin_width: f64,
    t_max: f64,
) -> Result<Vec<Vec<f64>>> {
    if records.is_empty() {
        return Err(Error::Config("no records to bin".into()));
    }
    if !(bin_width > 0.0) || !(t_max > 0.0) {
        return Err(Error::Config("bin width and t_max must be positive".into()));
    }
    let nbins = (t_max / bin_width - 1e-9).ceil().max(1.0) as usize;
    let mut bins = vec![Vec::new(); nbins];
    let slot = |t: f64| ((t / bin_width) as usize).min(nbins - 1);
    for rec in records {
        match observable {
            Observable::Position => {
                for e in rec.events.iter().filter(|e| e.t <= t_max) {
                    bins[slot(e.t)].push(lattice.position(e.idx.m[axis]));
                }
            }
            Observable::Momentum => {
                if rec.position_only {
                    return Err(Error::Config(
                        "position-only records carry no momentum".into(),
                    ));
                }
                for e in rec.events.iter().filter(|e| e.t <= t_max) {
                    bins[slot(e.t)].push(lattice.momentum(e.idx.n[axis]));
                }
            }
            Observable::InferredMomentum { x0 } => {
                let pts: Vec<(f64, f64)> = rec
                    .events
                    .iter()
                    .filter(|e| e.t > 0.0 && e.t <= t_max)
                    .map(|e| (e.t, lattice.position(e.idx.m[axis])))
                    .collect();
                for (p, v) in pts.iter().zip(infer_velocity(&pts, 0.0, x0)?) {
                    bins[slot(p.0)].push(v);
                }
            }
        }
    }
    Ok(bins)
}

pub fn bin_observable(
    records: &[TrajectoryRecord],
    lattice: &DetectorLattice,
    observable: Observable,
    axis: usize,
    bin_width: f64,
    t_max: f64,
) -> Result<BinnedSeries> {
    let bins = bin_samples(records, lattice, observable, axis, bin_width, t_max)?;
    Ok(series_from_samples(&bins, bin_width))
}

pub fn series_from_samples(bins: &[Vec<f64>], bin_width: f64) -> BinnedSeries {
    let rows = bins
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (t_lo, t_hi) = (i as f64 * bin_width, (i + 1) as f64 * bin_width);
            let count = s.len();
            if count == 0 {
                return BinRow {
                    t_lo,
                    t_hi,
                    count,
                    mean: None,
                    std: None,
                    stderr: None,
                };
            }
            let n = count as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = if count > 1 {
                s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let std = var.sqrt();
            BinRow {
                t_lo,
                t_hi,
                count,
                mean: Some(mean),
                std: Some(std),
                stderr: Some(std / n.sqrt()),
            }
        })
        .collect();
    BinnedSeries { bin_width, rows }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::BadFit("need at least three points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::BadFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesColumn {
    Mean,
    Std,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// `y = amplitude t^exponent` by least squares in log-log, over bins whose
/// centre lies in `window`. Empty bins are skipped; non-positive values in
/// the window are an error.
pub fn fit_power_law(
    series: &BinnedSeries,
    column: SeriesColumn,
    window: (f64, f64),
) -> Result<PowerLawFit> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for row in &series.rows {
        let t = row.t_center();
        if t < window.0 || t > window.1 {
            continue;
        }
        let v = match column {
            SeriesColumn::Mean => row.mean,
            SeriesColumn::Std => row.std,
        };
        let Some(v) = v else { continue };
        if !(v > 0.0) || !(t > 0.0) {
            return Err(Error::BadFit(format!("non-positive value {v} at t = {t}")));
        }
        lx.push(t.ln());
        ly.push(v.ln());
    }
    power_law_from_logs(&lx, &ly)
}

/// Power law through raw `(x, y)` pairs, all positive.
pub fn fit_power_law_points(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::BadFit("power-law fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    power_law_from_logs(&lx, &ly)
}

fn power_law_from_logs(lx: &[f64], ly: &[f64]) -> Result<PowerLawFit> {
    let fit = linear_fit(lx, ly)?;
    if fit.r_squared < 0.9 {
        return Err(Error::BadFit(format!(
            "r^2 = {:.3} below 0.9",
            fit.r_squared
        )));
    }
    Ok(PowerLawFit {
        exponent: fit.slope,
        amplitude: fit.intercept.exp(),
        r_squared: fit.r_squared,
        points: lx.len(),
    })
}

/// First click after the initial one. An event at exactly `t = 0` is the
/// preparation click and is skipped.
pub fn first_click(record: &TrajectoryRecord) -> Option<&ClickEvent> {
    record.events.iter().find(|e| e.t > 0.0)
}

/// Waiting times between successive events of every record.
pub fn interarrival_times(records: &[TrajectoryRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| r.events.windows(2).map(|w| w[1].t - w[0].t))
        .collect()
}

/// Histogram of click times. Densities are per trajectory: for first clicks
/// the area is the probability of a click before `t_max`, for all clicks it
/// is the mean number of clicks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickHistogram {
    pub bin_width: f64,
    pub n_records: usize,
    pub total: Vec<u64>,
    pub per_detector: BTreeMap<DetectorIndex, Vec<u64>>,
}

impl ClickHistogram {
    pub fn density(&self, count: u64) -> f64 {
        count as f64 / (self.n_records as f64 * self.bin_width)
    }

    /// Standard error of the density in a bin with `count` hits, binomial.
    pub fn density_stderr(&self, count: u64) -> f64 {
        let n = self.n_records as f64;
        let p = count as f64 / n;
        (p * (1.0 - p) / n).sqrt() / self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.total.len())
            .map(|i| (i as f64 + 0.5) * self.bin_width)
            .collect()
    }
}

/// Histogram of the first click after the preparation click.
pub fn interarrival_histogram(
    records: &[TrajectoryRecord],
    bin_width: f64,
    t_max: f64,
    per_detector: bool,
) -> Result<ClickHistogram> {
    histogram(
        records,
        records.iter().filter_map(first_click),
        bin_width,
        t_max,
        per_detector,
    )
}

/// Histogram of every click with `t > 0`, split by detector.
pub fn click_time_histogram(
    records: &[TrajectoryRecord],
    bin_width: f64,
    t_max: f64,
) -> Result<ClickHistogram> {
    histogram(
        records,
        records
            .iter()
            .flat_map(|r| r.events.iter().filter(|e| e.t > 0.0)),
        bin_width,
        t_max,
        true,
    )
}

fn histogram<'a>(
    records: &[TrajectoryRecord],
    events: impl Iterator<Item = &'a ClickEvent>,
    bin_width: f64,
    t_max: f64,
    per_detector: bool,
) -> Result<ClickHistogram> {
    if records.is_empty() || !(bin_width > 0.0) || !(t_max > 0.0) {
        return Err(Error::Config(
            "histogram needs records and positive bin width and t_max".into(),
        ));
    }
    let nbins = (t_max / bin_width - 1e-9).ceil().max(1.0) as usize;
    let mut total = vec![0u64; nbins];
    let mut split: BTreeMap<DetectorIndex, Vec<u64>> = BTreeMap::new();
    for e in events.filter(|e| e.t <= t_max) {
        let b = ((e.t / bin_width) as usize).min(nbins - 1);
        total[b] += 1;
        if per_detector {
            split.entry(e.idx).or_insert_with(|| vec![0; nbins])[b] += 1;
        }
    }
    Ok(ClickHistogram {
        bin_width,
        n_records: records.len(),
        total,
        per_detector: split,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Rejection threshold on the statistic at the 1% level, where one is
    /// tabulated.
    pub critical: Option<f64>,
    pub pass: bool,
}

/// One-sample Kolmogorov-Smirnov test against `cdf` at the 1% level.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestOutcome> {
    if samples.is_empty() {
        return Err(Error::Config("KS test needs samples".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let crit = KS_CRIT_1PCT / n.sqrt();
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(TestOutcome {
        statistic: d,
        p_value: kolmogorov_q(lambda),
        critical: Some(crit),
        pass: d < crit,
    })
}

/// `Q_KS(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square of `observed` counts against `expected` counts, with
/// neighbouring bins merged until every expected count is at least 5.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<TestOutcome> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::Config("observed and expected bins differ".into()));
    }
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        acc.0 += *o as f64;
        acc.1 += e;
        if acc.1 >= 5.0 {
            groups.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => groups.push(acc),
        }
    }
    if groups.len() < 2 {
        return Err(Error::Config("too few bins after merging".into()));
    }
    let stat: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (groups.len() - 1) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::Config(e.to_string()))?;
    let p = 1.0 - dist.cdf(stat);
    Ok(TestOutcome {
        statistic: stat,
        p_value: p,
        critical: Some(dist.inverse_cdf(0.99)),
        pass: p > 0.01,
    })
}

/// D'Agostino-Pearson K^2 omnibus normality test at the 1% level. Needs at
/// least 20 samples.
pub fn dagostino_k2(samples: &[f64]) -> Result<TestOutcome> {
    let n = samples.len();
    if n < 20 {
        return Err(Error::Config(format!(
            "normality test needs 20 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m = |p: i32| samples.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / nf;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    if m2 == 0.0 {
        return Err(Error::Config("normality test on constant data".into()));
    }
    let zs = skew_z(m3 / m2.powf(1.5), nf);
    let zk = kurtosis_z(m4 / (m2 * m2), nf);
    let k2 = zs * zs + zk * zk;
    let p = (-0.5 * k2).exp();
    Ok(TestOutcome {
        statistic: k2,
        p_value: p,
        critical: Some(-2.0 * 0.01f64.ln()),
        pass: p > 0.01,
    })
}

/// Per-bin normality over the bins whose centres fall in `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinNormality {
    pub tested: usize,
    pub failed: usize,
    /// Largest failure count still consistent with the 1% false-positive
    /// rate (99th percentile of Binomial(tested, 0.01)).
    pub allowed: usize,
    pub pass: bool,
}

pub fn normality_by_bin(
    bins: &[Vec<f64>],
    bin_width: f64,
    window: (f64, f64),
) -> Result<BinNormality> {
    let mut tested = 0;
    let mut failed = 0;
    for (i, b) in bins.iter().enumerate() {
        let tc = (i as f64 + 0.5) * bin_width;
        if tc < window.0 || tc > window.1 || b.len() < 20 {
            continue;
        }
        tested += 1;
        if !dagostino_k2(b)?.pass {
            failed += 1;
        }
    }
    if tested == 0 {
        return Err(Error::Config(
            "no bins with enough samples for a normality test".into(),
        ));
    }
    let dist = Binomial::new(0.01, tested as u64).map_err(|e| Error::Config(e.to_string()))?;
    let allowed = (0..=tested as u64)
        .find(|&k| dist.cdf(k) >= 0.99)
        .unwrap_or(tested as u64) as usize;
    Ok(BinNormality {
        tested,
        failed,
        allowed,
        pass: failed <= allowed,
    })
}

fn skew_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    delta * (y / alpha + ((y / alpha).powi(2) + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sb1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sb1 * (2.0 / sb1 + (1.0 + 4.0 / (sb1 * sb1)).sqrt());
    let t1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let t2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (t1 - t2) / (2.0 / (9.0 * a)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcwf::TerminationReason;
    use proptest::prelude::*;

    fn record(events: &[(f64, i32, i32)], position_only: bool) -> TrajectoryRecord {
        TrajectoryRecord {
            index: 0,
            seed: 0,
            events: events
                .iter()
                .map(|&(t, m, n)| ClickEvent {
                    t,
                    idx: DetectorIndex::new(m, n),
                })
                .collect(),
            reason: TerminationReason::ReachedTMax,
            t_end: 1.0,
            position_only,
        }
    }

    fn lattice() -> DetectorLattice {
        DetectorLattice::square_1d(1.0, 1.0, [-50, 50], [-50, 50])
    }

    #[test]
    fn single_trajectory_on_a_line_has_zero_spread() {
        let ev: Vec<(f64, i32, i32)> = (0..20).map(|i| (0.05 * i as f64 + 0.01, i, 3)).collect();
        let s = bin_observable(
            &[record(&ev, false)],
            &lattice(),
            Observable::Position,
            0,
            0.02,
            1.0,
        )
        .unwrap();
        assert_eq!(s.rows.len(), 50);
        for r in s.rows.iter().filter(|r| r.count > 0) {
            assert_eq!(r.std, Some(0.0));
        }
        assert!(s.empty_bins() > 0);
        let empty = s.rows.iter().find(|r| r.count == 0).unwrap();
        assert!(empty.mean.is_none() && empty.std.is_none());
    }

    #[test]
    fn momentum_of_position_only_records_is_refused() {
        let r = record(&[(0.1, 1, 0)], true);
        assert!(
            bin_observable(std::slice::from_ref(&r), &lattice(), Observable::Momentum, 0, 0.02, 1.0).is_err()
        );
        let s = bin_observable(
            &[r],
            &lattice(),
            Observable::InferredMomentum { x0: 0.0 },
            0,
            0.02,
            1.0,
        )
        .unwrap();
        assert!((s.rows[5].mean.unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn sample_statistics() {
        let s = series_from_samples(&[vec![1.0, 2.0, 3.0, 4.0]], 0.5);
        let r = &s.rows[0];
        assert_eq!(r.mean, Some(2.5));
        assert!((r.std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r.stderr.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_power_law() {
        let bins: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![((i as f64 + 0.5) * 0.02).powf(1.5)])
            .collect();
        let s = series_from_samples(&bins, 0.02);
        let f = fit_power_law(&s, SeriesColumn::Mean, (0.1, 2.0)).unwrap();
        assert!((f.exponent - 1.5).abs() < 1e-6);
        assert!((f.amplitude - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_fit_is_rejected() {
        let bins: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { 5.0 }])
            .collect();
        let s = series_from_samples(&bins, 0.02);
        assert!(matches!(
            fit_power_law(&s, SeriesColumn::Mean, (0.0, 1.0)),
            Err(Error::BadFit(_))
        ));
    }

    #[test]
    fn histogram_split_sums_to_total() {
        let recs: Vec<TrajectoryRecord> = (0..200)
            .map(|i| {
                record(
                    &[
                        (0.0, 0, 1),
                        (0.013 * (i % 70) as f64 + 0.001, i % 3, 1),
                        (0.95, 4, 1),
                    ],
                    false,
                )
            })
            .collect();
        let h = interarrival_histogram(&recs, 0.02, 1.0, true).unwrap();
        assert_eq!(h.per_detector.len(), 3);
        for b in 0..h.total.len() {
            let sum: u64 = h.per_detector.values().map(|v| v[b]).sum();
            assert_eq!(sum, h.total[b]);
        }
        assert_eq!(h.total.iter().sum::<u64>(), 200);
        let area: f64 = h.total.iter().map(|c| h.density(*c) * h.bin_width).sum();
        assert!((area - 1.0).abs() < 1e-12);
        let all = click_time_histogram(&recs, 0.02, 1.0).unwrap();
        assert_eq!(all.total.iter().sum::<u64>(), 400);
        assert_eq!(
            all.per_detector[&DetectorIndex::new(4, 1)]
                .iter()
                .sum::<u64>(),
            200
        );
    }

    #[test]
    fn interarrival_times_are_successive_gaps() {
        let r = record(&[(0.0, 0, 0), (0.3, 0, 0), (0.5, 0, 0)], false);
        let g = interarrival_times(&[r]);
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_matches_reference() {
        let s: Vec<f64> = (1..=200)
            .map(|i| -(1.0 - (i as f64 * 0.7548776662) % 1.0).ln() / 5.0)
            .collect();
        let out = ks_test(&s, |t| 1.0 - (-5.0 * t).exp()).unwrap();
        assert!((out.statistic - 0.007399618599994828).abs() < 1e-12);
        assert!(out.pass);
        let wrong = ks_test(&s, |t| 1.0 - (-2.0 * t).exp()).unwrap();
        assert!(!wrong.pass && wrong.p_value < 0.01);
    }

    #[test]
    fn chi_square_tail_matches_reference() {
        // statistic 7.3 on four degrees of freedom
        let obs = [10u64, 10, 10, 10, 10];
        let root = (7.3f64 / 5.0 * 10.0).sqrt();
        let e = 10.0 + root;
        let exp = [e, e, e, e, e];
        let out = chi_square_test(&obs, &exp).unwrap();
        let expect: f64 = (0..5).map(|_| root * root / e).sum();
        assert!((out.statistic - expect).abs() < 1e-12);
        let dist = ChiSquared::new(4.0).unwrap();
        assert!((out.p_value - (1.0 - dist.cdf(expect))).abs() < 1e-12);
        let at = chi_square_test(&[0, 10], &[3.0, 3.0]).unwrap_err();
        assert!(matches!(at, Error::Config(_)));
        let reference = chi_square_test(&[5, 5, 5, 5, 5], &[5.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        assert!(reference.pass && reference.statistic == 0.0);
        let p = 1.0 - dist.cdf(7.3);
        assert!((p - 0.12085874882121235).abs() < 1e-9);
    }

    #[test]
    fn chi_square_merges_small_bins() {
        let out = chi_square_test(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 1], &[1.0; 10]).unwrap();
        assert_eq!(out.statistic, 0.0);
    }

    #[test]
    fn dagostino_matches_reference() {
        let x: Vec<f64> = (1..=40)
            .map(|i| {
                let f = (i as f64 * 0.618034) % 1.0;
                f * f * 3.0 - 0.7 + 0.1 * (i as f64).sin()
            })
            .collect();
        let out = dagostino_k2(&x).unwrap();
        assert!(
            (out.statistic - 4.501806230668088).abs() < 1e-9,
            "{}",
            out.statistic
        );
        assert!((out.p_value - 0.10530407987574547).abs() < 1e-9);
        let y: Vec<f64> = (1..=30)
            .map(|i| (i as f64 * 1.3).sin() + 0.5 * (i as f64 * 0.7).cos())
            .collect();
        assert!((dagostino_k2(&y).unwrap().statistic - 3.000524476994113).abs() < 1e-9);
        assert!(dagostino_k2(&y[..10]).is_err());
    }

    #[test]
    fn bin_normality_counts_failures_in_the_window() {
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let gauss: Vec<f64> = (0..500)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / 500.0))
            .collect();
        let flat: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let mut bins = vec![gauss.clone(); 100];
        bins[0] = flat.clone();
        bins[1] = vec![1.0; 5];
        let all = normality_by_bin(&bins, 0.1, (0.0, 10.0)).unwrap();
        assert_eq!((all.tested, all.failed, all.allowed), (99, 1, 4));
        assert!(all.pass);
        let late = normality_by_bin(&bins, 0.1, (0.5, 10.0)).unwrap();
        assert_eq!((late.tested, late.failed), (95, 0));
        for b in bins.iter_mut().take(20) {
            *b = flat.clone();
        }
        assert!(!normality_by_bin(&bins, 0.1, (0.0, 10.0)).unwrap().pass);
        assert!(normality_by_bin(&bins, 0.1, (20.0, 30.0)).is_err());
    }

    proptest! {
        #[test]
        fn variances_are_non_negative(v in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let s = series_from_samples(&[v], 0.02);
            prop_assert!(s.rows[0].std.unwrap() >= 0.0);
        }

        #[test]
        fn bins_cover_the_horizon(t_max in 0.05f64..5.0, w in 0.01f64..0.2) {
            let s = bin_observable(&[record(&[(t_max, 0, 0)], false)], &lattice(), Observable::Position, 0, w, t_max).unwrap();
            prop_assert!(s.rows.last().unwrap().t_hi >= t_max - 1e-9);
            prop_assert!(s.rows[0].t_lo == 0.0);
            prop_assert_eq!(s.rows.iter().map(|r| r.count).sum::<usize>(), 1);
        }
    }
}
