//! Phase-space detector lattice: units, Gaussian meter states and their
//! analytic overlaps.
//!
//! A meter sits at every lattice point `(x_m, k_n) = (m * D_x, n * D_p)` and
//! projects onto the minimum-uncertainty packet
//!
//! ```text
//! <x|alpha_mn> = (2 pi sigma^2)^(-1/4) exp(-(x - x_m)^2 / (4 sigma^2)) exp(i k_n x)
//! ```
//!
//! in units with `hbar = m = 1`. Two-dimensional meters are tensor products of
//! the per-axis states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default meter width: the length unit `a0 = sqrt(2) sigma` is then 1.
pub const DEFAULT_SIGMA: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitsConfig {
    pub sigma: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl UnitsConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    /// Position resolution of a meter.
    pub fn sigma_x(&self) -> f64 {
        self.sigma
    }

    /// Momentum resolution of a meter.
    pub fn sigma_p(&self) -> f64 {
        0.5 / self.sigma
    }

    pub fn length_unit(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.sigma
    }

    pub fn time_unit(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Index of one meter. Entry `[1]` is the y axis and stays 0 in 1D.
///
/// The derived ordering (position indices first, then momentum indices) is
/// the row-major order used for the cumulative jump ladder.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct DetectorIndex {
    pub m: [i32; 2],
    pub n: [i32; 2],
}

impl DetectorIndex {
    pub const fn new(m: i32, n: i32) -> Self {
        Self {
            m: [m, 0],
            n: [n, 0],
        }
    }

    pub const fn new_2d(mx: i32, nx: i32, my: i32, ny: i32) -> Self {
        Self {
            m: [mx, my],
            n: [nx, ny],
        }
    }
}

/// Inclusive index ranges of one spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisExtent {
    pub m: [i32; 2],
    pub n: [i32; 2],
}

impl AxisExtent {
    pub fn contains(&self, m: i32, n: i32) -> bool {
        self.m[0] <= m && m <= self.m[1] && self.n[0] <= n && n <= self.n[1]
    }

    pub fn len(&self) -> usize {
        ((self.m[1] - self.m[0] + 1).max(0) * (self.n[1] - self.n[0] + 1).max(0)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorLattice {
    pub dx_spacing: f64,
    pub dp_spacing: f64,
    pub gamma0: f64,
    #[serde(default)]
    pub k_cut: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// One entry per spatial dimension (1 or 2).
    pub extents: Vec<AxisExtent>,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl DetectorLattice {
    /// Square lattice `D_x = D_p = spacing` in one dimension.
    pub fn square_1d(spacing: f64, gamma0: f64, m: [i32; 2], n: [i32; 2]) -> Self {
        Self {
            dx_spacing: spacing,
            dp_spacing: spacing,
            gamma0,
            k_cut: None,
            sigma: DEFAULT_SIGMA,
            extents: vec![AxisExtent { m, n }],
        }
    }

    pub fn square_2d(spacing: f64, gamma0: f64, axis: AxisExtent) -> Self {
        Self {
            dx_spacing: spacing,
            dp_spacing: spacing,
            gamma0,
            k_cut: None,
            sigma: DEFAULT_SIGMA,
            extents: vec![axis, axis],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx_spacing > 0.0 && self.dp_spacing > 0.0) {
            return Err(Error::Config("lattice spacings must be positive".into()));
        }
        // gamma0 = 0 is accepted as the detector-free (unitary) limit
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return Err(Error::Config("gamma0 must be non-negative".into()));
        }
        UnitsConfig::new(self.sigma)?;
        if let Some(k) = self.k_cut {
            if !(k > 0.0) {
                return Err(Error::Config("k_cut must be positive when set".into()));
            }
        }
        if !(self.extents.len() == 1 || self.extents.len() == 2) {
            return Err(Error::Config(
                "extents must describe 1 or 2 spatial axes".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn units(&self) -> UnitsConfig {
        UnitsConfig { sigma: self.sigma }
    }

    pub fn position(&self, m: i32) -> f64 {
        m as f64 * self.dx_spacing
    }

    pub fn momentum(&self, n: i32) -> f64 {
        n as f64 * self.dp_spacing
    }

    pub fn contains(&self, idx: &DetectorIndex) -> bool {
        self.extents
            .iter()
            .enumerate()
            .all(|(a, e)| e.contains(idx.m[a], idx.n[a]))
            && (self.dim() == 2 || (idx.m[1] == 0 && idx.n[1] == 0))
    }

    /// Number of meters in the lattice.
    pub fn len(&self) -> usize {
        self.extents.iter().map(AxisExtent::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All meters in row-major order. Only sensible for small lattices.
    pub fn indices(&self) -> Vec<DetectorIndex> {
        let axis = |e: &AxisExtent| {
            let mut v = Vec::with_capacity(e.len());
            for m in e.m[0]..=e.m[1] {
                for n in e.n[0]..=e.n[1] {
                    v.push((m, n));
                }
            }
            v
        };
        let ax = axis(&self.extents[0]);
        if self.dim() == 1 {
            return ax
                .into_iter()
                .map(|(m, n)| DetectorIndex::new(m, n))
                .collect();
        }
        let ay = axis(&self.extents[1]);
        let mut out = Vec::with_capacity(ax.len() * ay.len());
        for &(mx, nx) in &ax {
            for &(my, ny) in &ay {
                out.push(DetectorIndex::new_2d(mx, nx, my, ny));
            }
        }
        out.sort();
        out
    }

    /// Click rate of one meter, `gamma0 exp(-|k_n|^2 / k_cut^2)`.
    pub fn detector_gamma(&self, idx: &DetectorIndex) -> f64 {
        let k2: f64 = (0..self.dim())
            .map(|a| self.momentum(idx.n[a]).powi(2))
            .sum();
        self.gamma_for_k2(k2)
    }

    pub fn gamma_for_k2(&self, k2: f64) -> f64 {
        match self.k_cut {
            None => self.gamma0,
            Some(kc) => self.gamma0 * (-k2 / (kc * kc)).exp(),
        }
    }
}

/// Normalisation `(2 pi sigma^2)^(-1/4)` of a meter state.
pub fn amplitude_norm(sigma: f64) -> f64 {
    (2.0 * PI * sigma * sigma).powf(-0.25)
}

/// One-axis meter amplitude centred at `(xm, kn)`.
pub fn axis_amplitude(x: f64, xm: f64, kn: f64, sigma: f64) -> Complex64 {
    let u = x - xm;
    let g = amplitude_norm(sigma) * (-u * u / (4.0 * sigma * sigma)).exp();
    Complex64::from_polar(g, kn * x)
}

/// `<x|alpha>` for the meter `idx`. `point` holds `[x]` or `[x, y]`.
pub fn coherent_amplitude(
    point: &[f64],
    idx: &DetectorIndex,
    lattice: &DetectorLattice,
) -> Complex64 {
    let mut out = Complex64::new(1.0, 0.0);
    for (a, &x) in point.iter().enumerate().take(lattice.dim()) {
        out *= axis_amplitude(
            x,
            lattice.position(idx.m[a]),
            lattice.momentum(idx.n[a]),
            lattice.sigma,
        );
    }
    out
}

/// Closed-form overlap of two one-axis meter states `<a|b>`.
///
/// With the plane-wave factor `exp(i k x)` carrying no `-i k x_m` offset the
/// Gaussian integral gives
/// `exp(-dx^2 / (8 sigma^2) - sigma^2 dk^2 / 2) * exp(i (k_b - k_a)(x_a + x_b) / 2)`.
pub fn axis_overlap(xa: f64, ka: f64, xb: f64, kb: f64, sigma: f64) -> Complex64 {
    let dx = xa - xb;
    let dk = kb - ka;
    let s2 = sigma * sigma;
    let mag = (-dx * dx / (8.0 * s2) - s2 * dk * dk / 2.0).exp();
    Complex64::from_polar(mag, dk * 0.5 * (xa + xb))
}

pub fn coherent_overlap(
    a: &DetectorIndex,
    b: &DetectorIndex,
    lattice: &DetectorLattice,
) -> Complex64 {
    (0..lattice.dim())
        .map(|ax| {
            axis_overlap(
                lattice.position(a.m[ax]),
                lattice.momentum(a.n[ax]),
                lattice.position(b.m[ax]),
                lattice.momentum(b.n[ax]),
                lattice.sigma,
            )
        })
        .product()
}

/// Time scales competing in single-meter dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Transit time through the meter, `sigma / v`.
    pub t1: f64,
    /// Dispersion time `2 sigma^2`.
    pub t2: f64,
    /// Mean click interval `1 / gamma`.
    pub tau: f64,
    pub zeno_like: bool,
}

/// Factor by which `tau` must undercut `min(t1, t2)` to count as "much smaller".
pub const ZENO_MARGIN: f64 = 10.0;

pub fn diagnostics(units: &UnitsConfig, velocity: f64, gamma: f64) -> Result<DiagnosticsReport> {
    if velocity == 0.0 || gamma <= 0.0 {
        return Err(Error::Config(
            "diagnostics need v != 0 and gamma > 0".into(),
        ));
    }
    let t1 = units.sigma / velocity.abs();
    let t2 = 2.0 * units.sigma * units.sigma;
    let tau = 1.0 / gamma;
    Ok(DiagnosticsReport {
        t1,
        t2,
        tau,
        zeno_like: ZENO_MARGIN * tau < t1.min(t2),
    })
}
