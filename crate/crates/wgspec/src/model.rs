//! Continuous-problem vocabulary: geometry, the coefficient `γ`, the
//! transverse modal basis, the dispersion branch, and the two
//! complex-scaling profiles.

use num_complex::Complex64;

use crate::{Error, Result};

/// Default tolerance below which `|β_n|` counts as a threshold (cutoff).
pub const BETA_THRESHOLD_TOL: f64 = 1e-12;

/// Axis-aligned rectangle on which `γ` takes a constant value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBlock {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub value: f64,
}

impl GammaBlock {
    /// Closed rectangle; on shared edges the later-listed block decides.
    fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }
}

/// Full description of the waveguide problem on the strip `ℝ × (0,1)`:
/// scaling angle, scaling onset `L`, computational truncation `X`, and the
/// rectangles where `γ ≠ 1`.
#[derive(Debug, Clone)]
pub struct WaveguideProblem {
    pub theta: f64,
    pub pml_start: f64,
    pub truncation: f64,
    pub gamma_blocks: Vec<GammaBlock>,
}

impl WaveguideProblem {
    /// Validates the geometric invariants:
    /// `0 < θ < π/2`, `0 < L < X`, every block with value ≠ 1 inside
    /// `[−L, L] × [0, 1]`, and every block value positive.
    pub fn new(
        theta: f64,
        pml_start: f64,
        truncation: f64,
        gamma_blocks: Vec<GammaBlock>,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!(
                "theta must lie in (0, pi/2), got {theta}"
            )));
        }
        if !(pml_start > 0.0) {
            return Err(Error::Config(format!(
                "pml_start must be positive, got {pml_start}"
            )));
        }
        if !(truncation > pml_start) {
            return Err(Error::Config(format!(
                "truncation ({truncation}) must exceed pml_start ({pml_start})"
            )));
        }
        for (i, b) in gamma_blocks.iter().enumerate() {
            if !(b.value > 0.0) {
                return Err(Error::Config(format!(
                    "gamma block {i} has non-positive value {}",
                    b.value
                )));
            }
            if !(b.x0 < b.x1 && b.y0 < b.y1) {
                return Err(Error::Config(format!(
                    "gamma block {i} is degenerate: [{}, {}] x [{}, {}]",
                    b.x0, b.x1, b.y0, b.y1
                )));
            }
            if b.value != 1.0
                && !(b.x0 >= -pml_start && b.x1 <= pml_start && b.y0 >= 0.0 && b.y1 <= 1.0)
            {
                return Err(Error::Config(format!(
                    "gamma block {i} must stay inside |x| <= {pml_start}, 0 <= y <= 1"
                )));
            }
        }
        Ok(WaveguideProblem { theta, pml_start, truncation, gamma_blocks })
    }

    /// Value of `γ` at a point. Later blocks override earlier ones, so a
    /// union of overlapping rectangles composes the way it was listed;
    /// outside every block `γ = 1`.
    pub fn gamma_at(&self, x: f64, y: f64) -> f64 {
        self.gamma_blocks
            .iter()
            .rev()
            .find(|b| b.contains(x, y))
            .map_or(1.0, |b| b.value)
    }

    /// True when `γ(−x, y) = γ(x, y)` for the block description as given.
    /// Checked by sampling block corners and midpoints against the mirrored
    /// evaluation, which is exact for rectangle unions.
    pub fn gamma_is_even(&self) -> bool {
        let mut xs = vec![0.0];
        let mut ys = vec![0.5];
        for b in &self.gamma_blocks {
            xs.extend_from_slice(&[b.x0, b.x1, 0.5 * (b.x0 + b.x1)]);
            ys.extend_from_slice(&[b.y0, b.y1, 0.5 * (b.y0 + b.y1)]);
        }
        // Sample just inside each edge as well, to catch half-open boundaries.
        let eps = 1e-9;
        let probe: Vec<f64> = xs
            .iter()
            .flat_map(|&x| [x - eps, x, x + eps])
            .collect();
        let probe_y: Vec<f64> = ys
            .iter()
            .flat_map(|&y| [y - eps, y, y + eps])
            .collect();
        probe.iter().all(|&x| {
            probe_y
                .iter()
                .all(|&y| (self.gamma_at(x, y) - self.gamma_at(-x, y)).abs() == 0.0)
        })
    }

    pub fn classical_profile(&self) -> ScalingProfile {
        ScalingProfile {
            kind: ScalingKind::OutgoingBoth,
            theta: self.theta,
            pml_start: self.pml_start,
        }
    }

    pub fn conjugated_profile(&self) -> ScalingProfile {
        ScalingProfile {
            kind: ScalingKind::IngoingLeftOutgoingRight,
            theta: self.theta,
            pml_start: self.pml_start,
        }
    }
}

/// Which complex scaling is applied in the two leads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    /// Outgoing scaling in both leads: selects resonances.
    OutgoingBoth,
    /// Ingoing scaling in the left lead, outgoing in the right: selects
    /// reflectionless modes.
    IngoingLeftOutgoingRight,
}

/// Piecewise-constant scaling profile. The value returned by
/// [`ScalingProfile::value`] multiplies `∂ₓu ∂ₓv` in the sesquilinear form;
/// its inverse multiplies `∂_yu ∂_yv` and the mass term.
#[derive(Debug, Clone, Copy)]
pub struct ScalingProfile {
    pub kind: ScalingKind,
    pub theta: f64,
    pub pml_start: f64,
}

impl ScalingProfile {
    /// Profile value at abscissa `x`: exactly `1` for `|x| < L`; `e^{−iθ}`
    /// in an outgoing lead and `e^{+iθ}` in an ingoing lead for `|x| ≥ L`.
    pub fn value(&self, x: f64) -> Complex64 {
        if x.abs() < self.pml_start {
            return Complex64::new(1.0, 0.0);
        }
        let sign = match self.kind {
            ScalingKind::OutgoingBoth => -1.0,
            ScalingKind::IngoingLeftOutgoingRight => {
                if x <= -self.pml_start {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        Complex64::from_polar(1.0, sign * self.theta)
    }

    /// Scaled longitudinal coordinate: the identity on the physical region
    /// and slope `1/value` in each lead, so `e^{ik·scaled_coordinate(x)}`
    /// is the scaled image of the plane wave `e^{ikx}`. An outgoing lead
    /// turns the wave leaving through it into an exponentially decaying
    /// one; an ingoing lead does the same for the wave entering through it.
    pub fn scaled_coordinate(&self, x: f64) -> Complex64 {
        if x.abs() < self.pml_start {
            return Complex64::new(x, 0.0);
        }
        let edge = self.pml_start.copysign(x);
        Complex64::new(edge, 0.0) + self.value(x).inv() * (x - edge)
    }
}

/// Square root with branch cut on the positive real axis:
/// `√z = √|z| · e^{i·arg(z)/2}` with `arg(z) ∈ [0, 2π)`, so `Im √z ≥ 0`.
pub fn branch_sqrt(z: Complex64) -> Complex64 {
    let mut a = z.arg();
    if a < 0.0 {
        a += 2.0 * std::f64::consts::PI;
    }
    Complex64::from_polar(z.norm().sqrt(), 0.5 * a)
}

/// Longitudinal wavenumber `β_n = √(k² − n²π²)` on the [`branch_sqrt`]
/// branch. For real `k ∈ (Nπ, (N+1)π)` this is real positive for `n ≤ N`
/// and purely imaginary with positive imaginary part for `n > N`.
pub fn beta_n(k: Complex64, n: usize) -> Complex64 {
    let npi = n as f64 * std::f64::consts::PI;
    branch_sqrt(k * k - Complex64::new(npi * npi, 0.0))
}

/// Distance from real `k` to the nearest mode threshold `nπ`, `n ≥ 0`.
pub fn threshold_distance(k: f64) -> f64 {
    let nearest = (k / std::f64::consts::PI).round().max(0.0) * std::f64::consts::PI;
    (k - nearest).abs()
}

/// Propagation direction of a lead mode (sign of the exponent `±iβ_n x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Transverse eigenfunction `φ_0(y) = 1`, `φ_n(y) = √2 cos(nπy)`;
/// orthonormal in `L²(0, 1)`.
pub fn phi_n(n: usize, y: f64) -> f64 {
    if n == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (n as f64 * std::f64::consts::PI * y).cos()
    }
}

/// Normalized lead mode `w_n^±(x, y) = (2|β_n|)^{−1/2} e^{±iβ_n x} φ_n(y)`.
/// Fails within `tol` of a threshold, where the normalization blows up.
pub fn mode_field_tol(
    n: usize,
    sign: Sign,
    k: Complex64,
    x: f64,
    y: f64,
    tol: f64,
) -> Result<Complex64> {
    let beta = beta_n(k, n);
    let b = beta.norm();
    if b < tol {
        return Err(Error::Invalid(format!(
            "mode {n} at k = {k} sits at a threshold (|beta| = {b:.3e})"
        )));
    }
    let phase = (Complex64::i() * beta * sign.factor() * x).exp();
    Ok(phase * (phi_n(n, y) / (2.0 * b).sqrt()))
}

/// [`mode_field_tol`] with the default threshold tolerance.
pub fn mode_field(n: usize, sign: Sign, k: Complex64, x: f64, y: f64) -> Result<Complex64> {
    mode_field_tol(n, sign, k, x, y, BETA_THRESHOLD_TOL)
}

/// Transverse modal basis truncated at `max_index`.
#[derive(Debug, Clone, Copy)]
pub struct ModalBasis {
    pub max_index: usize,
}

impl ModalBasis {
    pub fn new(max_index: usize) -> Self {
        ModalBasis { max_index }
    }

    pub fn phi(&self, n: usize, y: f64) -> f64 {
        phi_n(n, y)
    }

    pub fn beta(&self, k: Complex64, n: usize) -> Complex64 {
        beta_n(k, n)
    }

    /// Indices of the modes that propagate at real wavenumber `k`, that is,
    /// all `n` with `nπ < k`. For `k ∈ (Nπ, (N+1)π)` these are `0..=N`.
    pub fn propagating(&self, k: f64) -> std::ops::Range<usize> {
        let mut count = 0;
        while count <= self.max_index && (count as f64) * std::f64::consts::PI < k {
            count += 1;
        }
        0..count
    }
}
