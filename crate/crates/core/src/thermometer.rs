//! Qubit thermometer: a two-level probe relaxing towards a thermal state and
//! read out by a weak `σ_z` measurement between relaxation periods.
//!
//! Units have `ħ = k_B = 1`. Basis order is `(|↑⟩, |↓⟩)`, `σ_z = diag(1, -1)`,
//! and the unknown parameter is the total relaxation rate `γβ`.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{fisher, FisherOptions};
use crate::error::{Error, Result};
use crate::instrument::{build_instrument, Instrument, Measurement, Outcome};
use crate::linop::{c, CMatrix, DensityMatrix, Operator, Superoperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermometerParams {
    /// Spontaneous decay rate `γ`.
    pub gamma: f64,
    /// Total rate `γβ = γ coth(Ω / 2T)`.
    pub gamma_beta: f64,
    /// Level splitting `Ω`.
    pub omega: f64,
    /// Waiting time between measurements.
    pub tau: f64,
    /// Measurement strength angle in `[0, π/4]`.
    pub eta: f64,
    /// Polar angle of the initial Bloch vector.
    #[serde(default = "ground_theta")]
    pub theta: f64,
    /// Azimuth of the initial Bloch vector.
    #[serde(default)]
    pub phi: f64,
}

fn ground_theta() -> f64 {
    std::f64::consts::PI
}

impl ThermometerParams {
    /// Initial state `|↓⟩` (`θ = π`).
    pub fn new(gamma: f64, gamma_beta: f64, omega: f64, tau: f64, eta: f64) -> Result<Self> {
        let p = ThermometerParams {
            gamma,
            gamma_beta,
            omega,
            tau,
            eta,
            theta: ground_theta(),
            phi: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// `γβ = γ coth(Ω / 2T)`.
    pub fn from_temperature(gamma: f64, omega: f64, temperature: f64, tau: f64, eta: f64) -> Result<Self> {
        if !(temperature > 0.0) || !(omega > 0.0) {
            return Err(Error::InvalidParameters("temperature and Ω must be positive".into()));
        }
        let gb = gamma / (omega / (2.0 * temperature)).tanh();
        ThermometerParams::new(gamma, gb, omega, tau, eta)
    }

    pub fn with_initial_angles(mut self, theta: f64, phi: f64) -> Result<Self> {
        self.theta = theta;
        self.phi = phi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_gamma_beta(mut self, gamma_beta: f64) -> Self {
        self.gamma_beta = gamma_beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fin = [self.gamma, self.gamma_beta, self.omega, self.tau, self.eta, self.theta, self.phi]
            .iter()
            .all(|x| x.is_finite());
        if !fin {
            return Err(Error::InvalidParameters("non-finite parameter".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameters("γ must be positive".into()));
        }
        if self.gamma_beta < self.gamma {
            return Err(Error::InvalidParameters("γβ must be at least γ".into()));
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidParameters("τ must be nonnegative".into()));
        }
        check_eta(self.eta)
    }

    /// `γ / γβ`, minus the equilibrium `⟨σ_z⟩`.
    pub fn ratio(&self) -> f64 {
        self.gamma / self.gamma_beta
    }

    /// `e^{-γβ τ}`.
    pub fn decay(&self) -> f64 {
        (-self.gamma_beta * self.tau).exp()
    }

    /// Mean thermal occupation `n_th`, from `γβ / γ = 1 + 2 n_th`.
    pub fn n_th(&self) -> f64 {
        (self.gamma_beta / self.gamma - 1.0) / 2.0
    }

    /// `(γ₊, γ₋) = ((1 + n_th) γ, n_th γ)`: decay and excitation rates.
    pub fn rates(&self) -> (f64, f64) {
        let n = self.n_th();
        ((1.0 + n) * self.gamma, n * self.gamma)
    }

    /// Temperature `T` with `coth(Ω / 2T) = γβ / γ`; 0 when `γβ = γ`.
    pub fn temperature(&self) -> f64 {
        let ratio = self.gamma_beta / self.gamma;
        if ratio <= 1.0 {
            return 0.0;
        }
        self.omega / (2.0 * (1.0 / ratio).atanh())
    }

    /// Initial Bloch vector `(sinθ cosφ, sinθ sinφ, cosθ)`.
    pub fn initial_bloch(&self) -> [f64; 3] {
        [
            self.theta.sin() * self.phi.cos(),
            self.theta.sin() * self.phi.sin(),
            self.theta.cos(),
        ]
    }

    pub fn initial_state(&self) -> Result<DensityMatrix> {
        let b = self.initial_bloch();
        DensityMatrix::with_tolerance(bloch_operator(b[0], b[1], b[2], 1.0)?, 1e-9)
    }

    /// Bloch vector after one relaxation period from the initial state.
    pub fn relaxed_bloch(&self) -> [f64; 3] {
        bloch_step(self, self.initial_bloch(), 1.0)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_4 + 1e-15).contains(&eta) {
        return Err(Error::InvalidParameters(format!("η = {eta} outside [0, π/4]")));
    }
    Ok(())
}

fn bloch_operator(x: f64, y: f64, z: f64, t: f64) -> Result<Operator> {
    Operator::new(CMatrix::from_row_slice(
        2,
        2,
        &[
            c((t + z) / 2.0),
            Complex64::new(x / 2.0, -y / 2.0),
            Complex64::new(x / 2.0, y / 2.0),
            c((t - z) / 2.0),
        ],
    ))
}

/// The relaxation map on `(x, y, z)` for an operator of trace `t`.
fn bloch_step(p: &ThermometerParams, b: [f64; 3], t: f64) -> [f64; 3] {
    let a = (-p.gamma_beta * p.tau / 2.0).exp();
    let (s, co) = (p.omega * p.tau).sin_cos();
    let r = p.ratio();
    [
        a * (b[0] * co - b[1] * s),
        a * (b[0] * s + b[1] * co),
        (b[2] + r * t) * p.decay() - r * t,
    ]
}

/// The relaxation channel `Λ_τ` as a superoperator.
pub fn thermal_channel(p: &ThermometerParams) -> Result<Superoperator> {
    p.validate()?;
    let mut m = CMatrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            // |i><j| in Bloch coordinates, extended linearly to complex components
            let basis = Operator::ket_bra(2, i, j);
            let bm = basis.matrix();
            let t = bm.trace();
            let x = bm[(0, 1)] + bm[(1, 0)];
            let y = Complex64::i() * (bm[(0, 1)] - bm[(1, 0)]);
            let z = bm[(0, 0)] - bm[(1, 1)];
            let out = |f: fn(&[f64; 3]) -> f64| -> Complex64 {
                let re = bloch_step(p, [x.re, y.re, z.re], t.re);
                let im = bloch_step(p, [x.im, y.im, z.im], t.im);
                Complex64::new(f(&re), f(&im))
            };
            let (x2, y2, z2) = (out(|v| v[0]), out(|v| v[1]), out(|v| v[2]));
            let half = c(0.5);
            let col = [
                half * (t + z2),
                half * (x2 - Complex64::i() * y2),
                half * (x2 + Complex64::i() * y2),
                half * (t - z2),
            ];
            for (row, v) in col.iter().enumerate() {
                m[(row, i * 2 + j)] = *v;
            }
        }
    }
    Superoperator::from_matrix(2, m)
}

/// Generator of the master equation
/// `dρ/dt = -i[Ω σ_z / 2, ρ] + γ₊ D[σ₋]ρ + γ₋ D[σ₊]ρ`.
pub fn lindblad_generator(p: &ThermometerParams) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    let h = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(p.omega / 2.0), c(-p.omega / 2.0)]));
    let lower = Operator::ket_bra(2, 1, 0).into_matrix();
    let raise = Operator::ket_bra(2, 0, 1).into_matrix();
    let i = Complex64::i();
    let mut gen = (h.kronecker(&id) - id.kronecker(&h.transpose())).map(|z| -i * z);
    let (gp, gm) = p.rates();
    for (rate, op) in [(gp, lower), (gm, raise)] {
        let ada = op.adjoint() * &op;
        let d = op.kronecker(&op.conjugate())
            - (ada.kronecker(&id) + id.kronecker(&ada.transpose())).scale(0.5);
        gen += d.scale(rate);
    }
    gen
}

/// `M_{+1} = diag(cos η, sin η)`, `M_{-1} = diag(sin η, cos η)`.
pub fn weak_measurement(eta: f64) -> Result<Measurement> {
    check_eta(eta)?;
    let (s, co) = eta.sin_cos();
    Measurement::new(vec![
        Outcome::new(1.0, vec![Operator::from_real_rows(2, &[co, 0.0, 0.0, s])?]),
        Outcome::new(-1.0, vec![Operator::from_real_rows(2, &[s, 0.0, 0.0, co])?]),
    ])
}

/// `E_s = M_s ∘ Λ_τ`.
pub fn thermometer_instrument(p: &ThermometerParams) -> Result<Instrument> {
    build_instrument(&weak_measurement(p.eta)?, &thermal_channel(p)?)
}

/// Spectrum of `Λ_τ`: `{1, e^{-γβτ}, e^{-(γβ/2 ± iΩ)τ}}`.
pub fn thermal_spectrum(p: &ThermometerParams) -> [Complex64; 4] {
    let rot = Complex64::new(-p.gamma_beta / 2.0, p.omega) * p.tau;
    [c(1.0), c(p.decay()), rot.exp(), rot.conj().exp()]
}

/// Spectrum of `M ∘ Λ_τ`: the coherences pick up the factor `sin 2η`.
pub fn instrument_spectrum(p: &ThermometerParams) -> [Complex64; 4] {
    let [a, b, u, v] = thermal_spectrum(p);
    let s = (2.0 * p.eta).sin();
    [a, b, u * s, v * s]
}

/// Closed-form moments of `S` and `C_l` for the thermometer.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormReport {
    pub n: usize,
    pub lag: usize,
    /// `⟨σ_z⟩` of the initial state used for the means and `(ΔS)²_N`.
    pub initial_z: f64,
    pub mean: f64,
    pub variance: f64,
    /// `⟨C_l⟩_N`, `l = 1..=L`.
    pub lag_means: Vec<f64>,
    /// Stationary-state `cov(S, C_l)`.
    pub s_lag: Vec<f64>,
    /// Stationary-state `cov(C_l, C_l')`, 0-based.
    #[serde(with = "crate::serde_rows")]
    pub lag_lag: DMatrix<f64>,
    pub mean_limit: f64,
    pub sigma2_limit: f64,
    pub lag_means_limit: Vec<f64>,
    /// `lim N cov` of `(S, C_1..C_L)`.
    #[serde(with = "crate::serde_rows")]
    pub sigma_limit: DMatrix<f64>,
    pub fisher_standard: f64,
    pub fisher_quantum: f64,
    /// `F_0 / N` in the large-N limit.
    pub fisher_sequential_s_per_n: f64,
}

/// Scalars shared by the closed forms.
struct Cf {
    x: f64,
    r: f64,
    c2: f64,
    s2: f64,
    gbt: f64,
}

impl Cf {
    fn new(p: &ThermometerParams) -> Self {
        Cf {
            x: p.decay(),
            r: p.ratio(),
            c2: (2.0 * p.eta).cos(),
            s2: (2.0 * p.eta).sin(),
            gbt: p.gamma_beta * p.tau,
        }
    }

    fn xp(&self, k: f64) -> f64 {
        (-self.gbt * k).exp()
    }

    /// `(1+x)/(1-x)`.
    fn q1(&self) -> f64 {
        (1.0 + self.x) / (1.0 - self.x)
    }

    /// `⟨C_l⟩*`, valid for `l = 0` as the continuation `cos² 2η`.
    fn c_star(&self, l: f64) -> f64 {
        (self.r * self.r + self.xp(l) * (1.0 - self.r * self.r)) * self.c2 * self.c2
    }

    fn mean(&self, n: f64, a: f64) -> f64 {
        let x = self.x;
        -(self.r - (1.0 - self.xp(n)) / (n * (1.0 / x - 1.0)) * a) * self.c2
    }

    fn variance(&self, n: f64, a: f64) -> f64 {
        let (x, r, c2, s2) = (self.x, self.r, self.c2, self.s2);
        let xn = self.xp(n);
        let u = 1.0 - r * r;
        let first = (s2 * s2 + (self.q1() - 2.0 / n * (1.0 - xn) / (1.0 - x).powi(2) * x) * u * c2 * c2) / n;
        let second = -4.0 / n
            * (xn / (1.0 - xn) - 1.0 / (2.0 * n) * self.q1())
            * (1.0 - xn)
            / (1.0 / x - 1.0)
            * a
            * r
            * c2
            * c2;
        let third = -((1.0 - xn) / (1.0 / x - 1.0) * a * c2).powi(2) / (n * n);
        first + second + third
    }

    fn lag_mean(&self, n: f64, l: f64, a: f64) -> f64 {
        let (x, r) = (self.x, self.r);
        (r * r + self.xp(l) * (1.0 - r * r)
            - 1.0 / (n - l) * (1.0 - self.xp(n - l)) / (1.0 / x - 1.0) * (1.0 - self.xp(l)) * a * r)
            * self.c2
            * self.c2
    }

    fn cov_s_lag(&self, n: f64, l: f64) -> f64 {
        let (x, r, c2, s2) = (self.x, self.r, self.c2, self.s2);
        let s_star = -r * c2;
        2.0 / n
            * s_star
            * (s2 * s2
                - (l * self.xp(l)
                    - (self.q1() - 1.0 / (n - l) * (1.0 - self.xp(n - l)) / (1.0 - x).powi(2) * x)
                        * (1.0 - self.xp(l)))
                    * (1.0 - r * r)
                    * c2
                    * c2)
    }

    fn cov_lag_lag(&self, n: usize, l: usize, lp: usize) -> f64 {
        let (l, lp) = (l.max(lp), l.min(lp));
        let nf = n as f64;
        let (lf, lpf) = (l as f64, lp as f64);
        let (x, r, c2, s2) = (self.x, self.r, self.c2, self.s2);
        let delta = if l == lp { 1.0 } else { 0.0 };
        let y = x * x;
        let u = 1.0 - r * r;
        let w = u * r * r;
        let c4 = c2.powi(4);
        let s4 = s2.powi(4);
        let (nl, nlp) = (nf - lf, nf - lpf);
        if n >= l + lp {
            let k = 1.0 - lpf / nl;
            let mut t = delta / nlp * s4
                + 2.0 / nlp * (self.c_star(lf - lpf) + k * self.c_star(lf + lpf)) * s2 * s2;
            t -= 1.0 / nlp
                * (lpf * (2.0 - lpf / nl) * self.xp(lf + lpf)
                    - (1.0 + y) / (1.0 - y) * (self.xp(lf - lpf) - k * self.xp(lf + lpf))
                    - (lf - lpf - 2.0 / nl * y / (1.0 - y).powi(2))
                        * (self.xp(lf - lpf) - self.xp(lf + lpf)))
                * u
                * u
                * c4;
            t -= 2.0 / nlp
                * (lpf * (2.0 - lpf / nl) * (self.xp(lf) + self.xp(lpf))
                    - self.q1() * ((2.0 - lpf / nl) * (1.0 - self.xp(lpf)) + lpf / nl * self.xp(lf))
                    + 1.0 / nl * x / (1.0 - x).powi(2)
                        * ((1.0 - self.xp(nf - lf - lpf)) * (1.0 - self.xp(lf)) * (1.0 - self.xp(lpf))
                            + self.xp(lf - lpf)
                            - self.xp(lf + lpf)))
                * w
                * c4;
            t
        } else {
            let mut t = delta / nlp * s4 + 2.0 / nlp * self.c_star(lf - lpf) * s2 * s2;
            t -= (self.xp(lf + lpf)
                - 1.0 / nlp
                    * (lf - lpf + (1.0 + y) / (1.0 - y)
                        - 2.0 / nl * (1.0 - y.powf(nl)) / (1.0 - y).powi(2) * y)
                    * self.xp(lf - lpf))
                * u
                * u
                * c4;
            t -= 2.0
                * ((1.0 - (lf - lpf) / nlp) * (self.xp(lf) + self.xp(lpf))
                    - 1.0 / nlp * self.q1() * (1.0 + self.xp(lf) - self.xp(lpf))
                    + 1.0 / (nl * nlp) * (1.0 - self.xp(nl)) / (1.0 - x).powi(2)
                        * x
                        * (1.0 + self.xp(lf - lpf) - self.xp(lf + lpf - nf) + self.xp(lf)))
                * w
                * c4;
            t
        }
    }

    fn sigma_s_lag(&self, l: f64) -> f64 {
        let (r, c2, s2) = (self.r, self.c2, self.s2);
        2.0 * (-r * c2)
            * (s2 * s2 - (l * self.xp(l) - self.q1() * (1.0 - self.xp(l))) * (1.0 - r * r) * c2 * c2)
    }

    fn sigma_lag_lag(&self, l: usize, lp: usize) -> f64 {
        let (l, lp) = (l.max(lp) as f64, l.min(lp) as f64);
        let (x, r, c2, s2) = (self.x, self.r, self.c2, self.s2);
        let y = x * x;
        let delta = if l == lp { 1.0 } else { 0.0 };
        let u = 1.0 - r * r;
        delta * s2.powi(4) + 2.0 * (self.c_star(l - lp) + self.c_star(l + lp)) * s2 * s2
            - 2.0
                * (lp * self.xp(l + lp)
                    - 0.5 * (l - lp + (1.0 + y) / (1.0 - y)) * (self.xp(l - lp) - self.xp(l + lp)))
                * u
                * u
                * c2.powi(4)
            - 4.0 * (lp * (self.xp(l) + self.xp(lp)) - self.q1() * (1.0 - self.xp(lp))) * u * r * r * c2.powi(4)
    }

    fn sigma2(&self) -> f64 {
        self.s2 * self.s2 + self.q1() * (1.0 - self.r * self.r) * self.c2 * self.c2
    }
}

/// Closed forms at record length `n` and lags up to `l`. Means and `(ΔS)²_N`
/// use the initial state of `p`; covariances with `C_l` are stationary-state
/// values.
pub fn closed_forms(p: &ThermometerParams, n: usize, l: usize) -> Result<ClosedFormReport> {
    p.validate()?;
    if !(p.tau > 0.0) {
        return Err(Error::InvalidParameters("closed forms need τ > 0".into()));
    }
    if n < l + 1 || n == 0 {
        return Err(Error::RecordTooShort { n, l });
    }
    let cf = Cf::new(p);
    let z0 = p.initial_bloch()[2];
    let a = z0 + cf.r;
    let nf = n as f64;
    let mut lag_lag = DMatrix::zeros(l, l);
    let mut sigma_limit = DMatrix::zeros(l + 1, l + 1);
    sigma_limit[(0, 0)] = cf.sigma2();
    for i in 1..=l {
        sigma_limit[(0, i)] = cf.sigma_s_lag(i as f64);
        sigma_limit[(i, 0)] = sigma_limit[(0, i)];
        for j in 1..=l {
            lag_lag[(i - 1, j - 1)] = cf.cov_lag_lag(n, i, j);
            sigma_limit[(i, j)] = cf.sigma_lag_lag(i, j);
        }
    }
    let (f, fq) = fisher_standard(p)?;
    let ds = p.gamma / p.gamma_beta.powi(2) * cf.c2;
    Ok(ClosedFormReport {
        n,
        lag: l,
        initial_z: z0,
        mean: cf.mean(nf, a),
        variance: cf.variance(nf, a),
        lag_means: (1..=l).map(|k| cf.lag_mean(nf, k as f64, a)).collect(),
        s_lag: (1..=l).map(|k| cf.cov_s_lag(nf, k as f64)).collect(),
        lag_lag,
        mean_limit: -cf.r * cf.c2,
        sigma2_limit: cf.sigma2(),
        lag_means_limit: (1..=l).map(|k| cf.c_star(k as f64)).collect(),
        sigma_limit,
        fisher_standard: f,
        fisher_quantum: fq,
        fisher_sequential_s_per_n: ds * ds / cf.sigma2(),
    })
}

/// Standard-strategy Fisher information `F` of one measurement after one
/// relaxation period from the initial state, and the quantum Fisher
/// information `F_Q` of the relaxed state, both with respect to `γβ`.
pub fn fisher_standard(p: &ThermometerParams) -> Result<(f64, f64)> {
    p.validate()?;
    let b0 = p.initial_bloch();
    let x = p.decay();
    let r = p.ratio();
    let gb = p.gamma_beta;
    let b = p.relaxed_bloch();
    let z = b[2];
    let dz = -(p.gamma / (gb * gb)) * x - p.tau * (b0[2] + r) * x + p.gamma / (gb * gb);
    let c2 = (2.0 * p.eta).cos();
    let denom = 1.0 - z * z * c2 * c2;
    let f = if denom > 0.0 {
        c2 * c2 / denom * dz * dz
    } else if dz == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    // transverse part decays as e^{-γβτ/2} and only rotates otherwise
    let db = Vector3::new(-p.tau / 2.0 * b[0], -p.tau / 2.0 * b[1], dz);
    let bv = Vector3::new(b[0], b[1], b[2]);
    let v = Matrix3::identity() - bv * bv.transpose();
    let eig = v.symmetric_eigen();
    let mut fq = 0.0;
    for i in 0..3 {
        let lam = eig.eigenvalues[i];
        if lam > 1e-12 {
            let proj = eig.eigenvectors.column(i).dot(&db);
            fq += proj * proj / lam;
        }
    }
    Ok((f, fq))
}

/// `F` for a probe prepared in the equilibrium state itself.
pub fn fisher_equilibrium(p: &ThermometerParams) -> f64 {
    let r = p.ratio();
    let c2 = (2.0 * p.eta).cos();
    let dz = p.gamma / p.gamma_beta.powi(2);
    c2 * c2 / (1.0 - r * r * c2 * c2) * dz * dz
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub gamma: f64,
    pub omega: f64,
    /// Values of `γβ / γ`.
    pub ratios: Vec<f64>,
    /// Values of `τ γ`.
    pub tau_gamma: Vec<f64>,
    pub etas: Vec<f64>,
    pub l_max: usize,
    /// Finite-difference step in `γβ`; default `1e-4 * max(γβ, 1)`.
    pub step: Option<f64>,
    pub include_equilibrium: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gamma: 1.0,
            omega: 1.0,
            ratios: vec![1.2, 2.0, 5.0],
            tau_gamma: log_grid(0.01, 5.0, 50),
            etas: vec![0.0, 0.3],
            l_max: 2,
            step: None,
            include_equilibrium: false,
        }
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => return Vec::new(),
        1 => return vec![lo],
        _ => {}
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    grid
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub tau_gamma: f64,
    pub eta: f64,
    /// Standard strategy from `|↓⟩`, per measurement.
    pub f_standard: f64,
    pub f_equilibrium: Option<f64>,
    /// `F_0/N, ..., F_L/N`.
    pub f_sequential: Vec<f64>,
    /// `(F_l - F_{l-1}) / F_0` for `l = 1..=L`.
    pub gains: Vec<f64>,
    pub pseudo_inverse_used: bool,
}

/// Standard versus sequential Fisher information over a parameter grid.
/// The sequential values come from the generic superoperator machinery.
pub fn fisher_sweep_table(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.tau_gamma.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidParameters("τ must be positive on every grid point".into()));
    }
    let mut points = Vec::new();
    for &eta in &cfg.etas {
        for &ratio in &cfg.ratios {
            for &tg in &cfg.tau_gamma {
                points.push((ratio, tg, eta));
            }
        }
    }
    points
        .into_par_iter()
        .map(|(ratio, tg, eta)| {
            let p = ThermometerParams::new(cfg.gamma, ratio * cfg.gamma, cfg.omega, tg / cfg.gamma, eta)?;
            let (f_standard, _) = fisher_standard(&p)?;
            let model = |gb: f64| thermometer_instrument(&p.with_gamma_beta(gb));
            let rep = fisher(
                model,
                p.gamma_beta,
                cfg.l_max,
                1,
                FisherOptions {
                    step: cfg.step,
                    include_sigma_derivative: false,
                },
            )?;
            let f0 = rep.per_n[0];
            let gains = (1..=cfg.l_max)
                .map(|k| (rep.per_n[k] - rep.per_n[k - 1]) / f0)
                .collect();
            Ok(SweepRow {
                ratio,
                tau_gamma: tg,
                eta,
                f_standard,
                f_equilibrium: cfg.include_equilibrium.then(|| fisher_equilibrium(&p)),
                f_sequential: rep.per_n,
                gains,
                pseudo_inverse_used: rep.pseudo_inverse_used,
            })
        })
        .collect()
}

/// Writes a `# {json}` parameter line followed by the CSV table.
pub fn write_sweep_csv<W: Write>(mut out: W, cfg: &SweepConfig, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "# {}", serde_json::to_string(cfg)?)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["gamma_beta_over_gamma", "tau_gamma", "eta", "F_standard"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    if cfg.include_equilibrium {
        header.push("F_equilibrium".into());
    }
    header.extend((0..=cfg.l_max).map(|k| format!("F{k}_per_N")));
    header.extend((1..=cfg.l_max).map(|k| format!("gain{k}")));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            format!("{}", row.ratio),
            format!("{}", row.tau_gamma),
            format!("{}", row.eta),
            format!("{:e}", row.f_standard),
        ];
        if let Some(fe) = row.f_equilibrium {
            rec.push(format!("{fe:e}"));
        }
        rec.extend(row.f_sequential.iter().map(|v| format!("{v:e}")));
        rec.extend(row.gains.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{max_abs, validate_cptp};
    use approx::assert_abs_diff_eq;

    fn params() -> ThermometerParams {
        ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap()
    }

    #[test]
    fn channel_matches_master_equation() {
        for (gb, om, tau) in [(2.0, 0.7, 0.5), (1.0, 3.0, 2.0), (5.0, 0.0, 0.1)] {
            let p = ThermometerParams::new(1.0, gb, om, tau, 0.2).unwrap();
            let direct = thermal_channel(&p).unwrap();
            let gen = lindblad_generator(&p).scale(tau);
            let expm = gen.exp();
            assert_abs_diff_eq!(max_abs(&(direct.matrix() - expm)), 0.0, epsilon = 1e-12);
            assert!(validate_cptp(&direct, 1e-12).passed());
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let p = ThermometerParams::new(1.0, 2.0, 0.7, 0.0, 0.2).unwrap();
        let e = thermal_channel(&p).unwrap();
        assert_abs_diff_eq!(max_abs(&(e.matrix() - Superoperator::identity(2).matrix())), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn long_time_is_reset_to_equilibrium() {
        let p = ThermometerParams::new(1.0, 2.0, 0.7, 60.0, 0.2).unwrap();
        let e = thermal_channel(&p).unwrap();
        let eq = DensityMatrix::from_bloch(0.0, 0.0, -0.5).unwrap();
        let reset = Superoperator::reset(&eq);
        assert_abs_diff_eq!(max_abs(&(e.matrix() - reset.matrix())), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_temperature_fixed_point_is_ground() {
        let p = ThermometerParams::new(1.0, 1.0, 0.7, 0.5, 0.2).unwrap();
        let inst = thermometer_instrument(&p).unwrap();
        let rho = inst.spectral().fixed_point().unwrap();
        assert_abs_diff_eq!(rho.matrix()[(1, 1)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn measurement_limits() {
        let m = weak_measurement(0.0).unwrap();
        assert_eq!(m.effect(0)[(0, 0)], c(1.0));
        assert_eq!(m.effect(0)[(1, 1)], c(0.0));
        let m = weak_measurement(FRAC_PI_4).unwrap();
        assert_abs_diff_eq!(max_abs(&(m.effect(0) - CMatrix::identity(2, 2).scale(0.5))), 0.0, epsilon = 1e-15);
        assert!(weak_measurement(0.3).unwrap().completeness_residual() < 1e-15);
        assert!(matches!(weak_measurement(0.9), Err(Error::InvalidParameters(_))));
        assert!(matches!(weak_measurement(-0.1), Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn temperature_roundtrip_and_detailed_balance() {
        for t in [0.3, 1.0, 4.0] {
            let p = ThermometerParams::from_temperature(1.0, 1.3, t, 0.5, 0.1).unwrap();
            assert_abs_diff_eq!(p.temperature(), t, epsilon = 1e-12 * t.max(1.0));
            let (gp, gm) = p.rates();
            assert_abs_diff_eq!(gp / gm, (1.3 / t).exp(), epsilon = 1e-9 * (1.3 / t).exp());
            assert_abs_diff_eq!(gp + gm, p.gamma_beta, epsilon = 1e-12);
            assert_abs_diff_eq!(gp - gm, p.gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ThermometerParams::new(1.0, 0.5, 0.0, 1.0, 0.1).is_err());
        assert!(ThermometerParams::new(0.0, 0.5, 0.0, 1.0, 0.1).is_err());
        assert!(ThermometerParams::new(1.0, 2.0, 0.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn outcome_probabilities_follow_relaxed_z() {
        let p = params().with_initial_angles(1.1, 0.4).unwrap();
        let inst = thermometer_instrument(&p).unwrap();
        let rho = p.initial_state().unwrap();
        let z = p.relaxed_bloch()[2];
        let c2 = (2.0 * p.eta).cos();
        let plus = crate::instrument::outcome_probability(&inst, 1.0, &rho).unwrap();
        assert_abs_diff_eq!(plus, (1.0 + z * c2) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn stationary_mean_closed_form() {
        let p = ThermometerParams::new(1.0, 2.0, 0.3, 0.5, 0.0).unwrap();
        let inst = thermometer_instrument(&p).unwrap();
        let g = crate::instrument::build_generators(&inst, 1).unwrap();
        assert_abs_diff_eq!(g.mean(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn quantum_fisher_handles_pure_relaxed_state() {
        // zero temperature from the ground state stays pure
        let p = ThermometerParams::new(1.0, 1.0, 0.0, 0.5, 0.0).unwrap();
        let (_, fq) = fisher_standard(&p).unwrap();
        assert!(fq.is_finite());
    }
}
