//! Stationary means, the asymptotic covariance matrix of `(S, C_1, ..., C_L)`,
//! exact finite-N moments, and Fisher information of the two strategies.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instrument::{build_generators, Instrument, MomentGenerators};
use crate::linop::{mat_pow, CMatrix, CVector, Classification, DensityMatrix, Stationary};

/// `Σ` is accepted as positive semidefinite when its smallest eigenvalue is
/// at least `-PSD_TOL * trace(Σ)`.
pub const PSD_TOL: f64 = 1e-10;

/// Condition number above which `Σ` is inverted through a pseudo-inverse.
pub const COND_LIMIT: f64 = 1e12;

/// Tolerance for deciding whether an initial state is the fixed point.
const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryStats {
    /// `⟨S⟩*`.
    pub mean: f64,
    /// `(Δs)²*`.
    pub variance: f64,
    /// `⟨C_l⟩*` for `l = 1..=L`.
    pub lag_means: Vec<f64>,
}

pub fn stationary_stats(gen: &MomentGenerators) -> StationaryStats {
    StationaryStats {
        mean: gen.mean(),
        variance: gen.variance(),
        lag_means: gen.lag_means().to_vec(),
    }
}

fn stationary_of(gen: &MomentGenerators) -> Result<&Stationary> {
    gen.instrument().spectral().stationary()
}

fn require_mixing(gen: &MomentGenerators) -> Result<&Stationary> {
    match gen.instrument().spectral().classification {
        Classification::Mixing => stationary_of(gen),
        Classification::ErgodicNotMixing => Err(Error::NotMixing),
        Classification::NonErgodic => Err(Error::NoUniqueFixedPoint),
    }
}

/// Asymptotic variance `σ² = lim N (ΔS)²_N`.
pub fn sigma2(gen: &MomentGenerators) -> Result<f64> {
    let st = require_mixing(gen)?;
    let t1 = gen.centered_first();
    Ok(gen.expect(gen.centered_second()) + 2.0 * gen.expect(&(t1 * &st.reduced_resolvent * t1)))
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticReport {
    pub mean: f64,
    pub lag_means: Vec<f64>,
    pub sigma2: f64,
    /// `(L+1) x (L+1)`, index 0 is `S`, index `l` is `C_l`.
    #[serde(with = "crate::serde_rows")]
    pub sigma: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub classification: Classification,
}

impl AsymptoticReport {
    pub fn lag(&self) -> usize {
        self.sigma.nrows() - 1
    }

    /// `(⟨S⟩*, ⟨C_1⟩*, ..., ⟨C_L⟩*)`.
    pub fn statistic_means(&self) -> Vec<f64> {
        let mut v = vec![self.mean];
        v.extend_from_slice(&self.lag_means);
        v
    }
}

/// `Σ` for `(S, C_1, ..., C_l)` with `l <= gen.max_lag()`.
pub fn covariance_matrix(gen: &MomentGenerators, l: usize) -> Result<AsymptoticReport> {
    if l > gen.max_lag() {
        return Err(Error::InvalidArgument(format!(
            "L = {l} exceeds generator lag {}",
            gen.max_lag()
        )));
    }
    let st = require_mixing(gen)?;
    let r = &st.reduced_resolvent;
    let t1 = gen.centered_first();
    let f = |m: &CMatrix| gen.expect(m);
    let mut sigma = DMatrix::<f64>::zeros(l + 1, l + 1);
    sigma[(0, 0)] = f(gen.centered_second()) + 2.0 * f(&(t1 * r * t1));
    for a in 1..=l {
        let la = gen.lag_first(a);
        let v = f(gen.lag_mixed(a)) + f(&(t1 * r * la)) + f(&(la * r * t1));
        sigma[(0, a)] = v;
        sigma[(a, 0)] = v;
        for b in a..=l {
            let lb = gen.lag_first(b);
            let v = f(gen.pair(a, b)) + f(&(la * r * lb)) + f(&(lb * r * la));
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let min_eigenvalue = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eigenvalue < -PSD_TOL * sigma.trace().abs() {
        return Err(Error::Numerical(format!(
            "covariance matrix has negative eigenvalue {min_eigenvalue:e}"
        )));
    }
    Ok(AsymptoticReport {
        mean: gen.mean(),
        lag_means: gen.lag_means()[..l].to_vec(),
        sigma2: sigma[(0, 0)],
        sigma,
        min_eigenvalue,
        classification: gen.instrument().spectral().classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitialState {
    Stationary,
    Generic,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteNReport {
    pub n: usize,
    pub lag: usize,
    pub initial_state: InitialState,
    /// `⟨S⟩_N`.
    pub mean: f64,
    /// `⟨(S - ⟨S⟩*)²⟩_N`.
    pub second_moment: f64,
    /// `(ΔS)²_N = ⟨(S - ⟨S⟩_N)²⟩_N`.
    pub variance: f64,
    /// `⟨C_l⟩_N` for `l = 1..=L`.
    pub lag_means: Vec<f64>,
    /// Present only for a stationary initial state.
    pub covariances: Option<FiniteNCovariances>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteNCovariances {
    /// `cov(S, C_l)` for `l = 1..=L`.
    pub s_lag: Vec<f64>,
    /// `cov(C_l, C_l')`, `L x L`, 0-based.
    #[serde(with = "crate::serde_rows")]
    pub lag_lag: DMatrix<f64>,
}

impl FiniteNReport {
    /// Full `(L+1) x (L+1)` covariance matrix of `(S, C_1..C_L)`.
    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariances.as_ref()?;
        let l = self.lag;
        let mut m = DMatrix::zeros(l + 1, l + 1);
        m[(0, 0)] = self.variance;
        for a in 1..=l {
            m[(0, a)] = c.s_lag[a - 1];
            m[(a, 0)] = c.s_lag[a - 1];
            for b in 1..=l {
                m[(a, b)] = c.lag_lag[(a - 1, b - 1)];
            }
        }
        Some(m)
    }
}

struct FiniteCtx<'a> {
    gen: &'a MomentGenerators,
    st: &'a Stationary,
    n: usize,
    id: CMatrix,
}

impl FiniteCtx<'_> {
    /// `E'^k`.
    fn ep(&self, k: usize) -> CMatrix {
        mat_pow(&self.st.remainder, k)
    }

    /// `(1 - E'^k)(1 - E')^{-1}`.
    fn geo(&self, k: usize) -> CMatrix {
        (&self.id - self.ep(k)) * &self.st.fundamental
    }

    /// `k (1 - E')^{-1} - (1 - E'^k)(1 - E')^{-2}`.
    fn shifted(&self, k: usize) -> CMatrix {
        let z = &self.st.fundamental;
        z.scale(k as f64) - self.geo(k) * z
    }

    fn at(&self, m: &CMatrix, v: &CVector) -> f64 {
        self.gen.one().dot(&(m * v)).re
    }

    fn cov_s_lag(&self, l: usize) -> f64 {
        let (gen, n) = (self.gen, self.n as f64);
        let nl = (self.n - l) as f64;
        let t1 = gen.centered_first();
        let la = gen.lag_first(l);
        let m = self.shifted(self.n - l) * &self.st.complement;
        gen.expect(gen.lag_mixed(l)) / n
            + (gen.expect(&(t1 * &m * la)) + gen.expect(&(la * &m * t1))) / (n * nl)
    }

    fn cov_lag_lag(&self, l: usize, lp: usize) -> f64 {
        let gen = self.gen;
        let n = self.n;
        let denom = ((n - l) * (n - lp)) as f64;
        let mut total = 0.0;
        if n >= l + lp {
            let th = n - l - lp;
            let m = self.shifted(th) * &self.st.complement;
            let (a, b) = (gen.lag_first(l), gen.lag_first(lp));
            total += (gen.expect(&(a * &m * b))
                + gen.expect(&(b * &m * a))
                + th as f64 * gen.expect(&gen.circ_star_bullet(l, lp)))
                / denom;
        }
        let lo = (l + lp + 1).saturating_sub(n).max(1);
        for k in lo..l.min(lp) {
            let w = (n + k - l - lp) as f64;
            total += w * gen.expect(&gen.circ_bullet_circ_bullet(l, lp, k)) / denom;
        }
        total + gen.expect(&gen.pair_local(l, lp)) / (n - l.min(lp)) as f64
    }
}

/// Exact moments at finite record length `n` from initial state `rho0`.
///
/// Covariances involving `C_l` are only available when `rho0` is the fixed
/// point; for other initial states they are omitted.
pub fn finite_n_moments(
    gen: &MomentGenerators,
    rho0: &DensityMatrix,
    n: usize,
    l: usize,
) -> Result<FiniteNReport> {
    let st = stationary_of(gen)?;
    if l > gen.max_lag() {
        return Err(Error::InvalidArgument(format!(
            "L = {l} exceeds generator lag {}",
            gen.max_lag()
        )));
    }
    if n < l + 1 || n == 0 {
        return Err(Error::RecordTooShort { n, l });
    }
    if rho0.dim() != gen.dim() {
        return Err(Error::DimensionMismatch {
            expected: gen.dim(),
            found: rho0.dim(),
        });
    }
    let size = gen.dim() * gen.dim();
    let ctx = FiniteCtx {
        gen,
        st,
        n,
        id: CMatrix::identity(size, size),
    };
    let r0 = rho0.vectorize().into_data();
    let q0 = &st.complement * &r0;
    let nf = n as f64;
    let s_star = gen.mean();
    let (e1, t1, t2) = (gen.first_moment(), gen.centered_first(), gen.centered_second());
    let z = &st.fundamental;
    let r = &st.reduced_resolvent;

    let mean = s_star + ctx.at(&(e1 * ctx.geo(n)), &q0) / nf;

    let lag_means = (1..=l)
        .map(|k| {
            let m = e1 * gen.power(k - 1) * e1 * ctx.geo(n - k);
            gen.lag_mean(k) + ctx.at(&m, &q0) / (n - k) as f64
        })
        .collect();

    let mut second = gen.expect(t2) / nf + 2.0 * gen.expect(&(t1 * r * t1)) / nf
        - 2.0 * gen.expect(&(t1 * ctx.geo(n) * z * &st.complement * t1)) / (nf * nf);
    let mut cross = 0.0;
    for j in 1..n {
        let m = t1 * ctx.ep(n - j) * z * &st.complement * t1 * ctx.ep(j - 1);
        cross += ctx.at(&m, &q0);
    }
    second -= 2.0 * cross / (nf * nf);
    second += ctx.at(&(t2 * ctx.geo(n)), &q0) / (nf * nf);
    second += 2.0 * ctx.at(&(t1 * r * t1 * ctx.geo(n - 1)), &q0) / (nf * nf);

    let variance = second - (mean - s_star).powi(2);

    let stationary = (&r0 - gen.rho()).iter().map(|z| z.norm()).fold(0.0, f64::max) <= STATIONARY_TOL;
    let covariances = if stationary {
        let s_lag = (1..=l).map(|k| ctx.cov_s_lag(k)).collect();
        let mut lag_lag = DMatrix::zeros(l, l);
        for a in 1..=l {
            for b in a..=l {
                let v = ctx.cov_lag_lag(a, b);
                lag_lag[(a - 1, b - 1)] = v;
                lag_lag[(b - 1, a - 1)] = v;
            }
        }
        Some(FiniteNCovariances { s_lag, lag_lag })
    } else {
        None
    };

    Ok(FiniteNReport {
        n,
        lag: l,
        initial_state: if stationary {
            InitialState::Stationary
        } else {
            InitialState::Generic
        },
        mean,
        second_moment: second,
        variance,
        lag_means,
        covariances,
    })
}

/// Finite-N covariances; fails unless `rho0` is the fixed point.
pub fn finite_n_covariances(
    gen: &MomentGenerators,
    rho0: &DensityMatrix,
    n: usize,
    l: usize,
) -> Result<FiniteNCovariances> {
    let report = finite_n_moments(gen, rho0, n, l)?;
    match report.covariances {
        Some(c) => Ok(c),
        None => {
            let r0 = rho0.vectorize().into_data();
            let residual = (&r0 - gen.rho()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            Err(Error::NonStationaryCentering { residual })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FisherOptions {
    /// Step of the five-point central difference; default `1e-4 * max(|g|, 1)`.
    pub step: Option<f64>,
    /// Add `½ tr((Σ⁻¹ ∂Σ)²)` to each `F_l`.
    pub include_sigma_derivative: bool,
}

impl Default for FisherOptions {
    fn default() -> Self {
        FisherOptions {
            step: None,
            include_sigma_derivative: false,
        }
    }
}

pub fn default_step(g: f64) -> f64 {
    1e-4 * g.abs().max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub g: f64,
    pub n: usize,
    pub step: f64,
    /// `∂⟨S⟩*/∂g, ∂⟨C_1⟩*/∂g, ...`.
    pub derivatives: Vec<f64>,
    #[serde(with = "crate::serde_rows")]
    pub sigma: DMatrix<f64>,
    /// `F_0 = N (∂⟨S⟩*)² / σ²`.
    pub f0: f64,
    /// `F_l` for `l = 0..=L` (so `f[0] == f0`).
    pub f: Vec<f64>,
    /// `F_l / N`.
    pub per_n: Vec<f64>,
    pub sigma_derivative_included: bool,
    /// Set when any leading block of `Σ` needed a pseudo-inverse.
    pub pseudo_inverse_used: bool,
}

/// Solves `Σ x = d` for symmetric PSD `Σ`, falling back to a pseudo-inverse.
fn spd_inverse(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let eig = sigma.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lmax > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    if lmin > 0.0 && lmax / lmin <= COND_LIMIT {
        if let Some(ch) = sigma.clone().cholesky() {
            return Ok((ch.inverse(), false));
        }
    }
    let n = sigma.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > lmax / COND_LIMIT {
            let v = eig.eigenvectors.column(i);
            pinv += (v * v.transpose()) / lam;
        }
    }
    Ok((pinv, true))
}

/// Fisher information of the S-only and `(S, C_1..C_L)` strategies for a
/// one-parameter family `model(g)`, at record length `n`.
pub fn fisher<F>(model: F, g: f64, l: usize, n: usize, opts: FisherOptions) -> Result<FisherReport>
where
    F: Fn(f64) -> Result<Instrument>,
{
    let h = opts.step.unwrap_or_else(|| default_step(g));
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let lag = l.max(1);
    let report_at = |x: f64| -> Result<AsymptoticReport> {
        let gen = build_generators(&model(x)?, lag)?;
        covariance_matrix(&gen, l)
    };
    // five-point central stencil, error O(h^4)
    let mid = report_at(g)?;
    let pts = [report_at(g - 2.0 * h)?, report_at(g - h)?, report_at(g + h)?, report_at(g + 2.0 * h)?];
    let w = [1.0, -8.0, 8.0, -1.0].map(|c| c / (12.0 * h));
    let means: Vec<Vec<f64>> = pts.iter().map(|r| r.statistic_means()).collect();
    let derivatives: Vec<f64> = (0..=l)
        .map(|k| (0..4).map(|i| w[i] * means[i][k]).sum())
        .collect();
    let dsigma = pts
        .iter()
        .zip(w)
        .fold(DMatrix::zeros(l + 1, l + 1), |acc, (r, wi)| acc + &r.sigma * wi);
    fisher_from_parts(g, n, h, mid.sigma, derivatives, opts.include_sigma_derivative.then_some(dsigma))
}

/// Fisher values from `Σ` at `g` and precomputed derivatives of the
/// stationary means (and optionally of `Σ`).
pub fn fisher_from_parts(
    g: f64,
    n: usize,
    step: f64,
    sigma: DMatrix<f64>,
    derivatives: Vec<f64>,
    dsigma: Option<DMatrix<f64>>,
) -> Result<FisherReport> {
    let l = sigma.nrows() - 1;
    if derivatives.len() != l + 1 {
        return Err(Error::DimensionMismatch {
            expected: l + 1,
            found: derivatives.len(),
        });
    }
    let nf = n as f64;
    let mut f = Vec::with_capacity(l + 1);
    let mut pseudo = false;
    for k in 0..=l {
        let block = sigma.view((0, 0), (k + 1, k + 1)).into_owned();
        let (inv, used) = spd_inverse(&block)?;
        pseudo |= used;
        let d = nalgebra::DVector::from_column_slice(&derivatives[..=k]);
        let mut value = nf * d.dot(&(&inv * &d));
        if let Some(ds) = &dsigma {
            let a = &inv * ds.view((0, 0), (k + 1, k + 1));
            value += 0.5 * (&a * &a).trace();
        }
        f.push(value);
    }
    Ok(FisherReport {
        g,
        n,
        step,
        derivatives,
        sigma,
        f0: f[0],
        per_n: f.iter().map(|x| x / nf).collect(),
        f,
        sigma_derivative_included: dsigma.is_some(),
        pseudo_inverse_used: pseudo,
    })
}
