//! Measurement instruments and the moment-generator superoperators.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linop::{
    max_abs, require_cptp, spectral_decompose, trace_row, validate_cptp, CMatrix, CVector,
    DensityMatrix, Operator, SpectralData, Superoperator, CPTP_TOL, PERIPHERAL_TOL,
};

/// Tolerance on `|sum_s M_s^dag M_s - 1|` for user-supplied measurements.
pub const POVM_TOL: f64 = 1e-9;

/// Tolerance on `|E(rho) - rho|` when checking a centering state.
pub const CENTERING_TOL: f64 = 1e-10;

/// One measurement outcome: a real value and the Kraus operators of `M_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub value: f64,
    pub kraus: Vec<Operator>,
}

impl Outcome {
    pub fn new(value: f64, kraus: Vec<Operator>) -> Self {
        Outcome { value, kraus }
    }
}

/// A complete measurement `{M_s}` with distinct real outcome values.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    dim: usize,
    outcomes: Vec<Outcome>,
}

impl Measurement {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        Self::with_tolerance(outcomes, POVM_TOL)
    }

    pub fn with_tolerance(outcomes: Vec<Outcome>, tol: f64) -> Result<Self> {
        let first = outcomes.first().ok_or(Error::Empty)?;
        let dim = first.kraus.first().ok_or(Error::Empty)?.dim();
        for (i, o) in outcomes.iter().enumerate() {
            if !o.value.is_finite() {
                return Err(Error::InvalidArgument("non-finite outcome value".into()));
            }
            if o.kraus.is_empty() {
                return Err(Error::Empty);
            }
            for k in &o.kraus {
                if k.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: k.dim(),
                    });
                }
            }
            if outcomes[..i].iter().any(|p| p.value == o.value) {
                return Err(Error::DuplicateOutcome(o.value));
            }
        }
        let m = Measurement { dim, outcomes };
        let residual = m.completeness_residual();
        if residual > tol {
            return Err(Error::IncompletePovm { residual });
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn values(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.value).collect()
    }

    /// POVM element `Pi_s = sum_k K_k^dag K_k` of outcome index `i`.
    pub fn effect(&self, i: usize) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for k in &self.outcomes[i].kraus {
            acc += k.matrix().adjoint() * k.matrix();
        }
        acc
    }

    /// `|sum_s Pi_s - 1|` as the largest absolute entry.
    pub fn completeness_residual(&self) -> f64 {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.outcomes.len() {
            acc += self.effect(i);
        }
        max_abs(&(acc - CMatrix::identity(self.dim, self.dim)))
    }

    /// The same measurement with every outcome value multiplied by `factor`.
    pub fn scaled_values(&self, factor: f64) -> Result<Measurement> {
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| Outcome::new(o.value * factor, o.kraus.clone()))
            .collect();
        Measurement::new(outcomes)
    }

    /// Projective measurement in the computational basis with the given values.
    pub fn projective(values: &[f64]) -> Result<Measurement> {
        let d = values.len();
        Measurement::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| Outcome::new(v, vec![Operator::ket_bra(d, i, i)]))
                .collect(),
        )
    }
}

/// Step subchannels `E_s = M_s ∘ Lambda` together with their average.
#[derive(Debug, Clone)]
pub struct Instrument {
    dim: usize,
    values: Vec<f64>,
    subchannels: Vec<Superoperator>,
    average: Superoperator,
    spectral: SpectralData,
}

/// `E_s = M_s ∘ channel` for every outcome, and `E = M ∘ channel`.
pub fn build_instrument(meas: &Measurement, channel: &Superoperator) -> Result<Instrument> {
    if meas.dim() != channel.dim() {
        return Err(Error::DimensionMismatch {
            expected: meas.dim(),
            found: channel.dim(),
        });
    }
    require_cptp(channel, CPTP_TOL)?;
    let subchannels = meas
        .outcomes()
        .iter()
        .map(|o| Superoperator::from_kraus(&o.kraus)?.compose(channel))
        .collect::<Result<Vec<_>>>()?;
    Instrument::assemble(meas.values(), subchannels)
}

impl Instrument {
    /// Builds an instrument from explicit subchannels. Each must be completely
    /// positive and their sum must be CPTP.
    pub fn from_subchannels(values: Vec<f64>, subchannels: Vec<Superoperator>) -> Result<Self> {
        if values.len() != subchannels.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: subchannels.len(),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::DuplicateOutcome(*v));
            }
        }
        for e in &subchannels {
            let r = validate_cptp(e, CPTP_TOL);
            if !r.completely_positive {
                return Err(Error::NotCptp {
                    trace_residual: 0.0,
                    positivity_residual: r.positivity_residual.max(r.hermiticity_residual),
                });
            }
        }
        Self::assemble(values, subchannels)
    }

    fn assemble(values: Vec<f64>, subchannels: Vec<Superoperator>) -> Result<Self> {
        let first = subchannels.first().ok_or(Error::Empty)?;
        let dim = first.dim();
        let mut avg = CMatrix::zeros(dim * dim, dim * dim);
        for e in &subchannels {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
            avg += e.matrix();
        }
        let average = Superoperator::from_matrix(dim, avg)?;
        let spectral = spectral_decompose(&average, PERIPHERAL_TOL)?;
        Ok(Instrument {
            dim,
            values,
            subchannels,
            average,
            spectral,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn subchannels(&self) -> &[Superoperator] {
        &self.subchannels
    }

    pub fn average(&self) -> &Superoperator {
        &self.average
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn outcome_index(&self, s: f64) -> Result<usize> {
        self.values
            .iter()
            .position(|&v| v == s)
            .ok_or(Error::UnknownOutcome(s))
    }

    /// Same instrument with outcome values multiplied by `factor != 0`.
    pub fn scaled_values(&self, factor: f64) -> Result<Instrument> {
        if factor == 0.0 || !factor.is_finite() {
            return Err(Error::InvalidArgument("scale factor must be finite and nonzero".into()));
        }
        Ok(Instrument {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        })
    }
}

/// `(1|E_s|rho)`.
pub fn outcome_probability(instr: &Instrument, s: f64, rho: &DensityMatrix) -> Result<f64> {
    let i = instr.outcome_index(s)?;
    if rho.dim() != instr.dim() {
        return Err(Error::DimensionMismatch {
            expected: instr.dim(),
            found: rho.dim(),
        });
    }
    let v = instr.subchannels[i].matrix() * rho.vectorize().into_data();
    Ok(trace_row(instr.dim()).dot(&v).re)
}

/// Superoperators generating the moments of `S` and `C_l`, centered at the
/// fixed point of the average channel.
///
/// Lags are 1-based: `lag_first(l)` is `Ẽ_l^(1)` for `l` in `1..=max_lag()`.
#[derive(Debug, Clone)]
pub struct MomentGenerators {
    dim: usize,
    max_lag: usize,
    rho: CVector,
    one: CVector,
    powers: Vec<CMatrix>,
    e1: CMatrix,
    e2_raw: CMatrix,
    tilde1: CMatrix,
    tilde2: CMatrix,
    /// `sum_s s δs E_s`.
    weighted_delta: CMatrix,
    mean: f64,
    variance: f64,
    lag_means: Vec<f64>,
    lag1: Vec<CMatrix>,
    lag2: Vec<CMatrix>,
    pair: Vec<Vec<CMatrix>>,
    instrument: Instrument,
}

pub fn build_generators(instr: &Instrument, max_lag: usize) -> Result<MomentGenerators> {
    let rho = instr.spectral().fixed_point()?.clone();
    build_generators_centered(instr, max_lag, &rho)
}

/// As [`build_generators`] with an explicit centering state, which must be
/// stationary under the average channel.
pub fn build_generators_centered(
    instr: &Instrument,
    max_lag: usize,
    centering: &DensityMatrix,
) -> Result<MomentGenerators> {
    if max_lag < 1 {
        return Err(Error::InvalidArgument("L must be at least 1".into()));
    }
    instr.spectral().stationary()?;
    let d = instr.dim();
    if centering.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: centering.dim(),
        });
    }
    let rho = centering.vectorize().into_data();
    let residual = (instr.average().matrix() * &rho - &rho)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if residual > CENTERING_TOL {
        return Err(Error::NonStationaryCentering { residual });
    }

    let n = d * d;
    let e = instr.average().matrix();
    let mut powers = Vec::with_capacity(max_lag + 2);
    powers.push(CMatrix::identity(n, n));
    for k in 1..=max_lag + 1 {
        let next = e * &powers[k - 1];
        powers.push(next);
    }

    let weighted = |f: &dyn Fn(f64) -> f64| -> CMatrix {
        let mut acc = CMatrix::zeros(n, n);
        for (s, es) in instr.values().iter().zip(instr.subchannels()) {
            acc += es.matrix().scale(f(*s));
        }
        acc
    };
    let one = trace_row(d);
    let expect = |m: &CMatrix| -> f64 { one.dot(&(m * &rho)).re };

    let e1 = weighted(&|s| s);
    let e2_raw = weighted(&|s| s * s);
    let mean = expect(&e1);
    let tilde1 = weighted(&|s| s - mean);
    let tilde2 = weighted(&|s| (s - mean) * (s - mean));
    let weighted_delta = weighted(&|s| s * (s - mean));
    let variance = expect(&tilde2);
    let lag_means = (1..=max_lag)
        .map(|l| expect(&(&e1 * &powers[l - 1] * &e1)))
        .collect();

    let mut g = MomentGenerators {
        dim: d,
        max_lag,
        rho,
        one,
        powers,
        e1,
        e2_raw,
        tilde1,
        tilde2,
        weighted_delta,
        mean,
        variance,
        lag_means,
        lag1: Vec::new(),
        lag2: Vec::new(),
        pair: Vec::new(),
        instrument: instr.clone(),
    };
    g.lag1 = (1..=max_lag).map(|l| g.compute_lag_first(l)).collect();
    g.lag2 = (1..=max_lag).map(|l| g.compute_lag_mixed(l)).collect();
    g.pair = (1..=max_lag)
        .map(|l| (1..=max_lag).map(|lp| g.compute_pair(l, lp)).collect())
        .collect();
    Ok(g)
}

impl MomentGenerators {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn instrument(&self) -> &Instrument {
        &self.instrument
    }

    /// `|rho*)`.
    pub fn rho(&self) -> &CVector {
        &self.rho
    }

    /// `(1|`.
    pub fn one(&self) -> &CVector {
        &self.one
    }

    /// `E^k` for `k <= max_lag + 1`.
    pub fn power(&self, k: usize) -> &CMatrix {
        &self.powers[k]
    }

    pub fn average(&self) -> &CMatrix {
        &self.powers[1]
    }

    /// `E^(1) = sum_s s E_s`.
    pub fn first_moment(&self) -> &CMatrix {
        &self.e1
    }

    /// `sum_s s^2 E_s`.
    pub fn second_moment_raw(&self) -> &CMatrix {
        &self.e2_raw
    }

    /// `Ẽ^(1) = sum_s δs E_s`.
    pub fn centered_first(&self) -> &CMatrix {
        &self.tilde1
    }

    /// `Ẽ^(2) = sum_s δs^2 E_s`.
    pub fn centered_second(&self) -> &CMatrix {
        &self.tilde2
    }

    /// `⟨s⟩*`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `(Δs)²*`.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `⟨C_l⟩*` for `l >= 1`.
    pub fn lag_mean(&self, l: usize) -> f64 {
        self.lag_means[l - 1]
    }

    pub fn lag_means(&self) -> &[f64] {
        &self.lag_means
    }

    pub fn lag_first(&self, l: usize) -> &CMatrix {
        &self.lag1[l - 1]
    }

    pub fn lag_mixed(&self, l: usize) -> &CMatrix {
        &self.lag2[l - 1]
    }

    pub fn pair(&self, l: usize, lp: usize) -> &CMatrix {
        &self.pair[l - 1][lp - 1]
    }

    /// `(1| m |rho*)`, real part.
    pub fn expect(&self, m: &CMatrix) -> f64 {
        self.one.dot(&(m * &self.rho)).re
    }

    fn p(&self, k: usize) -> &CMatrix {
        &self.powers[k]
    }

    fn compute_lag_first(&self, l: usize) -> CMatrix {
        let c = self.lag_mean(l);
        &self.e1 * self.p(l - 1) * &self.e1 - self.p(l + 1).scale(c)
    }

    fn compute_lag_mixed(&self, l: usize) -> CMatrix {
        let c = self.lag_mean(l);
        let e = self.average();
        let (e1, h, t1) = (&self.e1, &self.weighted_delta, &self.tilde1);
        let p = self.p(l - 1);
        let mut acc = h * p * e1 + e1 * p * h - (t1 * p * e + e * p * t1).scale(c);
        for k in 1..l {
            let a = self.p(k - 1);
            let b = self.p(l - k - 1);
            acc += e1 * a * t1 * b * e1 - (self.p(k) * t1 * self.p(l - k)).scale(c);
        }
        acc
    }

    /// `Ẽ^{∘⋆•}_{l l'}`, symmetrized in `(l, l')`.
    pub fn circ_star_bullet(&self, l: usize, lp: usize) -> CMatrix {
        let one_way = |l: usize, lp: usize| -> CMatrix {
            let (cl, clp) = (self.lag_mean(l), self.lag_mean(lp));
            let (e, e1) = (self.average(), &self.e1);
            let (a, b) = (self.p(l - 1), self.p(lp - 1));
            e1 * a * &self.e2_raw * b * e1 - (e1 * a * e1 * b * e).scale(clp)
                - (e * a * e1 * b * e1).scale(cl)
                + (e * a * e * b * e).scale(cl * clp)
        };
        one_way(l, lp) + one_way(lp, l)
    }

    /// `Ẽ^{∘•∘•}_{l l', k}` for `1 <= k < min(l, l')`, symmetrized in `(l, l')`.
    pub fn circ_bullet_circ_bullet(&self, l: usize, lp: usize, k: usize) -> CMatrix {
        let one_way = |l: usize, lp: usize| -> CMatrix {
            let (cl, clp) = (self.lag_mean(l), self.lag_mean(lp));
            let (e, e1) = (self.average(), &self.e1);
            let (a, b, m) = (self.p(l - k - 1), self.p(k - 1), self.p(lp - k - 1));
            e1 * a * e1 * b * e1 * m * e1 - (e1 * a * e * b * e1 * m * e).scale(clp)
                - (e * a * e1 * b * e * m * e1).scale(cl)
                + (e * a * e * b * e * m * e).scale(cl * clp)
        };
        one_way(l, lp) + one_way(lp, l)
    }

    /// `Ẽ^{⋆⋆}_l`.
    pub fn star_star(&self, l: usize) -> CMatrix {
        let c = self.lag_mean(l);
        let (e, e1, e2) = (self.average(), &self.e1, &self.e2_raw);
        let a = self.p(l - 1);
        e2 * a * e2 - (e1 * a * e1).scale(2.0 * c) + (e * a * e).scale(c * c)
    }

    /// `Ẽ^{⋆∘•}_{l l'}` for `l != l'`.
    pub fn star_circ_bullet(&self, l: usize, lp: usize) -> CMatrix {
        let (m, big) = (l.min(lp), l.max(lp));
        let (cm, cb) = (self.lag_mean(m), self.lag_mean(big));
        let (e, e1, e2) = (self.average(), &self.e1, &self.e2_raw);
        let (a, b) = (self.p(m - 1), self.p(big - m - 1));
        e2 * a * e1 * b * e1 - (e1 * a * e1 * b * e).scale(cb) - (e1 * a * e * b * e1).scale(cm)
            + (e * a * e * b * e).scale(cm * cb)
    }

    /// `Ẽ^{•∘⋆}_{l l'}` for `l != l'`.
    pub fn bullet_circ_star(&self, l: usize, lp: usize) -> CMatrix {
        let (m, big) = (l.min(lp), l.max(lp));
        let (cm, cb) = (self.lag_mean(m), self.lag_mean(big));
        let (e, e1, e2) = (self.average(), &self.e1, &self.e2_raw);
        let (a, b) = (self.p(big - m - 1), self.p(m - 1));
        e1 * a * e1 * b * e2 - (e1 * a * e * b * e1).scale(cm) - (e * a * e1 * b * e1).scale(cb)
            + (e * a * e * b * e).scale(cm * cb)
    }

    /// `Ẽ^{•∘∘•}_{l l'}` for `l != l'` (empty sum when `|l - l'| = 1`).
    pub fn bullet_circ_circ_bullet(&self, l: usize, lp: usize) -> CMatrix {
        let (m, big) = (l.min(lp), l.max(lp));
        let (cm, cb) = (self.lag_mean(m), self.lag_mean(big));
        let (e, e1) = (self.average(), &self.e1);
        let n = self.dim * self.dim;
        let mut acc = CMatrix::zeros(n, n);
        for k in 1..big - m {
            let (a, b, r) = (self.p(k - 1), self.p(m - 1), self.p(big - m - k - 1));
            acc += e1 * a * e1 * b * e1 * r * e1
                - (e * a * e1 * b * e1 * r * e).scale(cb)
                - (e1 * a * e * b * e * r * e1).scale(cm)
                + (e * a * e * b * e * r * e).scale(cm * cb);
        }
        acc
    }

    /// The part of `Ẽ^(2)_{l l'}` that does not involve `∘⋆•` or `∘•∘•`.
    pub fn pair_local(&self, l: usize, lp: usize) -> CMatrix {
        if l == lp {
            self.star_star(l)
        } else {
            self.star_circ_bullet(l, lp)
                + self.bullet_circ_star(l, lp)
                + self.bullet_circ_circ_bullet(l, lp)
        }
    }

    fn compute_pair(&self, l: usize, lp: usize) -> CMatrix {
        let mut acc = self.circ_star_bullet(l, lp);
        for k in 1..l.min(lp) {
            acc += self.circ_bullet_circ_bullet(l, lp, k);
        }
        acc + self.pair_local(l, lp)
    }
}

/// `sum_s w(s) E_s` without any centering, for tests and diagnostics.
pub fn weighted_sum(instr: &Instrument, w: impl Fn(f64) -> f64) -> CMatrix {
    let n = instr.dim() * instr.dim();
    let mut acc = CMatrix::zeros(n, n);
    for (s, es) in instr.values().iter().zip(instr.subchannels()) {
        acc += es.matrix().map(|z| z * Complex64::from(w(*s)));
    }
    acc
}
