//! Monte Carlo measurement records, exact enumeration, and CLT diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::AsymptoticReport;
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::linop::{trace_row, CMatrix, CVector, DensityMatrix};

/// Step probabilities above `-NEGATIVE_CLAMP` are clamped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// Default bound on the number of enumerated sequences.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// Recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha); stream seed = SplitMix64(master ^ index)";

/// Minimum batch size accepted by [`gaussianity_diagnostics`].
pub const MIN_DIAGNOSTIC_BATCH: usize = 1000;

/// Seed of trajectory `index` derived from a master seed.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub n: usize,
    pub outcomes: Vec<f64>,
    pub final_state: DensityMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRecord {
    pub n: usize,
    pub l: usize,
    pub s: f64,
    /// `C_1..C_L`.
    pub c: Vec<f64>,
}

impl StatRecord {
    /// `(S, C_1, ..., C_L)`.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.l + 1);
        v.push(self.s);
        v.extend_from_slice(&self.c);
        v
    }
}

/// Per-step sampler state shared by all sampling entry points.
struct Stepper<'a> {
    instr: &'a Instrument,
    /// `(1|E_s` for each outcome.
    rows: Vec<CVector>,
    probs: Vec<f64>,
    scratch: CVector,
}

impl<'a> Stepper<'a> {
    fn new(instr: &'a Instrument) -> Self {
        let one = trace_row(instr.dim());
        let rows = instr
            .subchannels()
            .iter()
            .map(|e| e.matrix().transpose() * &one)
            .collect();
        Stepper {
            instr,
            rows,
            probs: vec![0.0; instr.values().len()],
            scratch: CVector::zeros(instr.dim() * instr.dim()),
        }
    }

    /// Draws one outcome index and updates `rho` in place.
    fn step(&mut self, rho: &mut CVector, rng: &mut ChaCha8Rng) -> Result<usize> {
        let mut total = 0.0;
        for (p, row) in self.probs.iter_mut().zip(&self.rows) {
            let mut x = row.dot(rho).re;
            if x < 0.0 {
                if x < -NEGATIVE_CLAMP {
                    return Err(Error::NegativeProbability(x));
                }
                x = 0.0;
            }
            *p = x;
            total += x;
        }
        if !(total > 0.0) {
            return Err(Error::VanishingProbability);
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = self.probs.len() - 1;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                chosen = i;
                break;
            }
        }
        while self.probs[chosen] <= 0.0 {
            chosen -= 1;
        }
        let e = self.instr.subchannels()[chosen].matrix();
        self.scratch.gemv(1.0.into(), e, rho, 0.0.into());
        let p = self.probs[chosen];
        for (dst, src) in rho.iter_mut().zip(self.scratch.iter()) {
            *dst = src / p;
        }
        Ok(chosen)
    }
}

fn check_initial(instr: &Instrument, rho0: &DensityMatrix, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    if rho0.dim() != instr.dim() {
        return Err(Error::DimensionMismatch {
            expected: instr.dim(),
            found: rho0.dim(),
        });
    }
    Ok(())
}

/// Samples `n` sequential outcomes starting from `rho0`.
pub fn sample(instr: &Instrument, rho0: &DensityMatrix, n: usize, seed: u64) -> Result<TrajectoryRecord> {
    check_initial(instr, rho0, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(instr);
    let mut rho = rho0.vectorize().into_data();
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let i = stepper.step(&mut rho, &mut rng)?;
        outcomes.push(instr.values()[i]);
    }
    let d = instr.dim();
    let final_state =
        DensityMatrix::normalized_unchecked(CMatrix::from_row_iterator(d, d, rho.iter().cloned()))?;
    Ok(TrajectoryRecord {
        seed,
        n,
        outcomes,
        final_state,
    })
}

/// `S` and `C_1..C_L` of an outcome list.
pub fn statistics_of(outcomes: &[f64], l: usize) -> Result<StatRecord> {
    let n = outcomes.len();
    if n < l + 1 {
        return Err(Error::RecordTooShort { n, l });
    }
    let s = outcomes.iter().sum::<f64>() / n as f64;
    let c = (1..=l)
        .map(|k| {
            outcomes[..n - k]
                .iter()
                .zip(&outcomes[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (n - k) as f64
        })
        .collect();
    Ok(StatRecord { n, l, s, c })
}

pub fn statistics(rec: &TrajectoryRecord, l: usize) -> Result<StatRecord> {
    statistics_of(&rec.outcomes, l)
}

/// Samples one record and reduces it to statistics without storing outcomes.
pub fn sample_statistics(
    instr: &Instrument,
    rho0: &DensityMatrix,
    n: usize,
    l: usize,
    seed: u64,
) -> Result<StatRecord> {
    check_initial(instr, rho0, n)?;
    if n < l + 1 {
        return Err(Error::RecordTooShort { n, l });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(instr);
    let mut rho = rho0.vectorize().into_data();
    let mut history = vec![0.0; l.max(1)];
    let mut sum = 0.0;
    let mut lag_sums = vec![0.0; l];
    for i in 0..n {
        let s = instr.values()[stepper.step(&mut rho, &mut rng)?];
        sum += s;
        for k in 1..=l.min(i) {
            lag_sums[k - 1] += s * history[(i - k) % l];
        }
        if l > 0 {
            history[i % l] = s;
        }
    }
    Ok(StatRecord {
        n,
        l,
        s: sum / n as f64,
        c: lag_sums
            .iter()
            .enumerate()
            .map(|(k, x)| x / (n - k - 1) as f64)
            .collect(),
    })
}

/// `batch` independent records; row `i` uses seed `trajectory_seed(master, i)`.
/// Output order is the trajectory index regardless of scheduling.
pub fn sample_batch(
    instr: &Instrument,
    rho0: &DensityMatrix,
    n: usize,
    l: usize,
    batch: usize,
    master_seed: u64,
) -> Result<Vec<(u64, StatRecord)>> {
    (0..batch as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trajectory_seed(master_seed, i);
            sample_statistics(instr, rho0, n, l, seed).map(|r| (seed, r))
        })
        .collect()
}

/// Writes `seed,S,C1..CL` rows with a header.
pub fn write_batch_csv<W: Write>(out: W, rows: &[(u64, StatRecord)], l: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["seed".to_string(), "S".to_string()];
    header.extend((1..=l).map(|k| format!("C{k}")));
    w.write_record(&header)?;
    for (seed, r) in rows {
        let mut rec = vec![seed.to_string(), format!("{:e}", r.s)];
        rec.extend(r.c.iter().take(l).map(|x| format!("{x:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Exact distribution of all outcome sequences of length `n`.
#[derive(Debug, Clone, Serialize)]
pub struct ExactDistribution {
    pub n: usize,
    pub l: usize,
    pub values: Vec<f64>,
    /// Indexed by the sequence written in base `values.len()`, first outcome
    /// most significant.
    pub probabilities: Vec<f64>,
    pub total_probability: f64,
    pub min_probability: f64,
    /// `⟨(S, C_1..C_L)⟩`.
    pub mean: Vec<f64>,
    /// Covariance of `(S, C_1..C_L)`.
    #[serde(with = "crate::serde_rows")]
    pub covariance: DMatrix<f64>,
    /// `⟨(S - ⟨S⟩)^k⟩` for `k = 0..=4`.
    pub s_central_moments: [f64; 5],
}

impl ExactDistribution {
    /// Outcome values of sequence `index`.
    pub fn sequence(&self, index: usize) -> Vec<f64> {
        let r = self.values.len();
        let mut out = vec![0.0; self.n];
        let mut x = index;
        for slot in out.iter_mut().rev() {
            *slot = self.values[x % r];
            x /= r;
        }
        out
    }
}

struct Enumerator<'a> {
    subs: Vec<&'a CMatrix>,
    values: &'a [f64],
    one: CVector,
    n: usize,
    l: usize,
    reference: Vec<f64>,
    probabilities: Vec<f64>,
    prefix: Vec<f64>,
    sum1: DVector<f64>,
    sum2: DMatrix<f64>,
    s_pow: [f64; 5],
}

impl Enumerator<'_> {
    fn visit(&mut self, depth: usize, state: &CVector, index: usize) {
        if depth == self.n {
            let p = self.one.dot(state).re;
            self.probabilities[index] = p;
            let st = statistics_of(&self.prefix, self.l).expect("length checked");
            let x = DVector::from_iterator(
                self.l + 1,
                st.vector().iter().zip(&self.reference).map(|(a, b)| a - b),
            );
            self.sum1 += &x * p;
            self.sum2 += &x * x.transpose() * p;
            let mut t = p;
            for k in 0..5 {
                self.s_pow[k] += t;
                t *= x[0];
            }
            return;
        }
        let r = self.values.len();
        for i in 0..r {
            let next = self.subs[i] * state;
            self.prefix.push(self.values[i]);
            self.visit(depth + 1, &next, index * r + i);
            self.prefix.pop();
        }
    }
}

/// Exact moments by summing `(1|E_{s_N}...E_{s_1}|rho0)` over all sequences.
pub fn enumerate_exact(
    instr: &Instrument,
    rho0: &DensityMatrix,
    n: usize,
    l: usize,
    cap: u64,
) -> Result<ExactDistribution> {
    check_initial(instr, rho0, n)?;
    if n < l + 1 {
        return Err(Error::RecordTooShort { n, l });
    }
    let r = instr.values().len() as u128;
    let count = r.checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }
    // moments are accumulated about a nearby reference to limit cancellation
    let reference = match instr.spectral().stationary() {
        Ok(st) => {
            let one = trace_row(instr.dim());
            let e1 = crate::instrument::weighted_sum(instr, |s| s);
            let rho = st.rho.vectorize().into_data();
            let mut v = vec![one.dot(&(&e1 * &rho)).re];
            let mut power = CMatrix::identity(e1.nrows(), e1.nrows());
            for _ in 1..=l {
                v.push(one.dot(&(&e1 * &power * &e1 * &rho)).re);
                power = instr.average().matrix() * power;
            }
            v
        }
        Err(_) => vec![0.0; l + 1],
    };
    let mut en = Enumerator {
        subs: instr.subchannels().iter().map(|e| e.matrix()).collect(),
        values: instr.values(),
        one: trace_row(instr.dim()),
        n,
        l,
        reference,
        probabilities: vec![0.0; count as usize],
        prefix: Vec::with_capacity(n),
        sum1: DVector::zeros(l + 1),
        sum2: DMatrix::zeros(l + 1, l + 1),
        s_pow: [0.0; 5],
    };
    en.visit(0, &rho0.vectorize().into_data(), 0);

    let total = en.s_pow[0];
    let shift = &en.sum1 / total;
    let covariance = &en.sum2 / total - &shift * shift.transpose();
    let mean = shift.iter().zip(&en.reference).map(|(a, b)| a + b).collect();
    // central moments of S from raw moments about the reference
    let m: Vec<f64> = en.s_pow.iter().map(|x| x / total).collect();
    let a = m[1];
    let s_central_moments = [
        1.0,
        0.0,
        m[2] - a * a,
        m[3] - 3.0 * a * m[2] + 2.0 * a.powi(3),
        m[4] - 4.0 * a * m[3] + 6.0 * a * a * m[2] - 3.0 * a.powi(4),
    ];
    let min_probability = en.probabilities.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ExactDistribution {
        n,
        l,
        values: instr.values().to_vec(),
        probabilities: en.probabilities,
        total_probability: total,
        min_probability,
        mean,
        covariance,
        s_central_moments,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChebyshevCheck {
    pub k: f64,
    /// Fraction of records with `|S - ⟨S⟩*| >= k σ / sqrt(N)`.
    pub frequency: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianityDiagnostics {
    pub batch: usize,
    pub n: usize,
    /// Mean of `sqrt(N) (S - ⟨S⟩*)`.
    pub mean: f64,
    pub mean_standard_error: f64,
    pub variance: f64,
    pub sigma2: f64,
    pub skewness: f64,
    pub skewness_standard_error: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_standard_error: f64,
    /// Mean squared Mahalanobis distance of `sqrt(N)(X - X*)` under `Σ`.
    pub mahalanobis_mean: f64,
    pub mahalanobis_standard_error: f64,
    pub dimension: usize,
    pub chebyshev: Vec<ChebyshevCheck>,
}

/// Skewness, kurtosis, Mahalanobis and Chebyshev checks of a batch of records
/// against the asymptotic prediction.
pub fn gaussianity_diagnostics(
    batch: &[StatRecord],
    report: &AsymptoticReport,
) -> Result<GaussianityDiagnostics> {
    let b = batch.len();
    if b < MIN_DIAGNOSTIC_BATCH {
        return Err(Error::InvalidArgument(format!(
            "diagnostics need at least {MIN_DIAGNOSTIC_BATCH} records, got {b}"
        )));
    }
    let l = report.lag();
    let n = batch[0].n;
    if batch.iter().any(|r| r.n != n || r.l < l) {
        return Err(Error::InvalidArgument("records differ in N or have too few lags".into()));
    }
    let chol = report
        .sigma
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateCovariance)?;
    let root_n = (n as f64).sqrt();
    let mut star = vec![report.mean];
    star.extend_from_slice(&report.lag_means);

    let z: Vec<f64> = batch.iter().map(|r| root_n * (r.s - report.mean)).collect();
    let bf = b as f64;
    let mean = z.iter().sum::<f64>() / bf;
    let central = |k: i32| z.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / bf;
    let m2 = central(2);
    let skewness = central(3) / m2.powf(1.5);
    let excess_kurtosis = central(4) / (m2 * m2) - 3.0;

    let d2: Vec<f64> = batch
        .iter()
        .map(|r| {
            let y = DVector::from_iterator(
                l + 1,
                r.vector().iter().zip(&star).map(|(a, s)| root_n * (a - s)),
            );
            let w = chol.solve(&y);
            y.dot(&w)
        })
        .collect();
    let mahalanobis_mean = d2.iter().sum::<f64>() / bf;
    let d2_var = d2.iter().map(|x| (x - mahalanobis_mean).powi(2)).sum::<f64>() / (bf - 1.0);

    let sigma = report.sigma2.sqrt();
    let chebyshev = [2.0, 3.0, 5.0]
        .iter()
        .map(|&k| {
            let frequency = z.iter().filter(|x| x.abs() >= k * sigma).count() as f64 / bf;
            let bound = 1.0 / (k * k);
            ChebyshevCheck {
                k,
                frequency,
                bound,
                holds: frequency <= bound,
            }
        })
        .collect();

    Ok(GaussianityDiagnostics {
        batch: b,
        n,
        mean,
        mean_standard_error: (m2 / bf).sqrt(),
        variance: m2,
        sigma2: report.sigma2,
        skewness,
        skewness_standard_error: (6.0 / bf).sqrt(),
        excess_kurtosis,
        kurtosis_standard_error: (24.0 / bf).sqrt(),
        mahalanobis_mean,
        mahalanobis_standard_error: (d2_var / bf).sqrt(),
        dimension: l + 1,
        chebyshev,
    })
}
