#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use seqmetro::instrument::{build_instrument, Instrument, Measurement, Outcome};
use seqmetro::linop::{CMatrix, Operator, Superoperator};

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Isometry `C^d -> C^{d k}` from the QR factor of a complex Gaussian matrix,
/// cut into `k` blocks of `d x d`.
pub fn random_isometry_blocks<R: Rng>(rng: &mut R, d: usize, k: usize) -> Vec<CMatrix> {
    let q = gaussian_matrix(rng, d * k, d).qr().q();
    (0..k).map(|i| q.rows(i * d, d).into_owned()).collect()
}

pub fn random_channel<R: Rng>(rng: &mut R, d: usize, k: usize) -> Superoperator {
    let kraus: Vec<Operator> = random_isometry_blocks(rng, d, k)
        .into_iter()
        .map(|m| Operator::new(m).unwrap())
        .collect();
    Superoperator::from_kraus(&kraus).unwrap()
}

/// Measurement with `m` outcomes (one Kraus operator each) and distinct values.
pub fn random_measurement<R: Rng>(rng: &mut R, d: usize, m: usize) -> Measurement {
    let blocks = random_isometry_blocks(rng, d, m);
    let outcomes = blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let value = i as f64 - (m as f64 - 1.0) / 2.0 + rng.random_range(-0.2..0.2);
            Outcome::new(value, vec![Operator::new(b).unwrap()])
        })
        .collect();
    Measurement::new(outcomes).unwrap()
}

/// `(1-g) Λ_A + g Λ_B` composed after a random measurement.
pub fn random_family<R: Rng>(rng: &mut R, d: usize) -> (Measurement, Superoperator, Superoperator) {
    let m = rng.random_range(2..=3);
    let meas = random_measurement(rng, d, m);
    let (ka, kb) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let a = random_channel(rng, d, ka);
    let b = random_channel(rng, d, kb);
    (meas, a, b)
}

pub fn family_instrument(meas: &Measurement, a: &Superoperator, b: &Superoperator, g: f64) -> Instrument {
    let mix = Superoperator::from_matrix(a.dim(), a.matrix().scale(1.0 - g) + b.matrix().scale(g)).unwrap();
    build_instrument(meas, &mix).unwrap()
}

pub fn random_instrument<R: Rng>(rng: &mut R, d: usize) -> Instrument {
    let (meas, a, b) = random_family(rng, d);
    family_instrument(&meas, &a, &b, rng.random_range(0.1..0.9))
}
