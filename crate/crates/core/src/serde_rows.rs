//! Serializes real matrices as nested row arrays.

use nalgebra::DMatrix;
use serde::ser::{SerializeSeq, Serializer};

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.row_iter() {
        seq.serialize_element(&row.iter().cloned().collect::<Vec<f64>>())?;
    }
    seq.end()
}
