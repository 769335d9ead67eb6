//! Row-major nested-array (de)serialization for 2×2 matrices, so scenario
//! files read `[[a, b], [c, d]]`.

use nalgebra::Matrix2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub fn from_rows(r: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

pub mod mat2 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Matrix2<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix2<f64>, D::Error> {
        Ok(from_rows(<[[f64; 2]; 2]>::deserialize(d)?))
    }
}

pub mod vec_mat2 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &[Matrix2<f64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix2<f64>>, D::Error> {
        Ok(Vec::<[[f64; 2]; 2]>::deserialize(d)?
            .into_iter()
            .map(from_rows)
            .collect())
    }
}
