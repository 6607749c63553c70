use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm};

/// Unit-L2-norm embedding vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalises `raw`. Zero (or non-finite) norm is a numeric error.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        let norm = l2_norm(raw);
        if !norm.is_finite() || norm <= f64::MIN_POSITIVE {
            return Err(Error::Numeric(format!(
                "cannot normalise vector with norm {norm}"
            )));
        }
        Ok(Embedding(raw.iter().map(|v| v / norm).collect()))
    }

    /// Wraps values that are already unit norm (within 1e-6), keeping their exact bits.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("embedding norm {norm} is not 1")));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Gradient of `u / |u|` w.r.t. `u`, given the normalised output `z`,
/// the pre-normalisation norm and the upstream gradient `dz`.
pub fn normalize_backward(z: &[f64], norm: f64, dz: &[f64]) -> Vec<f64> {
    let proj = dot(z, dz);
    z.iter().zip(dz).map(|(zi, gi)| (gi - zi * proj) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vector_is_a_numeric_error() {
        assert!(matches!(
            Embedding::normalize(&[0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let u = [0.3, -1.2, 0.7];
        let dz = [0.5, 0.1, -0.4];
        let f = |u: &[f64]| -> f64 { dot(Embedding::normalize(u).unwrap().as_slice(), &dz) };
        let z = Embedding::normalize(&u).unwrap();
        let g = normalize_backward(z.as_slice(), l2_norm(&u), &dz);
        for i in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
