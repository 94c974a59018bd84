use crate::linalg::DenseMatrix;

use super::NetError;

/// Hidden state of a looped network: `d` features for each of `len` tokens.
///
/// Storage is token-major: token `c` occupies `[c·d, (c+1)·d)` of the flat
/// buffer. Every flattened Jacobian in the crate uses this ordering.
#[derive(Clone, PartialEq)]
pub struct StateMatrix {
    d: usize,
    len: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(d: usize, len: usize) -> Self {
        assert!(d > 0 && len > 0, "state dimensions must be positive");
        Self {
            d,
            len,
            data: vec![0.0; d * len],
        }
    }

    pub fn filled(d: usize, len: usize, value: f64) -> Self {
        let mut s = Self::zeros(d, len);
        s.data.fill(value);
        s
    }

    pub fn from_flat(d: usize, len: usize, data: Vec<f64>) -> Result<Self, NetError> {
        if d == 0 || len == 0 || data.len() != d * len {
            return Err(NetError::Shape(format!(
                "state {d}x{len} needs {} entries, got {}",
                d * len,
                data.len()
            )));
        }
        Ok(Self { d, len, data })
    }

    /// Builds from a d×L matrix whose columns are tokens.
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        let (d, len) = m.shape();
        let mut s = Self::zeros(d, len);
        for c in 0..len {
            for i in 0..d {
                s.data[c * d + i] = m[(i, c)];
            }
        }
        s
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.d, self.len, |i, c| self.data[c * self.d + i])
    }

    pub fn random(d: usize, len: usize, std: f64, rng: &mut crate::linalg::Rng) -> Self {
        Self {
            d,
            len,
            data: rng.normal_vec(d * len, std),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flattened dimension `d·L`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d, self.len)
    }

    pub fn token(&self, c: usize) -> &[f64] {
        &self.data[c * self.d..(c + 1) * self.d]
    }

    pub fn token_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.d..(c + 1) * self.d]
    }

    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    fn check_shape(&self, other: &Self) -> Result<(), NetError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(NetError::Shape(format!(
                "state shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, NetError> {
        self.check_shape(other)?;
        let mut out = self.clone();
        out.add_assign(other);
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NetError> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(out)
    }

    /// Panics on shape mismatch; internal hot-path helper.
    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl std::fmt::Debug for StateMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateMatrix")
            .field("d", &self.d)
            .field("len", &self.len)
            .field("data", &self.data)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_roundtrip_is_token_major() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let s = StateMatrix::from_matrix(&m);
        assert_eq!(s.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(s.token(1), &[2.0, 5.0]);
        assert_eq!(s.to_matrix(), m);
    }
}
