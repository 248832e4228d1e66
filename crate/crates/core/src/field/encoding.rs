//! Frequency positional encoding with its exact Jacobian.

use crate::scalar::{Real, V3};

/// `γ(x) = [x, sin(2⁰x), cos(2⁰x), …, sin(2^{L-1}x), cos(2^{L-1}x)]`, blocks of
/// three coordinates per function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub octaves: usize,
}

impl Encoding {
    pub fn new(octaves: usize) -> Self {
        Encoding { octaves }
    }

    pub fn dim(&self) -> usize {
        3 + 6 * self.octaves
    }

    /// Writes `γ(x)` into `out[..dim]`.
    pub fn encode<T: Real>(&self, x: V3<T>, out: &mut [T]) {
        out[..3].copy_from_slice(&x);
        let mut freq = T::one();
        let two = T::lit(2.0);
        for k in 0..self.octaves {
            let base = 3 + 6 * k;
            for c in 0..3 {
                let (s, co) = (x[c] * freq).sin_cos();
                out[base + c] = s;
                out[base + 3 + c] = co;
            }
            freq *= two;
        }
    }

    /// Writes `∂γ/∂x_axis` into `out[..dim]`.
    pub fn encode_tangent<T: Real>(&self, x: V3<T>, axis: usize, out: &mut [T]) {
        out[..self.dim()].fill(T::zero());
        out[axis] = T::one();
        let mut freq = T::one();
        let two = T::lit(2.0);
        for k in 0..self.octaves {
            let base = 3 + 6 * k;
            let (s, co) = (x[axis] * freq).sin_cos();
            out[base + axis] = freq * co;
            out[base + 3 + axis] = -freq * s;
            freq *= two;
        }
    }
}
