//! Training losses with their adjoints. Every loss is averaged over the `m`
//! pixels of the batch; the Eikonal term over all `n·m` sample points.

use crate::scalar::{norm3, Real};

/// A loss value together with its gradient w.r.t. the per-item input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm<T, G> {
    pub value: T,
    pub grad: Vec<G>,
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `(1/m) Σ_k ‖ĉ_k − I_k‖₁` with the L1 norm summed over channels.
pub fn loss_color<T: Real>(pred: &[[T; 3]], target: &[[T; 3]]) -> LossTerm<T, [T; 3]> {
    assert_eq!(pred.len(), target.len(), "color batch size mismatch");
    let m = pred.len();
    if m == 0 {
        return LossTerm { value: T::zero(), grad: Vec::new() };
    }
    let inv = T::one() / T::lit(m as f64);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(m);
    for (p, t) in pred.iter().zip(target) {
        let mut g = [T::zero(); 3];
        for c in 0..3 {
            let d = p[c] - t[c];
            value += d.abs();
            g[c] = sign(d) * inv;
        }
        grad.push(g);
    }
    LossTerm { value: value * inv, grad }
}

/// `(1/m) Σ_k Ω_k ‖n̂_k − N_k‖₁`. Masked pixels still count in `m`.
///
/// `pred` holds the raw accumulated normals already expressed in each
/// pixel's camera frame; `prior` the unit prior normals.
pub fn loss_prior<T: Real>(pred: &[[T; 3]], prior: &[[T; 3]], omega: &[T]) -> LossTerm<T, [T; 3]> {
    assert!(pred.len() == prior.len() && pred.len() == omega.len(), "prior batch size mismatch");
    let m = pred.len();
    if m == 0 {
        return LossTerm { value: T::zero(), grad: Vec::new() };
    }
    let inv = T::one() / T::lit(m as f64);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(m);
    for ((p, n), &w) in pred.iter().zip(prior).zip(omega) {
        let mut g = [T::zero(); 3];
        if w != T::zero() {
            for c in 0..3 {
                let d = p[c] - n[c];
                value += w * d.abs();
                g[c] = w * sign(d) * inv;
            }
        }
        grad.push(g);
    }
    LossTerm { value: value * inv, grad }
}

/// `mean (‖∇f‖ − 1)²` over the given spatial gradients.
pub fn loss_eikonal<T: Real>(grads: &[[T; 3]]) -> LossTerm<T, [T; 3]> {
    let count = grads.len();
    if count == 0 {
        return LossTerm { value: T::zero(), grad: Vec::new() };
    }
    let inv = T::one() / T::lit(count as f64);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(count);
    for g in grads {
        let len = norm3(*g);
        let r = len - T::one();
        value += r * r;
        // At ∇f = 0 the subgradient is taken as zero.
        let scale = if len > T::zero() { two * r * inv / len } else { T::zero() };
        grad.push(g.map(|v| v * scale));
    }
    LossTerm { value: value * inv, grad }
}

/// `λ_c L_c + λ_p L_p + λ_eik L_eik`, evaluated in the order it is logged.
pub fn total_loss(lambda: [f64; 3], color: f64, prior: f64, eik: f64) -> f64 {
    lambda[0] * color + lambda[1] * prior + lambda[2] * eik
}
