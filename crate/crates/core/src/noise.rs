//! Procedural value noise for synthetic textures.

use crate::seed::splitmix as hash;

/// Lattice value noise with smooth trilinear interpolation.
#[derive(Clone, Copy, Debug)]
pub struct ValueNoise {
    seed: u64,
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        ValueNoise { seed }
    }

    fn lattice(&self, x: i64, y: i64, z: i64) -> f64 {
        let h = hash(
            self.seed
                ^ hash((x as u64).wrapping_mul(0x1f1f_1f1f)
                    ^ hash((y as u64).wrapping_mul(0x3b3b_3b3b) ^ hash(z as u64))),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Single octave in `[0, 1]`.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let f = p.map(f64::floor);
        let i = f.map(|v| v as i64);
        let t = [smooth(p[0] - f[0]), smooth(p[1] - f[1]), smooth(p[2] - f[2])];
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                        * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                        * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                    acc += w * self.lattice(i[0] + dx, i[1] + dy, i[2] + dz);
                }
            }
        }
        acc
    }

    /// Multi-octave sum normalized back into `[0, 1]`.
    pub fn fbm(&self, p: [f64; 3], octaves: usize) -> f64 {
        let mut amp = 1.0;
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut freq = 1.0;
        for o in 0..octaves {
            let shifted = ValueNoise::new(self.seed.wrapping_add(o as u64 * 7919));
            total += amp * shifted.sample(p.map(|v| v * freq));
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        total / norm
    }
}
