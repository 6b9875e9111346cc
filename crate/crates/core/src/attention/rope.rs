//! Rotary position encoding on adjacent coordinate pairs.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl Rope {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("RoPE needs an even head dimension, got {head_dim}")));
        }
        let inv_freq = (0..head_dim / 2)
            .map(|k| base.powf(-2.0 * k as f64 / head_dim as f64))
            .collect();
        Ok(Rope { head_dim, inv_freq })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.inv_freq
    }

    pub fn rotate(&self, v: &mut [f64], pos: usize) {
        for (k, &f) in self.inv_freq.iter().enumerate() {
            let (s, c) = (pos as f64 * f).sin_cos();
            rotate_pair(v, k, c, s);
        }
    }

    pub fn table(&self, positions: usize) -> RopeTable {
        let half = self.head_dim / 2;
        let mut cos = Vec::with_capacity(positions * half);
        let mut sin = Vec::with_capacity(positions * half);
        for p in 0..positions {
            for &f in &self.inv_freq {
                let (s, c) = (p as f64 * f).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        RopeTable { half, cos, sin }
    }
}

#[inline]
fn rotate_pair(v: &mut [f64], k: usize, c: f64, s: f64) {
    let (x, y) = (v[2 * k], v[2 * k + 1]);
    v[2 * k] = x * c - y * s;
    v[2 * k + 1] = x * s + y * c;
}

/// Precomputed cos/sin per position.
#[derive(Clone, Debug)]
pub struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn positions(&self) -> usize {
        self.cos.len() / self.half
    }

    #[inline]
    pub fn rotate(&self, v: &mut [f64], pos: usize) {
        let base = pos * self.half;
        for k in 0..self.half {
            rotate_pair(v, k, self.cos[base + k], self.sin[base + k]);
        }
    }

    /// Transpose rotation, used to pull gradients back through [`rotate`](Self::rotate).
    #[inline]
    pub fn rotate_back(&self, v: &mut [f64], pos: usize) {
        let base = pos * self.half;
        for k in 0..self.half {
            rotate_pair(v, k, self.cos[base + k], -self.sin[base + k]);
        }
    }
}

/// Rotate each `d`-vector by its position.
pub fn rope_rotate(vectors: &[Vec<f64>], positions: &[usize], base: f64) -> Result<Vec<Vec<f64>>> {
    if vectors.len() != positions.len() {
        return Err(Error::shape("one position per vector"));
    }
    let d = vectors.first().map_or(2, Vec::len);
    let rope = Rope::new(d, base)?;
    Ok(vectors
        .iter()
        .zip(positions)
        .map(|(v, &p)| {
            let mut r = v.clone();
            rope.rotate(&mut r, p);
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::dot;

    #[test]
    fn position_zero_is_identity() {
        let v = vec![0.3, -1.2, 2.0, 0.7];
        assert_eq!(rope_rotate(std::slice::from_ref(&v), &[0], 10_000.0).unwrap()[0], v);
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(Rope::new(3, 10_000.0).is_err());
    }

    #[test]
    fn preserves_norm_and_relative_offset() {
        let rope = Rope::new(8, 10_000.0).unwrap();
        let q: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..8).map(|i| (i as f64 * 1.1).cos()).collect();
        let rot = |v: &[f64], p| {
            let mut r = v.to_vec();
            rope.rotate(&mut r, p);
            r
        };
        let n0 = dot(&q, &q);
        assert!((dot(&rot(&q, 123), &rot(&q, 123)) - n0).abs() < 1e-9);
        let a = dot(&rot(&q, 5), &rot(&k, 3));
        let b = dot(&rot(&q, 9), &rot(&k, 7));
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn table_matches_direct_and_inverts() {
        let rope = Rope::new(4, 10_000.0).unwrap();
        let tab = rope.table(50);
        let v = vec![1.0, 2.0, -0.5, 0.25];
        let mut a = v.clone();
        let mut b = v.clone();
        rope.rotate(&mut a, 37);
        tab.rotate(&mut b, 37);
        assert_eq!(a, b);
        tab.rotate_back(&mut b, 37);
        for (x, y) in b.iter().zip(&v) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
