//! Structure-aware distillation: per-level affinity maps (pairwise cosine
//! similarity across spatial positions) compared by mean L1 difference.
//! Channel counts may differ between student and teacher; the affinity
//! removes the channel dependence.

use super::{real, sign, LossError, Real};
use crate::tensor::Tensor;

/// Single-image feature map, channel-major `c × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self, LossError> {
        if data.len() != c * h * w {
            return Err(LossError::InvalidParam(format!(
                "feature data length {} != {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(FeatureMap { c, h, w, data })
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        FeatureMap { c, h, w, data }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Channel vector at flat spatial position `p`.
    #[inline]
    fn vector(&self, p: usize) -> impl Iterator<Item = T> + '_ {
        let hw = self.h * self.w;
        (0..self.c).map(move |ch| self.data[ch * hw + p])
    }
}

impl FeatureMap<f32> {
    /// Views a `(1, C, H, W)` tensor as a feature map.
    pub fn from_tensor(t: &Tensor) -> Result<Self, LossError> {
        let [n, c, h, w] = t.shape();
        if n != 1 {
            return Err(LossError::BatchNotOne(n));
        }
        FeatureMap::new(c, h, w, t.data().to_vec())
    }
}

/// (H·W)×(H·W) matrix of pairwise cosine similarities. Symmetric with unit
/// diagonal for nonzero feature vectors; zero vectors produce a zero row
/// (their diagonal entry included).
#[derive(Debug, Clone)]
pub struct AffinityMap<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Real> AffinityMap<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> T {
        self.data[p * self.size + q]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// L2-normalizes each position's channel vector; zero vectors stay zero.
fn unit_vectors<T: Real>(f: &FeatureMap<T>) -> (Vec<T>, Vec<T>) {
    let hw = f.h * f.w;
    let mut units = vec![T::zero(); f.c * hw];
    let mut norms = vec![T::zero(); hw];
    for p in 0..hw {
        let n = f.vector(p).map(|v| v * v).sum::<T>().sqrt();
        norms[p] = n;
        if n > T::zero() {
            for (ch, v) in f.vector(p).enumerate() {
                units[ch * hw + p] = v / n;
            }
        }
    }
    (units, norms)
}

pub fn affinity_map<T: Real>(features: &FeatureMap<T>) -> AffinityMap<T> {
    let hw = features.h * features.w;
    let (units, _) = unit_vectors(features);
    let mut data = vec![T::zero(); hw * hw];
    for p in 0..hw {
        for q in 0..hw {
            let mut acc = T::zero();
            for ch in 0..features.c {
                acc = acc + units[ch * hw + p] * units[ch * hw + q];
            }
            data[p * hw + q] = acc;
        }
    }
    AffinityMap { size: hw, data }
}

/// Affinity of a `(1, C, H, W)` tensor.
pub fn affinity_from_tensor(t: &Tensor) -> Result<AffinityMap<f32>, LossError> {
    Ok(affinity_map(&FeatureMap::from_tensor(t)?))
}

/// Multi-level distillation loss: per level the affinity-map L1 difference
/// is normalized by H·W, then levels are summed. Returns the value and the
/// gradient w.r.t. each student feature buffer (same layout as the inputs).
pub fn distill_loss<T: Real>(
    student: &[FeatureMap<T>],
    teacher: &[FeatureMap<T>],
) -> Result<(T, Vec<Vec<T>>), LossError> {
    if student.len() != teacher.len() {
        return Err(LossError::LevelCountMismatch {
            student: student.len(),
            teacher: teacher.len(),
        });
    }
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(student.len());

    for (level, (s, t)) in student.iter().zip(teacher).enumerate() {
        if s.spatial() != t.spatial() {
            return Err(LossError::SpatialMismatch {
                level,
                student: s.spatial(),
                teacher: t.spatial(),
            });
        }
        let hw = s.h * s.w;
        let hw_t = real::<T>(hw as f64);
        let (units, norms) = unit_vectors(s);
        let a_t = affinity_map(t);

        // Level value and the sign matrix in one sweep.
        let mut signs = vec![T::zero(); hw * hw];
        let mut level_value = T::zero();
        for p in 0..hw {
            for q in 0..hw {
                let mut a_s = T::zero();
                for ch in 0..s.c {
                    a_s = a_s + units[ch * hw + p] * units[ch * hw + q];
                }
                let d = a_s - a_t.get(p, q);
                level_value = level_value + d.abs();
                signs[p * hw + q] = sign(d);
            }
        }
        value = value + level_value / hw_t;

        // dL/du_p = Σ_q (S_pq + S_qp)/HW · u_q, then back through the
        // normalization: dL/df_p = (dL/du_p − u_p·(u_p·dL/du_p)) / ‖f_p‖.
        let mut grad = vec![T::zero(); s.c * hw];
        for p in 0..hw {
            if norms[p] == T::zero() {
                continue;
            }
            let mut du = vec![T::zero(); s.c];
            for q in 0..hw {
                let coeff = (signs[p * hw + q] + signs[q * hw + p]) / hw_t;
                if coeff == T::zero() {
                    continue;
                }
                for (ch, du_ch) in du.iter_mut().enumerate() {
                    *du_ch = *du_ch + coeff * units[ch * hw + q];
                }
            }
            let mut u_dot_du = T::zero();
            for ch in 0..s.c {
                u_dot_du = u_dot_du + units[ch * hw + p] * du[ch];
            }
            for ch in 0..s.c {
                grad[ch * hw + p] = (du[ch] - units[ch * hw + p] * u_dot_du) / norms[p];
            }
        }
        grads.push(grad);
    }
    Ok((value, grads))
}
