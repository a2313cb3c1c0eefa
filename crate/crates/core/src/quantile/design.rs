//! Taylor design construction and kernel weights for local polynomial fits.

use serde::{Deserialize, Serialize};

/// The family of multi-indices `u` with total degree `[u] <= k` in `p` variables.
///
/// Ordering: the zero index first, then the `p` first-order indices in
/// coordinate order, then each higher degree in turn. Within a degree the
/// indices are listed in descending lexicographic order, so for `p = 2,
/// k = 2` the list is `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    p: usize,
    k: usize,
    indices: Vec<Vec<u32>>,
}

impl MultiIndexSet {
    pub fn new(p: usize, k: usize) -> Self {
        assert!(p >= 1, "ambient dimension must be positive");
        let mut indices = Vec::new();
        for degree in 0..=k {
            let mut current = vec![0u32; p];
            push_compositions(degree as u32, 0, &mut current, &mut indices);
        }
        Self { p, k, indices }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn order(&self) -> usize {
        self.k
    }

    /// `s(A)`, the number of coefficients in a local fit.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Positions of the first-order indices, in coordinate order.
    pub fn first_order_positions(&self) -> std::ops::Range<usize> {
        if self.k == 0 {
            1..1
        } else {
            1..1 + self.p
        }
    }

    /// Evaluates `h^{-[u]} d^u` for every index into `out`.
    pub fn design_into(&self, displacement: &[f64], h: f64, out: &mut [f64]) {
        debug_assert_eq!(displacement.len(), self.p);
        debug_assert_eq!(out.len(), self.indices.len());
        out[0] = 1.0;
        if self.k == 0 {
            return;
        }
        let inv_h = 1.0 / h;
        for (slot, d) in out[1..=self.p].iter_mut().zip(displacement) {
            *slot = d * inv_h;
        }
        for (slot, u) in out.iter_mut().zip(&self.indices).skip(1 + self.p) {
            let mut v = 1.0;
            for (&e, d) in u.iter().zip(displacement) {
                if e > 0 {
                    v *= (d * inv_h).powi(e as i32);
                }
            }
            *slot = v;
        }
    }
}

/// Appends every composition of `remaining` into the slots `pos..` of `current`,
/// larger leading parts first.
fn push_compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let p = current.len();
    if pos == p - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

pub fn build_multi_index_set(p: usize, k: usize) -> MultiIndexSet {
    MultiIndexSet::new(p, k)
}

/// The design vector `(h^{-[u]} d^u)_{u in A}`.
pub fn design_vector(displacement: &[f64], h: f64, set: &MultiIndexSet) -> Vec<f64> {
    let mut out = vec![0.0; set.len()];
    set.design_into(displacement, h, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Density of the uniform law on `[-1, 1]`.
    Uniform,
    /// `0.75 (1 - u^2)` on `[-1, 1]`.
    #[default]
    Epanechnikov,
}

/// A univariate kernel applied to the sup-norm of a scaled displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
}

impl KernelSpec {
    pub const UNIFORM: KernelSpec = KernelSpec { kind: KernelKind::Uniform };
    pub const EPANECHNIKOV: KernelSpec = KernelSpec { kind: KernelKind::Epanechnikov };

    /// `K(u)` for `u >= 0`.
    pub fn eval(&self, u: f64) -> f64 {
        let u = u.abs();
        match self.kind {
            KernelKind::Uniform => {
                if u <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            KernelKind::Epanechnikov => {
                if u < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

/// `K(distance / h) / h`.
pub fn kernel_weight(distance: f64, h: f64, spec: KernelSpec) -> f64 {
    spec.eval(distance / h) / h
}

/// Sup-norm of `a - b`.
pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
