use ndarray::{ArrayViewD, ArrayViewMutD};
use sha2::{Digest, Sha256};

/// A named collection of parameter tensors, visited in a fixed order.
///
/// Optimizers, checkpoints and gradient checks all rely on the visiting order
/// being identical for a parameter set and its gradient.
pub trait ParamSet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>));

    fn zero(&mut self) {
        self.visit_mut(&mut |_, mut t| t.fill(0.0));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// `(name, shape)` of every tensor.
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.shape().to_vec())));
        out
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |name, t| {
            h.update(name.as_bytes());
            for &dim in t.shape() {
                h.update((dim as u64).to_le_bytes());
            }
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, t| s += t.iter().map(|v| v * v).sum::<f64>());
        s
    }

    /// Value at a flat coordinate across all tensors in visiting order.
    fn get_flat(&self, index: usize) -> f64 {
        let mut offset = 0;
        let mut found = None;
        self.visit(&mut |_, t| {
            if found.is_none() && index < offset + t.len() {
                found = t.iter().nth(index - offset).copied();
            }
            offset += t.len();
        });
        found.expect("flat index in range")
    }

    fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = 0;
        self.visit_mut(&mut |_, mut t| {
            let n = t.len();
            if index >= offset && index < offset + n {
                *t.iter_mut().nth(index - offset).unwrap() = value;
            }
            offset += n;
        });
    }

    /// Name of the tensor holding a flat coordinate.
    fn flat_owner(&self, index: usize) -> String {
        let mut offset = 0;
        let mut owner = String::new();
        self.visit(&mut |name, t| {
            if owner.is_empty() && index < offset + t.len() {
                owner = name.to_string();
            }
            offset += t.len();
        });
        owner
    }

    /// Adds `other` (same layout) into `self`.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut theirs = Vec::new();
        other.visit(&mut |_, t| theirs.push(t));
        let mut i = 0;
        self.visit_mut(&mut |_, mut t| {
            t += &theirs[i];
            i += 1;
        });
    }
}
