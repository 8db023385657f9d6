//! Minimal differentiable building blocks. Layers keep no activation state;
//! callers hold whatever forward values the backward pass needs. Gradients
//! are accumulated into a structurally identical "gradient model".

mod conv;

pub use conv::{Conv1d, ConvTranspose1d, Padding};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A model whose trainable values can be enumerated as named flat blocks.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params("", &mut |_, p| out.extend_from_slice(p));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, model has {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_params_mut("", &mut |_, p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        self.visit_params_mut("", &mut |_, p| p.fill(value));
    }

    fn named_blocks(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name.to_string(), p.to_vec())));
        out
    }

    /// Replaces every block by name; names and sizes must match exactly.
    fn load_named_blocks(&mut self, blocks: &[(String, Vec<f64>)]) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        self.visit_params_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match blocks.get(idx) {
                Some((n, v)) if n == name && v.len() == p.len() => p.copy_from_slice(v),
                Some((n, v)) => {
                    err = Some(format!(
                        "block {idx}: expected {name} [{}], found {n} [{}]",
                        p.len(),
                        v.len()
                    ))
                }
                None => err = Some(format!("missing parameter block {name}")),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(Error::Checkpoint(e));
        }
        if idx != blocks.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing parameter blocks",
                blocks.len() - idx
            )));
        }
        Ok(())
    }

    /// SHA-256 over the bit patterns of all parameters, in visit order.
    fn param_digest(&self) -> String {
        let mut h = Sha256::new();
        self.visit_params("", &mut |name, p| {
            h.update(name.as_bytes());
            for v in p {
                h.update(v.to_bits().to_le_bytes());
            }
        });
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A zeroed copy of `model`, used as its gradient accumulator.
pub fn zeros_like<M: Parameterized + Clone>(model: &M) -> M {
    let mut g = model.clone();
    g.fill(0.0);
    g
}

pub(crate) fn fill_normal(values: &mut [f64], std: f64, rng: &mut impl Rng) {
    let dist = Normal::new(0.0, std).expect("finite std");
    values.iter_mut().for_each(|v| *v = dist.sample(rng));
}

/// `tanh` through a single `exp`; within a few ulps of `f64::tanh`.
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.005;
            assert!((super::tanh(x) - x.tanh()).abs() < 4e-16, "{x}");
        }
        assert_eq!(super::tanh(800.0), 1.0);
        assert_eq!(super::tanh(-800.0), -1.0);
    }
}
