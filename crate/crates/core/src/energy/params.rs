//! Named, shaped parameter arrays stored in one flat buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub flat: Vec<f64>,
    pub entries: Vec<ParamEntry>,
}

impl Parameters {
    pub fn empty() -> Self {
        Parameters {
            flat: Vec::new(),
            entries: Vec::new(),
        }
    }

    /// Reserves a zero-filled array and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let offset = self.flat.len();
        let len: usize = shape.iter().product();
        self.flat.resize(offset + len, 0.0);
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            offset,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entry(name)
            .map(|e| &self.flat[e.offset..e.offset + e.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.entry(name)?.clone();
        Some(&mut self.flat[e.offset..e.offset + e.len()])
    }

    pub fn same_layout(&self, other: &Parameters) -> bool {
        self.entries == other.entries && self.flat.len() == other.flat.len()
    }

    /// Splits a flat gradient buffer into `(name, values)` pairs.
    pub fn named<'a>(&'a self, flat: &'a [f64]) -> Vec<(&'a str, &'a [f64])> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), &flat[e.offset..e.offset + e.len()]))
            .collect()
    }

    pub fn check_layout(&self, other: &Parameters) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }
}

/// Exponential moving average: `ema <- decay * ema + (1 - decay) * model`.
pub fn ema_update(ema: &mut Parameters, model: &Parameters, decay: f64) -> Result<()> {
    ema.check_layout(model)?;
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::config("training.ema_decay", "must lie in [0, 1]"));
    }
    for (e, m) in ema.flat.iter_mut().zip(&model.flat) {
        *e = decay * *e + (1.0 - decay) * m;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(a: f64, b: f64) -> Parameters {
        let mut p = Parameters::empty();
        let o = p.push("w", vec![2]);
        p.flat[o] = a;
        p.flat[o + 1] = b;
        p
    }

    #[test]
    fn ema_decay_one_keeps_ema() {
        let mut e = two(1.0, 2.0);
        ema_update(&mut e, &two(5.0, 5.0), 1.0).unwrap();
        assert_eq!(e.flat, vec![1.0, 2.0]);
    }

    #[test]
    fn ema_decay_zero_copies_model() {
        let mut e = two(1.0, 2.0);
        ema_update(&mut e, &two(5.0, -5.0), 0.0).unwrap();
        assert_eq!(e.flat, vec![5.0, -5.0]);
    }

    #[test]
    fn ema_geometric_gap() {
        // gap after k steps = decay^k * initial gap; 0.999^1000 = exp(1000 ln 0.999)
        let mut e = two(0.0, 0.0);
        let target = two(1.0, 1.0);
        for _ in 0..1000 {
            ema_update(&mut e, &target, 0.999).unwrap();
        }
        let expected = (1000.0 * 0.999f64.ln()).exp();
        assert!((expected - 0.36770).abs() < 1e-4);
        assert!(((1.0 - e.flat[0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn ema_shape_mismatch() {
        let mut e = two(0.0, 0.0);
        let mut other = Parameters::empty();
        other.push("w", vec![3]);
        assert!(ema_update(&mut e, &other, 0.5).is_err());
    }
}
