//! Named parameter storage shared by every model in the crate.
//!
//! A [`ParamSet`] is an ordered list of `(name, Tensor)` entries. Order is
//! insertion order and is what serialization, optimizers and merging iterate
//! over, so two sets built the same way always line up entry by entry.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Dense real array with an explicit shape, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Invalid(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_matrix(m: Array2<f64>) -> Self {
        let shape = vec![m.nrows(), m.ncols()];
        let data = if m.is_standard_layout() {
            m.into_raw_vec_and_offset().0
        } else {
            m.iter().copied().collect()
        };
        Self { shape, data }
    }

    pub fn from_vector(v: Array1<f64>) -> Self {
        let shape = vec![v.len()];
        Self {
            shape,
            data: v.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_matrix(&self) -> Option<ArrayView2<'_, f64>> {
        match self.shape.as_slice() {
            [r, c] => ArrayView2::from_shape((*r, *c), &self.data).ok(),
            _ => None,
        }
    }

    pub fn as_matrix_mut(&mut self) -> Option<ArrayViewMut2<'_, f64>> {
        match self.shape.as_slice() {
            [r, c] => ArrayViewMut2::from_shape((*r, *c), &mut self.data).ok(),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<ArrayView1<'_, f64>> {
        match self.shape.as_slice() {
            [_] => Some(ArrayView1::from(&self.data[..])),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordered map from parameter names to tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    /// Replaces an existing entry, keeping its position.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if self.entries[i].1.shape() != tensor.shape() {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: self.entries[i].1.shape().to_vec(),
                actual: tensor.shape().to_vec(),
            });
        }
        self.entries[i].1 = tensor;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.entries[i].1),
            None => None,
        }
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<ArrayView2<'_, f64>> {
        let t = self.require(name)?;
        if t.shape() != [rows, cols] {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: vec![rows, cols],
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.as_matrix().expect("rank checked"))
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<ArrayView1<'_, f64>> {
        let t = self.require(name)?;
        if t.shape() != [len] {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: vec![len],
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.as_vector().expect("rank checked"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names, same order, same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape().to_vec()))
                .expect("names unique in source");
        }
        out
    }

    /// Checks that `other` has identical names, order and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            let missing = self
                .names()
                .find(|n| !other.contains(n))
                .or_else(|| other.names().find(|n| !self.contains(n)))
                .unwrap_or("<order>");
            return Err(Error::Incompatible(format!(
                "entry counts differ ({} vs {}); first mismatch `{missing}`",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(Error::Incompatible(format!("name `{na}` vs `{nb}`")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::Incompatible(format!(
                    "`{na}` shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Applies `f(self_value, other_value)` elementwise in place.
    pub fn zip_apply(&mut self, other: &ParamSet, mut f: impl FnMut(f64, f64) -> f64) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, ta), (_, tb)) in self.entries.iter_mut().zip(other.entries.iter()) {
            for (a, b) in ta.data.iter_mut().zip(tb.data.iter()) {
                *a = f(*a, *b);
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) -> Result<()> {
        self.zip_apply(other, |a, b| a + factor * b)
    }

    /// Euclidean norm over every scalar.
    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product over every scalar (sets must be compatible).
    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .entries
            .iter()
            .zip(other.entries.iter())
            .flat_map(|((_, a), (_, b))| a.data.iter().zip(b.data.iter()))
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, t.clone()).expect("unique");
            }
        }
        out
    }

    /// Appends every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (n, t) in other.iter() {
            self.insert(format!("{prefix}{n}"), t.clone())?;
        }
        Ok(())
    }

    /// FNV-1a over names and the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (n, t) in self.iter() {
            feed(n.as_bytes());
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        p.insert("b", Tensor::new(vec![2], vec![5.0, 6.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        let err = p.insert("a", Tensor::zeros(vec![1])).unwrap_err();
        assert!(matches!(err, Error::DuplicateParam(n) if n == "a"));
    }

    #[test]
    fn iteration_follows_insertion_order() {
        let mut p = ParamSet::new();
        for n in ["z", "a", "m"] {
            p.insert(n, Tensor::zeros(vec![1])).unwrap();
        }
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["z", "a", "m"]);
    }

    #[test]
    fn compatibility_names_first_mismatch() {
        let a = sample();
        let mut b = ParamSet::new();
        b.insert("a", Tensor::zeros(vec![2, 2])).unwrap();
        b.insert("c", Tensor::zeros(vec![2])).unwrap();
        let err = a.check_compatible(&b).unwrap_err().to_string();
        assert!(err.contains("`b`") && err.contains("`c`"), "{err}");

        let mut c = ParamSet::new();
        c.insert("a", Tensor::zeros(vec![4])).unwrap();
        c.insert("b", Tensor::zeros(vec![2])).unwrap();
        assert!(a.check_compatible(&c).is_err());
    }

    #[test]
    fn matrix_view_checks_shape() {
        let p = sample();
        assert_eq!(p.matrix("a", 2, 2).unwrap()[[1, 0]], 3.0);
        assert!(matches!(p.matrix("a", 1, 4), Err(Error::Shape { .. })));
        assert!(matches!(p.matrix("q", 1, 1), Err(Error::MissingParam(_))));
    }

    #[test]
    fn checksum_sees_single_bit_flip() {
        let p = sample();
        let mut q = p.clone();
        let v = q.get_mut("b").unwrap().data_mut();
        v[1] = f64::from_bits(v[1].to_bits() ^ 1);
        assert_ne!(p.checksum(), q.checksum());
        assert_eq!(p.checksum(), sample().checksum());
    }
}
