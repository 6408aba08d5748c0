use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of `{0, 1}` pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidField(format!("empty grid {width}x{height}")));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidField(format!(
                "{} bits for a {width}x{height} grid",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidField("mask bits must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_uniform(&self) -> bool {
        let c = self.count();
        c == 0 || c == self.bits.len()
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn combine(&self, other: &Self, f: impl Fn(u8, u8) -> u8) -> Result<Self> {
        self.check_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a | b)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a & (1 - b))
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    /// Count of pixels where exactly one of the masks is set.
    pub fn symmetric_difference(&self, other: &Self) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Number of 4-connected foreground components.
    pub fn connected_components(&self) -> usize {
        let (w, h) = self.dims();
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut count = 0;
        for start in 0..w * h {
            if self.bits[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if self.bits[j] == 1 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_bits() {
        assert!(BinaryMask::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(BinaryMask::new(2, 2, vec![0, 1, 1]).is_err());
    }

    #[test]
    fn components_are_four_connected() {
        // diagonal neighbours do not join
        let m = BinaryMask::new(3, 3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(m.connected_components(), 3);
        let m = BinaryMask::new(3, 3, vec![1, 1, 0, 0, 1, 0, 0, 1, 1]).unwrap();
        assert_eq!(m.connected_components(), 1);
        assert_eq!(BinaryMask::empty(4, 4).connected_components(), 0);
    }

    #[test]
    fn set_algebra() {
        let a = BinaryMask::from_fn(4, 1, |x, _| x < 2);
        let b = BinaryMask::from_fn(4, 1, |x, _| x >= 1);
        assert_eq!(a.and(&b).unwrap().count(), 1);
        assert_eq!(a.or(&b).unwrap().count(), 4);
        assert_eq!(a.and_not(&b).unwrap().bits(), &[1, 0, 0, 0]);
        assert_eq!(a.symmetric_difference(&b).unwrap(), 3);
        assert!(a.and(&b).unwrap().is_subset_of(&a));
    }
}
