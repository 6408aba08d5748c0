use crate::nn::tensor::Tensor;

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = f(*v);
            }
        }
    }

    /// Elementwise `self += other`, matching entries by position.
    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_layout(other));
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Flat view of scalar `index` across all tensors.
    pub fn scalar(&self, mut index: usize) -> f64 {
        for (_, t) in &self.entries {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn scalar_mut(&mut self, mut index: usize) -> &mut f64 {
        for (_, t) in &mut self.entries {
            if index < t.len() {
                return &mut t.data_mut()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// Entries in reversed registration order (for order-invariance checks).
    pub fn reversed(&self) -> Self {
        Self {
            entries: self.entries.iter().rev().cloned().collect(),
        }
    }
}
