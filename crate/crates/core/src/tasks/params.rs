use serde::{Deserialize, Serialize};

/// Shape of one parameter layer. Layer-wise rules (LARS, LAMB) compute their
/// trust ratio per entry of a task's layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, dims: &[usize]) -> Self {
        Self {
            name: name.into(),
            dims: dims.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model parameters, one flat row-major buffer per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layers: Vec<Vec<f64>>,
}

impl ParamVector {
    pub fn zeros(layout: &[LayerShape]) -> Self {
        Self {
            layers: layout.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    pub fn filled(layout: &[LayerShape], value: f64) -> Self {
        Self {
            layers: layout.iter().map(|s| vec![value; s.len()]).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Vec<f64>>) -> Self {
        Self { layers }
    }

    /// Single-layer convenience constructor.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            layers: vec![values],
        }
    }

    pub fn matches(&self, layout: &[LayerShape]) -> bool {
        self.layers.len() == layout.len()
            && self
                .layers
                .iter()
                .zip(layout)
                .all(|(l, s)| l.len() == s.len())
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flatten()
    }

    /// Flat copy of all coordinates, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Euclidean norm of each layer.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l2_norm(l)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Returns the coordinate addressed by a flat index.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            if idx < layer.len() {
                return layer[idx];
            }
            idx -= layer.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            if idx < layer.len() {
                layer[idx] = value;
                return;
            }
            idx -= layer.len();
        }
        panic!("flat index out of range")
    }

    /// Elementwise combination `self = f(self, other)`.
    pub fn zip_apply(&mut self, other: &ParamVector, mut f: impl FnMut(f64, f64) -> f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = f(*a, *b);
        }
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
