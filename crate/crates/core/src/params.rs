//! Named parameter tensors, stored as one `<name>.f32` file per tensor.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::error::{Result, StagError};
use crate::tensor_io;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Mat> {
        self.get(name)
            .ok_or_else(|| StagError::invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    pub fn shapes(&self) -> BTreeMap<String, [usize; 2]> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), [v.nrows(), v.ncols()]))
            .collect()
    }

    /// Records every tensor on `tape`, trainable when `trainable` is set.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        for (name, m) in &self.tensors {
            tensor_io::write_matrix(&dir.join(format!("{name}.f32")), m)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, shapes: &BTreeMap<String, [usize; 2]>) -> Result<Self> {
        let mut out = ParamSet::new();
        for (name, [r, c]) in shapes {
            out.insert(
                name.clone(),
                tensor_io::read_matrix(&dir.join(format!("{name}.f32")), *r, *c)?,
            );
        }
        Ok(out)
    }
}

/// Glorot-uniform initialization.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Tape handles for a [`ParamSet`].
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not recorded"))
    }

    /// Gradient for every trainable tensor reached by the backward pass;
    /// tensors the loss does not touch get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &mut Gradients) -> Result<BTreeMap<String, Mat>> {
        let mut out = BTreeMap::new();
        for (name, &var) in &self.vars {
            if !tape.requires_grad(var) {
                continue;
            }
            let g = grads.take(var).unwrap_or_else(|| Mat::zeros(tape.value(var).dim()));
            if g.iter().any(|x| !x.is_finite()) {
                return Err(StagError::NonFinite(format!("gradient of {name}")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}
