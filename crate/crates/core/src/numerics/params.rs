use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient slot and Adadelta running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Running average of squared gradients, E[g²].
    pub mean_sq_grad: Tensor,
    /// Running average of squared updates, E[Δx²].
    pub mean_sq_delta: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.clone(),
            grad: Tensor::zeros(&shape),
            mean_sq_grad: Tensor::zeros(&shape),
            mean_sq_delta: Tensor::zeros(&shape),
            value,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a gradient set produced by [`super::Graph::backward`].
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }
}

/// Per-parameter gradients from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub(crate) fn ensure_len(&mut self, num_params: usize) {
        if self.slots.len() < num_params {
            self.slots.resize(num_params, None);
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: &Gradients) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(theirs) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                    None => *mine = Some(theirs.clone()),
                }
            }
        }
    }
}

/// Uniform Glorot initialization in ±sqrt(6 / (fan_in + fan_out)).
///
/// For a matrix of shape `[rows, cols]`, `fan_out = rows` and `fan_in = cols`.
/// A vector of length `n` uses `fan_in = n`, `fan_out = 1`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument(
            "glorot_uniform needs at least one dimension".into(),
        ));
    }
    let (fan_in, fan_out) = match shape {
        [n] => (*n, 1),
        [rows, rest @ ..] => (rest.iter().product(), *rows),
        [] => unreachable!(),
    };
    let bound = glorot_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { rho: 0.95, eps: 1e-6 }
    }
}

/// One Adadelta update over every parameter, using the accumulated grads.
pub fn adadelta_step(store: &mut ParameterStore, cfg: AdadeltaConfig) {
    let AdadeltaConfig { rho, eps } = cfg;
    for p in &mut store.params {
        let values = p.value.data_mut();
        let grads = p.grad.data();
        let eg2 = p.mean_sq_grad.data_mut();
        let edx2 = p.mean_sq_delta.data_mut();
        for i in 0..values.len() {
            let g = grads[i];
            eg2[i] = rho * eg2[i] + (1.0 - rho) * g * g;
            let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * g;
            edx2[i] = rho * edx2[i] + (1.0 - rho) * dx * dx;
            values[i] += dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: Vec<f64>, grads: Vec<f64>) -> (ParameterStore, ParamId) {
        let mut store = ParameterStore::new();
        let id = store.add("p", Tensor::vector(values)).unwrap();
        store.get_mut(id).grad = Tensor::vector(grads);
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = store_with(vec![0.3, -1.0, 2.0], vec![0.0; 3]);
        adadelta_step(&mut store, AdadeltaConfig::default());
        assert_eq!(store.value(id).data(), &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let (mut store, id) = store_with(vec![0.0], vec![1.0]);
        adadelta_step(&mut store, AdadeltaConfig::default());
        // -sqrt(1e-6) / sqrt(0.05 + 1e-6)
        let dx = store.value(id).data()[0];
        assert!((dx - (-0.004472)).abs() < 5e-7, "{dx}");
        let exact = -(1e-6f64).sqrt() / ((1.0 - 0.95f64) + 1e-6).sqrt();
        assert_eq!(dx, exact);
    }

    #[test]
    fn identical_state_updates_identically() {
        let (mut store, id) = store_with(vec![1.5, 1.5], vec![0.7, 0.7]);
        for _ in 0..5 {
            adadelta_step(&mut store, AdadeltaConfig::default());
        }
        let v = store.value(id).data();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store.add("w", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            store.add("w", Tensor::scalar(1.0)),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(&[4, 4], &mut rng).unwrap();
        let bound = (6.0f64 / 8.0).sqrt();
        assert!((bound - 0.866).abs() < 1e-3);
        assert!(t.data().iter().all(|v| v.abs() <= bound));

        let a = glorot_uniform(&[5, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = glorot_uniform(&[5, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_empirical_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = glorot_uniform(&[100, 100], &mut rng).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }
}
