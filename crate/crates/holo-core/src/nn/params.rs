//! Parameter storage, initialization, and gradient containers.

use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Element;
use super::NnError;
use crate::rng::Stream;

/// Parameter arrays for every layer plus the congruent RMSprop
/// mean-square cache and the optimizer step counter.
///
/// Array layout per layer kind:
/// - Conv2d: [weights (k*k*c_in*f), bias (f)]
/// - Dense: [weights (n_in*units), bias (units)]
/// - BatchNorm: [scale, shift, running_mean, running_var] (channels each)
/// - everything else: []
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    arrays: Vec<Vec<Vec<T>>>,
    cache: Vec<Vec<Vec<T>>>,
    step: u64,
}

/// Loss gradients, congruent with the store's arrays. BatchNorm running
/// statistics always carry zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub arrays: Vec<Vec<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            arrays: store
                .arrays
                .iter()
                .map(|layer| layer.iter().map(|a| vec![T::zero(); a.len()]).collect())
                .collect(),
        }
    }
}

fn array_shapes(net: &NetworkSpec) -> Result<Vec<Vec<usize>>, NnError> {
    let shapes = net.shapes()?;
    let mut prev = net.input_shape()?;
    let mut out = Vec::with_capacity(net.layers.len());
    for (index, layer) in net.layers.iter().enumerate() {
        let lens: Vec<usize> = match *layer {
            LayerSpec::Conv2d { filters, kernel } => {
                vec![kernel * kernel * prev.channels * filters, filters]
            }
            LayerSpec::Dense { units } => vec![prev.numel() * units, units],
            LayerSpec::BatchNorm { .. } => vec![prev.channels; 4],
            _ => vec![],
        };
        out.push(lens);
        prev = shapes[index];
    }
    Ok(out)
}

impl<T: Element> ParamStore<T> {
    /// All-zero parameters (BatchNorm scale/variance included); mostly
    /// for tests that need a blank slate.
    pub fn zeros(net: &NetworkSpec) -> Result<Self, NnError> {
        let arrays: Vec<Vec<Vec<T>>> = array_shapes(net)?
            .into_iter()
            .map(|layer| layer.into_iter().map(|len| vec![T::zero(); len]).collect())
            .collect();
        let cache = arrays
            .iter()
            .map(|layer| layer.iter().map(|a| vec![T::zero(); a.len()]).collect())
            .collect();
        Ok(ParamStore {
            arrays,
            cache,
            step: 0,
        })
    }

    /// Fan-scaled uniform init: weights uniform on
    /// (-sqrt(6/(fan_in+fan_out)), +sqrt(...)), biases zero, BatchNorm
    /// scale 1 / shift 0 / running mean 0 / running variance 1.
    /// Deterministic in the seed.
    pub fn init(net: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut store = Self::zeros(net)?;
        let mut prev = net.input_shape()?;
        let shapes = net.shapes()?;
        for (index, layer) in net.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2d { filters, kernel } => {
                    let fan_in = kernel * kernel * prev.channels;
                    let fan_out = kernel * kernel * filters;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut rng = Stream::substream(seed, &[index as u64]);
                    for w in store.arrays[index][0].iter_mut() {
                        *w = T::of(rng.next_symmetric(limit));
                    }
                }
                LayerSpec::Dense { units } => {
                    let fan_in = prev.numel();
                    let limit = (6.0 / (fan_in + units) as f64).sqrt();
                    let mut rng = Stream::substream(seed, &[index as u64]);
                    for w in store.arrays[index][0].iter_mut() {
                        *w = T::of(rng.next_symmetric(limit));
                    }
                }
                LayerSpec::BatchNorm { .. } => {
                    store.arrays[index][0].fill(T::one()); // scale
                    store.arrays[index][3].fill(T::one()); // running variance
                }
                _ => {}
            }
            prev = shapes[index];
        }
        Ok(store)
    }

    pub fn layer(&self, index: usize) -> &Vec<Vec<T>> {
        &self.arrays[index]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Vec<Vec<T>> {
        &mut self.arrays[index]
    }

    pub fn arrays(&self) -> &Vec<Vec<Vec<T>>> {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut Vec<Vec<Vec<T>>> {
        &mut self.arrays
    }

    pub fn cache(&self) -> &Vec<Vec<Vec<T>>> {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut Vec<Vec<Vec<T>>> {
        &mut self.cache
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Number of stored parameter scalars (optimizer cache excluded).
    pub fn scalar_count(&self) -> usize {
        self.arrays
            .iter()
            .map(|layer| layer.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    /// Rebuilds from raw parts, e.g. a checkpoint. Shapes of `arrays`
    /// and `cache` must be congruent.
    pub fn from_parts(
        arrays: Vec<Vec<Vec<T>>>,
        cache: Vec<Vec<Vec<T>>>,
        step: u64,
    ) -> Result<Self, NnError> {
        if arrays.len() != cache.len()
            || arrays
                .iter()
                .zip(&cache)
                .any(|(a, c)| a.len() != c.len() || a.iter().zip(c).any(|(x, y)| x.len() != y.len()))
        {
            return Err(NnError::StoreMismatch(
                "cache shape differs from parameter shape".to_string(),
            ));
        }
        Ok(ParamStore {
            arrays,
            cache,
            step,
        })
    }

    /// Checks congruence against a network spec.
    pub fn matches(&self, net: &NetworkSpec) -> Result<(), NnError> {
        let expected = array_shapes(net)?;
        if expected.len() != self.arrays.len() {
            return Err(NnError::StoreMismatch(format!(
                "store has {} layers, network {} ({})",
                self.arrays.len(),
                expected.len(),
                net.name
            )));
        }
        for (index, (lens, have)) in expected.iter().zip(&self.arrays).enumerate() {
            if lens.len() != have.len() || lens.iter().zip(have).any(|(l, a)| *l != a.len()) {
                return Err(NnError::StoreMismatch(format!(
                    "layer {index} array shapes differ from spec"
                )));
            }
        }
        Ok(())
    }
}
