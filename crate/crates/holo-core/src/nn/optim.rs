//! RMSprop with inverse-time learning-rate decay.

use super::params::{Gradients, ParamStore};
use super::tensor::Element;
use super::NnError;

/// One RMSprop update:
///
/// lr_t  = lr0 / (1 + decay * step_index)
/// cache <- rho * cache + (1 - rho) * g^2
/// theta <- theta - lr_t * g / (sqrt(cache) + epsilon)
///
/// `step_index` counts previously applied updates (0 for the first);
/// the store's own counter is advanced to `step_index + 1`.
pub fn rmsprop_step<T: Element>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    step_index: u64,
    lr0: f64,
    decay: f64,
    rho: f64,
    epsilon: f64,
) -> Result<(), NnError> {
    if grads.arrays.len() != store.arrays().len() {
        return Err(NnError::StoreMismatch(
            "gradient layer count differs from store".to_string(),
        ));
    }
    let lr = T::of(lr0 / (1.0 + decay * step_index as f64));
    let rho_t = T::of(rho);
    let one_minus_rho = T::of(1.0 - rho);
    let eps = T::of(epsilon);
    for (layer, glayer) in grads.arrays.iter().enumerate() {
        if glayer.len() != store.arrays()[layer].len() {
            return Err(NnError::StoreMismatch(format!(
                "layer {layer}: gradient array count differs from store"
            )));
        }
        for (array, g) in glayer.iter().enumerate() {
            if g.len() != store.arrays()[layer][array].len() {
                return Err(NnError::StoreMismatch(format!(
                    "layer {layer} array {array}: gradient length differs from store"
                )));
            }
            for i in 0..g.len() {
                let gi = g[i];
                let c = store.cache()[layer][array][i];
                let c_new = rho_t * c + one_minus_rho * gi * gi;
                store.cache_mut()[layer][array][i] = c_new;
                let theta = store.arrays()[layer][array][i];
                store.arrays_mut()[layer][array][i] = theta - lr * gi / (c_new.sqrt() + eps);
            }
        }
    }
    store.set_step(step_index + 1);
    Ok(())
}
