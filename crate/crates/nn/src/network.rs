//! Sequential network: layer stack with cached forward state for backprop.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{NnError, Result};
use crate::layers::{Init, Layer, LayerSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    layers: Vec<Layer<S>>,
    specs: Vec<LayerSpec>,
}

impl<S: Scalar> Network<S> {
    /// Builds the stack and initializes weights: He-uniform for layers whose
    /// next activation is a rectifier, `±1/sqrt(fan_in)` for output heads.
    pub fn build(specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let feeds_relu = specs[i + 1..]
                .iter()
                .find(|s| !matches!(s, LayerSpec::Dropout { .. }))
                .map(|s| matches!(s, LayerSpec::Relu))
                .unwrap_or(false);
            let init = if feeds_relu { Init::HeUniform } else { Init::Head };
            layers.push(Layer::build(spec, init, rng)?);
        }
        Ok(Self {
            layers,
            specs: specs.to_vec(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Inference pass: dropout is the identity and nothing is cached, so a
    /// frozen network can be shared read-only.
    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward_eval(&x)?;
            x.ensure_finite(&format!("layer{i} output"))?;
        }
        Ok(x)
    }

    /// Training pass: caches per-layer state for [`Self::backward`].
    pub fn forward_train(&mut self, input: &Tensor<S>, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward_train(&x, rng)?;
            x.ensure_finite(&format!("layer{i} output"))?;
        }
        Ok(x)
    }

    /// Backpropagates `loss_grad` through the cached forward state,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, loss_grad: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.backward_impl(loss_grad, true)?.expect("input gradient requested"))
    }

    /// [`Self::backward`] without materializing the gradient with respect to
    /// the network input (the first layer skips that computation).
    pub fn backward_no_input_grad(&mut self, loss_grad: &Tensor<S>) -> Result<()> {
        self.backward_impl(loss_grad, false)?;
        Ok(())
    }

    fn backward_impl(
        &mut self,
        loss_grad: &Tensor<S>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<S>>> {
        if !self.layers.iter().all(|l| l.has_cache()) {
            return Err(NnError::Usage(
                "backward requires a preceding train-mode forward".into(),
            ));
        }
        let mut g = Some(loss_grad.clone());
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let need = need_input_grad || i > 0;
            g = layer.backward(g.as_ref().expect("gradient flows"), need)?;
            if let Some(g) = &g {
                g.ensure_finite(&format!("layer{i} input gradient"))?;
            } else if need {
                return Err(NnError::Usage(format!(
                    "layer{i} dropped a required input gradient"
                )));
            }
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                p.weight_grad.fill(S::zero());
                p.bias_grad.fill(S::zero());
            }
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.param_count()).sum()
    }

    /// Named parameters in a stable order (`layer{i}.weight`, `layer{i}.bias`).
    pub fn param_entries(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(p) = layer.params() {
                out.push((format!("layer{i}.weight"), &p.weight));
                out.push((format!("layer{i}.bias"), &p.bias));
            }
        }
        out
    }

    pub fn param_entries_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some(p) = layer.params_mut() {
                out.push((format!("layer{i}.weight"), &mut p.weight));
                out.push((format!("layer{i}.bias"), &mut p.bias));
            }
        }
        out
    }

    /// `(parameter, gradient)` pairs in the same order as [`Self::param_entries`];
    /// the form an optimizer consumes.
    pub fn param_grad_pairs(&mut self) -> Vec<(&mut Tensor<S>, &Tensor<S>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                out.push((&mut p.weight, &p.weight_grad as &Tensor<S>));
                out.push((&mut p.bias, &p.bias_grad as &Tensor<S>));
            }
        }
        out
    }

    /// Copies all weights from `other`; shapes must agree.
    pub fn copy_weights_from(&mut self, other: &Self) -> Result<()> {
        if self.specs != other.specs {
            return Err(NnError::Usage("copy_weights_from across different specs".into()));
        }
        let src = other.param_entries();
        for ((_, dst), (_, s)) in self.param_entries_mut().into_iter().zip(src) {
            *dst = s.clone();
        }
        Ok(())
    }

    /// Finite-difference verification of [`Self::backward`].
    ///
    /// Checks up to `max_coords` randomly sampled parameter coordinates (all of
    /// them when the network is small) against central differences of a fixed
    /// weighted-sum loss, and returns the largest relative error
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    ///
    /// Every forward pass reseeds dropout identically, so the function being
    /// differentiated is deterministic even in train mode.
    pub fn grad_check(
        &mut self,
        input: &Tensor<S>,
        epsilon: f64,
        max_coords: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut pick_rng = ChaCha8Rng::seed_from_u64(seed);
        let forward_seed = seed ^ 0x9e37_79b9_7f4a_7c15;

        let probe = {
            let mut rng = ChaCha8Rng::seed_from_u64(forward_seed);
            self.forward_train(input, &mut rng)?
        };
        // Positive weights keep the checked gradients away from zero, where a
        // 32-bit central difference drowns in rounding noise.
        let weights: Vec<f64> = (0..probe.len())
            .map(|_| pick_rng.gen_range(0.5..1.5))
            .collect();
        let loss_of = |out: &Tensor<S>| -> f64 {
            out.data()
                .iter()
                .zip(&weights)
                .map(|(&v, &c)| v.as_f64() * c)
                .sum()
        };

        self.zero_grad();
        {
            let mut rng = ChaCha8Rng::seed_from_u64(forward_seed);
            let out = self.forward_train(input, &mut rng)?;
            let grad =
                Tensor::from_vec(out.shape(), weights.iter().map(|&c| S::cast(c)).collect())?;
            self.backward(&grad)?;
        }
        let analytic: Vec<f64> = self
            .layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|p| {
                p.weight_grad
                    .data()
                    .iter()
                    .chain(p.bias_grad.data())
                    .map(|g| g.as_f64())
                    .collect::<Vec<_>>()
            })
            .collect();

        let total = analytic.len();
        if total == 0 {
            self.clear_caches();
            return Ok(0.0);
        }
        let coords: Vec<usize> = if total <= max_coords {
            (0..total).collect()
        } else {
            sample(&mut pick_rng, total, max_coords).into_vec()
        };

        let mut worst = 0.0f64;
        for &flat in &coords {
            let original = self.read_param(flat);
            self.write_param(flat, S::cast(original.as_f64() + epsilon));
            let plus = {
                let mut rng = ChaCha8Rng::seed_from_u64(forward_seed);
                loss_of(&self.forward_train(input, &mut rng)?)
            };
            self.write_param(flat, S::cast(original.as_f64() - epsilon));
            let minus = {
                let mut rng = ChaCha8Rng::seed_from_u64(forward_seed);
                loss_of(&self.forward_train(input, &mut rng)?)
            };
            self.write_param(flat, original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
        self.clear_caches();
        Ok(worst)
    }

    fn read_param(&self, mut flat: usize) -> S {
        for layer in &self.layers {
            if let Some(p) = layer.params() {
                if flat < p.weight.len() {
                    return p.weight.data()[flat];
                }
                flat -= p.weight.len();
                if flat < p.bias.len() {
                    return p.bias.data()[flat];
                }
                flat -= p.bias.len();
            }
        }
        unreachable!("flat index out of range")
    }

    fn write_param(&mut self, mut flat: usize, value: S) {
        for layer in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                if flat < p.weight.len() {
                    p.weight.data_mut()[flat] = value;
                    return;
                }
                flat -= p.weight.len();
                if flat < p.bias.len() {
                    p.bias.data_mut()[flat] = value;
                    return;
                }
                flat -= p.bias.len();
            }
        }
        unreachable!("flat index out of range")
    }
}
