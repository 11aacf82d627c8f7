use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerCache};
use super::{Adam, LayerSpec, Mode, NnError, Real, Tensor};

/// Per-sample input shape plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input_shape, layers }
    }

    /// Per-sample shapes: entry `i` is the input of layer `i`, the last entry
    /// the network output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Dense stack `inputs -> hidden... -> outputs` with batch norm on the
    /// input and after every hidden dense layer, ReLU activations.
    pub fn mlp_with_batch_norm(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers = vec![LayerSpec::batch_norm(inputs)];
        let mut prev = inputs;
        for &h in hidden {
            layers.push(LayerSpec::Dense { inputs: prev, outputs: h });
            layers.push(LayerSpec::batch_norm(h));
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Dense { inputs: prev, outputs });
        Self::new(vec![inputs], layers)
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    pub(crate) layers: Vec<Layer<T>>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    /// One gradient buffer per parameter tensor, in [`Network::params`] order.
    /// Empty when parameter gradients were not requested.
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, input)| Layer::build(l, input, rng))
            .collect();
        Ok(Self { spec, shapes, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize, NnError> {
        let per_sample = &input.shape[1.min(input.shape.len())..];
        if input.shape.is_empty() || per_sample != self.spec.input_shape.as_slice() {
            return Err(NnError::Input {
                expected: self.spec.input_shape.clone(),
                got: input.shape.clone(),
            });
        }
        Ok(input.shape[0])
    }

    fn output_tensor(&self, batch: usize, data: Vec<T>) -> Tensor<T> {
        let mut shape = vec![batch];
        shape.extend_from_slice(self.output_shape());
        Tensor::new(shape, data)
    }

    /// Forward pass. In [`Mode::Train`] batch statistics are used and folded
    /// into the running statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let batch = self.check_input(input)?;
        let mut x = input.data.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache, stats) = layer.forward(&x, batch, mode);
            if let Some(stats) = stats {
                layer.apply_stats(stats);
            }
            caches.push(cache);
            x = y;
        }
        Ok((self.output_tensor(batch, x), ForwardCache { batch, layers: caches }))
    }

    /// Eval-mode forward that leaves the network untouched and keeps no cache.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let batch = self.check_input(input)?;
        let mut x = input.data.clone();
        for layer in &self.layers {
            x = layer.forward(&x, batch, Mode::Eval).0;
        }
        Ok(self.output_tensor(batch, x))
    }

    /// Eval-mode forward that keeps the cache, for differentiating a frozen
    /// network with respect to its input.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let batch = self.check_input(input)?;
        let mut x = input.data.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache, _) = layer.forward(&x, batch, Mode::Eval);
            caches.push(cache);
            x = y;
        }
        Ok((self.output_tensor(batch, x), ForwardCache { batch, layers: caches }))
    }

    /// Backward pass from `output_grad` (same shape as the forward output).
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &Tensor<T>, param_grads: bool) -> Backward<T> {
        assert_eq!(cache.layers.len(), self.layers.len(), "cache from a different network");
        let n = cache.batch;
        assert_eq!(output_grad.data.len(), n * self.output_len(), "output gradient shape");
        let mut grads: Vec<Vec<T>> = if param_grads {
            self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
        } else {
            Vec::new()
        };
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.params().len();
        }
        let mut dy = output_grad.data.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let count = layer.params().len();
            let slot = if param_grads && count > 0 {
                Some(&mut grads[offsets[i]..offsets[i] + count])
            } else {
                None
            };
            dy = layer.backward(&cache.layers[i], &dy, n, slot);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        Backward { params: grads, input: Tensor::new(shape, dy) }
    }

    pub fn apply_adam(&mut self, adam: &mut Adam<T>, grads: &[Vec<T>]) {
        let mut params = self.params_mut();
        adam.step(&mut params, grads);
    }

    /// Copies parameters and running statistics from a network of identical spec.
    pub fn copy_from(&mut self, other: &Network<T>) {
        assert_eq!(self.spec, other.spec);
        self.layers = other.layers.clone();
    }
}
