use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network, NetworkSpec, NnError};

pub const WEIGHTS_FORMAT: &str = "navguard-weights/1";

/// One named tensor, little-endian f32 bytes in base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorRecord {
    fn encode(name: String, values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self { name, shape: vec![values.len()], data: STANDARD.encode(bytes) }
    }

    fn decode(&self) -> Result<Vec<f32>, NnError> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| NnError::Weights(format!("tensor {}: {e}", self.name)))?;
        if bytes.len() % 4 != 0 {
            return Err(NnError::Weights(format!("tensor {}: truncated data", self.name)));
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

/// Portable weights file: the architecture plus every parameter and
/// running-statistic tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorRecord>,
}

fn tensor_names(net: &Network<f32>) -> (Vec<String>, Vec<String>) {
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let (p, b): (&[&str], &[&str]) = match layer.params().len() {
            0 => (&[], &[]),
            _ if !layer.buffers().is_empty() => (&["gamma", "beta"], &["running_mean", "running_var"]),
            _ => (&["weight", "bias"], &[]),
        };
        params.extend(p.iter().map(|n| format!("layer{i}.{n}")));
        buffers.extend(b.iter().map(|n| format!("layer{i}.{n}")));
    }
    (params, buffers)
}

impl WeightsFile {
    pub fn from_network(net: &Network<f32>) -> Self {
        let (pn, bn) = tensor_names(net);
        let mut tensors: Vec<TensorRecord> = pn
            .into_iter()
            .zip(net.params())
            .map(|(n, v)| TensorRecord::encode(n, v))
            .collect();
        tensors.extend(bn.into_iter().zip(net.buffers()).map(|(n, v)| TensorRecord::encode(n, v)));
        Self {
            format: WEIGHTS_FORMAT.to_string(),
            input_shape: net.spec().input_shape.clone(),
            layers: net.spec().layers.clone(),
            tensors,
        }
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.input_shape.clone(), self.layers.clone())
    }

    pub fn to_network(&self) -> Result<Network<f32>, NnError> {
        if self.format != WEIGHTS_FORMAT {
            return Err(NnError::Weights(format!("unknown format {:?}", self.format)));
        }
        // Initial values are overwritten below; the seed is irrelevant.
        let mut net = Network::<f32>::new(self.spec(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let (pn, bn) = tensor_names(&net);
        let expected = pn.len() + bn.len();
        if self.tensors.len() != expected {
            return Err(NnError::Weights(format!("expected {expected} tensors, found {}", self.tensors.len())));
        }
        let mut records = self.tensors.iter();
        let names: Vec<String> = pn.into_iter().chain(bn).collect();
        let mut values = Vec::new();
        for name in &names {
            let record = records.next().expect("count checked");
            if &record.name != name {
                return Err(NnError::Weights(format!("expected tensor {name}, found {}", record.name)));
            }
            values.push(record.decode()?);
        }
        let n_params = net.params().len();
        for (target, value) in net.params_mut().into_iter().zip(&values) {
            if target.len() != value.len() {
                return Err(NnError::Weights(format!("tensor size {} does not match {}", value.len(), target.len())));
            }
            target.copy_from_slice(value);
        }
        for (target, value) in net.buffers_mut().into_iter().zip(&values[n_params..]) {
            if target.len() != value.len() {
                return Err(NnError::Weights(format!("tensor size {} does not match {}", value.len(), target.len())));
            }
            target.copy_from_slice(value);
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};

    #[test]
    fn round_trip_preserves_outputs() {
        let spec = NetworkSpec::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv { in_channels: 1, out_channels: 3, kernel: 3, stride: 2 },
                LayerSpec::batch_norm(3),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 48, outputs: 4 },
            ],
        );
        let mut net = Network::<f32>::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = Tensor::new(vec![3, 1, 8, 8], (0..192).map(|i| ((i * 37) % 11) as f32 / 11.0).collect());
        net.forward(&x, Mode::Train).unwrap();
        let file = WeightsFile::from_network(&net);
        let json = file.to_json().unwrap();
        let back = WeightsFile::from_json(&json).unwrap().to_network().unwrap();
        assert_eq!(net.infer(&x).unwrap(), back.infer(&x).unwrap());
        assert_eq!(file.tensors.len(), 8);
        assert_eq!(file.tensors[2].name, "layer1.gamma");
        assert_eq!(file.tensors[7].name, "layer1.running_var");
    }

    #[test]
    fn rejects_mismatched_tensor() {
        let spec = NetworkSpec::new(vec![2], vec![LayerSpec::Dense { inputs: 2, outputs: 2 }]);
        let net = Network::<f32>::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut file = WeightsFile::from_network(&net);
        file.tensors[0] = TensorRecord::encode("layer0.weight".into(), &[1.0, 2.0]);
        assert!(matches!(file.to_network(), Err(NnError::Weights(_))));
        file.format = "other".into();
        assert!(matches!(file.to_network(), Err(NnError::Weights(_))));
    }
}
