//! RGB to log-depth autoencoder: dataset collection, training and the
//! frozen encoder used by the policy.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvError, FrameEncoder, NavEnv, VelocityCommand, LATENT_DIM};
use crate::nn::{Adam, AdamConfig, LayerSpec, Mode, Network, NetworkSpec, NnError, Tensor, WeightsFile};
use crate::render::{log_depth_value, Image};

const MAGIC: &[u8; 4] = b"VDS1";

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("dataset needs at least {min} records, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("image is {got_w}x{got_h}x{got_c}, expected {width}x{height}x{channels}")]
    Resolution { width: usize, height: usize, channels: usize, got_w: usize, got_h: usize, got_c: usize },
    #[error("resolution {0}x{1} is not a multiple of 16")]
    BadResolution(usize, usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("bad split: {0}")]
    Split(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One (augmented RGB, raw depth) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionRecord {
    pub rgb: Image,
    pub depth: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionDataset {
    pub width: usize,
    pub height: usize,
    pub records: Vec<VisionRecord>,
}

/// Train/test indices into a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl VisionDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Seeded shuffle, then the last `test_fraction` of the permutation
    /// becomes the test split.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<Split, VisionError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(VisionError::Split(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let n = self.len();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        if n - n_test < 2 {
            return Err(VisionError::Split(format!("{n} records leave fewer than 2 for training")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = order.split_off(n - n_test);
        Ok(Split { train: order, test })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), VisionError> {
        out.write_all(MAGIC)?;
        for v in [self.len(), self.width, self.height] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.width * self.height * 16);
        for r in &self.records {
            buf.clear();
            for v in r.rgb.data.iter().chain(&r.depth.data) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, VisionError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VisionError::Format("missing VDS1 magic".into()));
        }
        let mut header = [0u8; 12];
        input.read_exact(&mut header)?;
        let word = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]) as usize;
        let (count, width, height) = (word(0), word(4), word(8));
        let pixels = width * height;
        let mut buf = vec![0u8; pixels * 16];
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            input
                .read_exact(&mut buf)
                .map_err(|e| VisionError::Format(format!("record {i}: {e}")))?;
            let floats: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let (rgb, depth) = floats.split_at(pixels * 3);
            records.push(VisionRecord {
                rgb: Image { width, height, channels: 3, data: rgb.to_vec() },
                depth: Image { width, height, channels: 1, data: depth.to_vec() },
            });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(VisionError::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { width, height, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), VisionError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, VisionError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Longest random-action rollout before a forced reset.
const ROLLOUT_STEPS: usize = 25;

/// Records `n` frames from random resets and random-action rollouts. The env
/// should have no encoder attached; `rng` drives commands and actions.
pub fn collect_dataset<R: Rng + ?Sized>(env: &mut NavEnv, n: usize, rng: &mut R) -> Result<VisionDataset, VisionError> {
    if n < 10 {
        return Err(VisionError::TooSmall { min: 10, got: n });
    }
    let camera = env.config().camera;
    let mut records = Vec::with_capacity(n);
    let mut since_reset = ROLLOUT_STEPS;
    while records.len() < n {
        let cmd = VelocityCommand::new(rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0));
        if env.is_done() || since_reset >= ROLLOUT_STEPS {
            env.reset(cmd)?;
            since_reset = 0;
        }
        let frame = env.render()?;
        records.push(VisionRecord { rgb: frame.rgb, depth: frame.depth });
        let action = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        env.step(cmd, action)?;
        since_reset += 1;
    }
    Ok(VisionDataset { width: camera.width, height: camera.height, records })
}

/// Normalized log-depth regression targets for one depth image.
pub fn depth_targets(depth: &Image, d_min: f64, d_max: f64) -> Vec<f32> {
    depth.data.iter().map(|&d| log_depth_value(d as f64, d_min, d_max) as f32).collect()
}

pub fn mse(pred: &[f32], target: &[f32]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let sum: f64 = pred.iter().zip(target).map(|(&p, &t)| ((p - t) as f64).powi(2)).sum();
    sum / pred.len().max(1) as f64
}

fn encoder_spec(width: usize, height: usize) -> NetworkSpec {
    let channels = [3, 16, 32, 32, 64];
    let mut layers = Vec::new();
    for w in channels.windows(2) {
        layers.push(LayerSpec::Conv { in_channels: w[0], out_channels: w[1], kernel: 3, stride: 2 });
        layers.push(LayerSpec::batch_norm(w[1]));
        layers.push(LayerSpec::Relu);
    }
    let flat = 64 * (width / 16) * (height / 16);
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { inputs: flat, outputs: LATENT_DIM });
    NetworkSpec::new(vec![3, height, width], layers)
}

fn decoder_spec(width: usize, height: usize) -> NetworkSpec {
    let (h0, w0) = (height / 16, width / 16);
    let mut layers = vec![
        LayerSpec::Dense { inputs: LATENT_DIM, outputs: 64 * h0 * w0 },
        LayerSpec::batch_norm(64 * h0 * w0),
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: vec![64, h0, w0] },
    ];
    let channels = [64, 32, 32, 16];
    for w in channels.windows(2) {
        layers.push(LayerSpec::ConvTranspose { in_channels: w[0], out_channels: w[1], kernel: 4, stride: 2 });
        layers.push(LayerSpec::batch_norm(w[1]));
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::ConvTranspose { in_channels: 16, out_channels: 1, kernel: 4, stride: 2 });
    layers.push(LayerSpec::Sigmoid);
    NetworkSpec::new(vec![LATENT_DIM], layers)
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Network<f32>,
    pub decoder: Network<f32>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Result<Self, VisionError> {
        if width == 0 || height == 0 || width % 16 != 0 || height % 16 != 0 {
            return Err(VisionError::BadResolution(width, height));
        }
        Ok(Self {
            encoder: Network::new(encoder_spec(width, height), rng)?,
            decoder: Network::new(decoder_spec(width, height), rng)?,
        })
    }

    /// Eval-mode reconstruction of normalized log-depth, values in `[0, 1]`.
    pub fn reconstruct(&self, rgb: &[&Image]) -> Result<Tensor<f32>, VisionError> {
        let latent = self.encoder.infer(&rgb_batch(rgb))?;
        Ok(self.decoder.infer(&latent)?)
    }
}

fn rgb_batch(images: &[&Image]) -> Tensor<f32> {
    let (w, h) = images.first().map(|i| (i.width, i.height)).unwrap_or((0, 0));
    let mut data = Vec::with_capacity(images.len() * w * h * 3);
    for img in images {
        data.extend(img.to_planar());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of records held out (60k of 65k train in the reference setup).
    pub test_fraction: f64,
    pub d_min: f64,
    pub seed: u64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 32, lr: 1e-3, test_fraction: 5.0 / 65.0, d_min: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss in train mode.
    pub train_loss: f64,
    /// Eval-mode MSE over the whole train split.
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionReport {
    /// MSE of the best constant predictor on the train split.
    pub baseline_mse: f64,
    pub epochs: Vec<EpochMetrics>,
}

impl VisionReport {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Variance of all target pixels over `indices`.
pub fn baseline_mse(dataset: &VisionDataset, indices: &[usize], d_min: f64, d_max: f64) -> f64 {
    let (mut sum, mut sum_sq, mut count) = (0.0f64, 0.0f64, 0usize);
    for &i in indices {
        for t in depth_targets(&dataset.records[i].depth, d_min, d_max) {
            sum += t as f64;
            sum_sq += (t as f64).powi(2);
            count += 1;
        }
    }
    let mean = sum / count.max(1) as f64;
    sum_sq / count.max(1) as f64 - mean * mean
}

fn evaluate(model: &Autoencoder, dataset: &VisionDataset, indices: &[usize], d_min: f64, d_max: f64) -> Result<f64, VisionError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(64) {
        let images: Vec<&Image> = chunk.iter().map(|&i| &dataset.records[i].rgb).collect();
        let pred = model.reconstruct(&images)?;
        let px = dataset.width * dataset.height;
        for (k, &i) in chunk.iter().enumerate() {
            let target = depth_targets(&dataset.records[i].depth, d_min, d_max);
            total += mse(&pred.data[k * px..(k + 1) * px], &target) * px as f64;
            count += px;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Trains the autoencoder on the train split. Test records are only ever
/// evaluated in eval mode.
pub fn train_autoencoder(
    dataset: &VisionDataset,
    config: &VisionConfig,
    d_max: f64,
) -> Result<(Autoencoder, VisionReport), VisionError> {
    if dataset.len() < 10 {
        return Err(VisionError::TooSmall { min: 10, got: dataset.len() });
    }
    let split = dataset.split(config.test_fraction, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut model = Autoencoder::new(dataset.width, dataset.height, &mut rng)?;
    let adam_cfg = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let sizes = |n: &Network<f32>| n.params().iter().map(|p| p.len()).collect::<Vec<_>>();
    let mut enc_adam = Adam::new(adam_cfg, &sizes(&model.encoder));
    let mut dec_adam = Adam::new(adam_cfg, &sizes(&model.decoder));
    let px = dataset.width * dataset.height;
    let d_min = config.d_min;

    let mut report = VisionReport { baseline_mse: baseline_mse(dataset, &split.train, d_min, d_max), epochs: Vec::new() };
    let mut order = split.train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<&Image> = chunk.iter().map(|&i| &dataset.records[i].rgb).collect();
            let x = rgb_batch(&images);
            let mut target = Vec::with_capacity(chunk.len() * px);
            for &i in chunk {
                target.extend(depth_targets(&dataset.records[i].depth, d_min, d_max));
            }
            let (latent, enc_cache) = model.encoder.forward(&x, Mode::Train)?;
            let (pred, dec_cache) = model.decoder.forward(&latent, Mode::Train)?;
            let loss = mse(&pred.data, &target);
            if !loss.is_finite() {
                return Err(VisionError::Diverged { epoch, loss });
            }
            let scale = 2.0 / pred.data.len() as f32;
            let grad: Vec<f32> = pred.data.iter().zip(&target).map(|(&p, &t)| scale * (p - t)).collect();
            let dec_back = model.decoder.backward(&dec_cache, &Tensor::new(pred.shape.clone(), grad), true);
            let enc_back = model.encoder.backward(&enc_cache, &dec_back.input, true);
            model.decoder.apply_adam(&mut dec_adam, &dec_back.params);
            model.encoder.apply_adam(&mut enc_adam, &enc_back.params);
            loss_sum += loss;
            batches += 1;
        }
        let train_mse = evaluate(&model, dataset, &split.train, d_min, d_max)?;
        let test_mse = if split.test.is_empty() { f64::NAN } else { evaluate(&model, dataset, &split.test, d_min, d_max)? };
        if !train_mse.is_finite() {
            return Err(VisionError::Diverged { epoch, loss: train_mse });
        }
        log::info!("vision epoch {epoch}: train {train_mse:.5} test {test_mse:.5}");
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_mse,
            test_mse,
        });
    }
    Ok((model, report))
}

/// Saved autoencoder weights plus the depth normalization they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionWeights {
    pub d_min: f64,
    pub d_max: f64,
    pub encoder: WeightsFile,
    pub decoder: WeightsFile,
}

impl VisionWeights {
    pub fn from_model(model: &Autoencoder, d_min: f64, d_max: f64) -> Self {
        Self {
            d_min,
            d_max,
            encoder: WeightsFile::from_network(&model.encoder),
            decoder: WeightsFile::from_network(&model.decoder),
        }
    }

    pub fn to_model(&self) -> Result<Autoencoder, VisionError> {
        Ok(Autoencoder { encoder: self.encoder.to_network()?, decoder: self.decoder.to_network()? })
    }

    pub fn save(&self, path: &Path) -> Result<(), VisionError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VisionError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Content hash of the encoder half, used to pair policies with encoders.
    pub fn encoder_hash(&self) -> String {
        let json = serde_json::to_vec(&self.encoder).expect("weights serialize");
        hex::encode(Sha256::digest(json))
    }
}

/// Frozen encoder. Always runs in eval mode.
#[derive(Debug, Clone)]
pub struct VisionEncoder {
    net: Network<f32>,
    hash: String,
}

impl VisionEncoder {
    pub fn new(net: Network<f32>) -> Self {
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&WeightsFile::from_network(&net)).expect("serialize")));
        Self { net, hash }
    }

    pub fn from_weights(weights: &VisionWeights) -> Result<Self, VisionError> {
        Ok(Self { net: weights.encoder.to_network()?, hash: weights.encoder_hash() })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn resolution(&self) -> (usize, usize) {
        let s = self.net.input_shape();
        (s[2], s[1])
    }

    fn check(&self, image: &Image) -> Result<(), VisionError> {
        let (width, height) = self.resolution();
        if image.width != width || image.height != height || image.channels != 3 {
            return Err(VisionError::Resolution {
                width,
                height,
                channels: 3,
                got_w: image.width,
                got_h: image.height,
                got_c: image.channels,
            });
        }
        Ok(())
    }

    pub fn encode(&self, image: &Image) -> Result<Vec<f32>, VisionError> {
        self.check(image)?;
        Ok(self.net.infer(&rgb_batch(&[image]))?.data)
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>, VisionError> {
        for img in images {
            self.check(img)?;
        }
        let out = self.net.infer(&rgb_batch(images))?;
        Ok((0..images.len()).map(|i| out.row(i).to_vec()).collect())
    }
}

impl FrameEncoder for VisionEncoder {
    fn encode_frame(&self, rgb: &Image) -> Result<Vec<f32>, String> {
        self.encode(rgb).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::geometry::{Aabb, ConvexObstacle, Scene, Vec2};
    use crate::render::{render_frame, CameraModel};
    use crate::env::Pose;
    use std::sync::Arc;

    fn scene() -> Arc<Scene> {
        let obstacle = ConvexObstacle::new(
            vec![Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0), Vec2::new(2.0, 2.0), Vec2::new(1.0, 2.0)],
            [0.8, 0.2, 0.2],
            1.0,
        )
        .unwrap();
        Arc::new(Scene::new(Aabb::new(-3.0, -3.0, 3.0, 3.0), vec![obstacle], [0.7; 3], [0.3; 3], 10.0).unwrap())
    }

    fn small_env(seed: u64) -> NavEnv {
        let config = EnvConfig {
            camera: CameraModel { width: 16, height: 16, ..CameraModel::default() },
            ..EnvConfig::default()
        };
        NavEnv::new(scene(), config, None, seed).unwrap()
    }

    #[test]
    fn collect_gives_positive_bounded_depth() {
        let mut env = small_env(1);
        let ds = collect_dataset(&mut env, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(ds.len(), 100);
        for r in &ds.records {
            assert!(r.depth.data.iter().all(|&d| d > 0.0 && d as f64 <= 10.0));
            assert_eq!((r.rgb.width, r.rgb.height, r.rgb.channels), (16, 16, 3));
        }
    }

    #[test]
    fn collect_is_seed_deterministic() {
        let a = collect_dataset(&mut small_env(3), 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = collect_dataset(&mut small_env(3), 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(collect_dataset(&mut small_env(3), 9, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn vds1_round_trip() {
        let ds = collect_dataset(&mut small_env(5), 12, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"VDS1");
        assert_eq!(bytes.len(), 16 + 12 * 16 * 16 * 4 * 4);
        assert_eq!(VisionDataset::read_from(bytes.as_slice()).unwrap(), ds);
        bytes.push(0);
        assert!(VisionDataset::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let ds = collect_dataset(&mut small_env(7), 65, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let a = ds.split(5.0 / 65.0, 11).unwrap();
        assert_eq!(a, ds.split(5.0 / 65.0, 11).unwrap());
        assert_ne!(a, ds.split(5.0 / 65.0, 12).unwrap());
        assert_eq!((a.train.len(), a.test.len()), (60, 5));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..65).collect::<Vec<_>>());
    }

    #[test]
    fn loss_uses_log_depth_not_raw_depth() {
        let depth = Image { width: 2, height: 1, channels: 1, data: vec![0.5, 4.0] };
        let pred = [0.4f32, 0.8];
        let log_loss = mse(&pred, &depth_targets(&depth, 0.1, 10.0));
        let raw_loss = mse(&pred, &depth.data);
        assert!((log_loss - raw_loss).abs() > 1e-3);
        let t = depth_targets(&depth, 0.1, 10.0);
        assert!((t[0] as f64 - (5.0f64).ln() / (100.0f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn decoder_output_is_squashed_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Autoencoder::new(32, 16, &mut rng).unwrap();
        let img = render_frame(&scene(), &Pose::default(), &CameraModel { width: 32, height: 16, ..CameraModel::default() })
            .unwrap()
            .rgb;
        let out = model.reconstruct(&[&img]).unwrap();
        assert_eq!(out.shape, vec![1, 1, 16, 32]);
        assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(Autoencoder::new(20, 16, &mut rng).is_err());
    }

    #[test]
    fn encoder_is_batch_invariant_and_checks_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = Autoencoder::new(16, 16, &mut rng).unwrap();
        let enc = VisionEncoder::new(model.encoder.clone());
        let ds = collect_dataset(&mut small_env(11), 10, &mut rng).unwrap();
        let images: Vec<&Image> = ds.records.iter().map(|r| &r.rgb).collect();
        let batch = enc.encode_batch(&images).unwrap();
        for (img, row) in images.iter().zip(&batch) {
            let one = enc.encode(img).unwrap();
            assert_eq!(&one, row);
            assert_eq!(one, enc.encode(img).unwrap());
            assert_eq!(one.len(), LATENT_DIM);
        }
        let wrong = Image::new(32, 16, 3);
        assert!(matches!(enc.encode(&wrong), Err(VisionError::Resolution { .. })));
    }

    #[test]
    fn short_training_beats_baseline_and_round_trips() {
        let mut env = small_env(12);
        let ds = collect_dataset(&mut env, 200, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let config = VisionConfig { epochs: 6, batch_size: 16, ..VisionConfig::default() };
        let (model, report) = train_autoencoder(&ds, &config, 10.0).unwrap();
        let last = report.last().unwrap();
        assert!(last.train_mse < report.baseline_mse, "{last:?} vs {}", report.baseline_mse);
        let weights = VisionWeights::from_model(&model, 0.1, 10.0);
        let back = weights.to_model().unwrap();
        let img = &ds.records[0].rgb;
        assert_eq!(model.reconstruct(&[img]).unwrap(), back.reconstruct(&[img]).unwrap());
        let enc = VisionEncoder::from_weights(&weights).unwrap();
        assert_eq!(enc.hash(), weights.encoder_hash());
        assert_eq!(enc.hash(), VisionEncoder::new(back.encoder).hash());
    }
}
