//! The 3-D convolutional / recurrent severity classifier and its checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{softmax, Conv3dSpec, Graph, PoolSpec, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::poseproc::ClipTensor;
use crate::rng::{substream, Rng};
use crate::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv3dSpec,
    pub pool: PoolSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub blocks: Vec<ConvBlock>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub bidirectional: bool,
    pub lstm_dropout: f64,
    pub n_classes: usize,
    /// When set, each pixel has its temporal mean removed and is scaled by this gain before the first conv.
    pub temporal_centring: Option<f64>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let conv = |c_in| Conv3dSpec {
            c_in,
            c_out: 32,
            k_s: 3,
            k_t: 5,
            s_s: 1,
            s_t: 1,
            p_s: 0,
            p_t: 2,
        };
        let pool = |k_t| PoolSpec {
            k_s: 2,
            k_t,
            s_s: 2,
            s_t: k_t,
        };
        ArchConfig {
            blocks: vec![
                ConvBlock { conv: conv(3), pool: pool(1) },
                ConvBlock { conv: conv(32), pool: pool(2) },
                ConvBlock { conv: conv(32), pool: pool(2) },
            ],
            lstm_hidden: 8,
            lstm_layers: 3,
            bidirectional: true,
            lstm_dropout: 0.1,
            n_classes: 4,
            temporal_centring: Some(20.0),
        }
    }
}

impl ArchConfig {
    /// Same topology with `channels` conv filters and a smaller recurrent stack.
    pub fn tiny(channels: usize, lstm_hidden: usize, lstm_layers: usize) -> Self {
        let mut arch = ArchConfig::default();
        for (i, b) in arch.blocks.iter_mut().enumerate() {
            if i > 0 {
                b.conv.c_in = channels;
            }
            b.conv.c_out = channels;
        }
        arch.lstm_hidden = lstm_hidden;
        arch.lstm_layers = lstm_layers;
        arch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.blocks.is_empty() || self.lstm_layers == 0 || self.lstm_hidden == 0 || self.n_classes < 2 {
            return bad("architecture needs conv blocks, an LSTM and at least two classes".into());
        }
        for w in self.blocks.windows(2) {
            if w[0].conv.c_out != w[1].conv.c_in {
                return bad(format!("channel chain broken: {} -> {}", w[0].conv.c_out, w[1].conv.c_in));
            }
        }
        if self.temporal_centring.is_some_and(|g| !(g.is_finite() && g > 0.0)) {
            return bad("temporal centring gain must be positive".into());
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return bad(format!("lstm dropout {} outside [0, 1)", self.lstm_dropout));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.blocks[0].conv.c_in
    }

    /// Width of the sequence entering the LSTM.
    pub fn lstm_input(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.conv.c_out)
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Length of the pooled recurrent output, which is also the embedding length.
    pub fn embedding_dim(&self) -> usize {
        self.lstm_hidden * self.directions()
    }

    /// Fewest input frames that survive every temporal pooling stage.
    pub fn min_frames(&self) -> usize {
        (1..=4096).find(|&t| self.temporal_len(t).is_some()).unwrap_or(usize::MAX)
    }

    fn temporal_len(&self, t: usize) -> Option<usize> {
        self.blocks.iter().try_fold(t, |t, b| {
            let (t, _, _) = b.conv.output_dims(t, b.conv.k_s, b.conv.k_s)?;
            let (t, _, _) = b.pool.output_dims(t, b.pool.k_s, b.pool.k_s)?;
            Some(t)
        })
    }

    /// Shapes `[C, T, H, W]` after each conv and pool stage.
    pub fn shape_chain(&self, dims: [usize; 4]) -> Result<Vec<[usize; 4]>> {
        let mut cur = dims;
        let mut out = vec![cur];
        for b in &self.blocks {
            let (t, h, w) = b
                .conv
                .output_dims(cur[1], cur[2], cur[3])
                .ok_or_else(|| Error::ShapeMismatch(format!("conv does not fit {cur:?}")))?;
            cur = [b.conv.c_out, t, h, w];
            out.push(cur);
            let (t, h, w) = b
                .pool
                .output_dims(t, h, w)
                .ok_or_else(|| Error::ShapeMismatch(format!("pool does not fit {cur:?}")))?;
            cur = [b.conv.c_out, t, h, w];
            out.push(cur);
        }
        Ok(out)
    }

    /// Parameter names and shapes in checkpoint order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), b.conv.weight_shape().to_vec()));
            out.push((format!("conv{}.bias", i + 1), vec![b.conv.c_out]));
        }
        let h = self.lstm_hidden;
        for l in 0..self.lstm_layers {
            let input = if l == 0 { self.lstm_input() } else { self.embedding_dim() };
            for dir in ["fwd", "bwd"].iter().take(self.directions()) {
                out.push((format!("lstm.l{l}.{dir}.w_ih"), vec![4 * h, input]));
                out.push((format!("lstm.l{l}.{dir}.w_hh"), vec![4 * h, h]));
                out.push((format!("lstm.l{l}.{dir}.bias"), vec![4 * h]));
            }
        }
        out.push(("attention.query".into(), vec![self.embedding_dim()]));
        out.push(("head.weight".into(), vec![self.n_classes, self.embedding_dim()]));
        out.push(("head.bias".into(), vec![self.n_classes]));
        out
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    pub embedding: Var,
    pub attention: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: u8,
    pub probs: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstm<T> {
    pub arch: ArchConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
}

fn uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
    Tensor {
        shape: shape.to_vec(),
        data,
        grad: None,
    }
}

impl<T: Scalar> ConvLstm<T> {
    /// Seeded fan-in scaled uniform initialisation.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = substream(seed, "deepnet.init");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in arch.param_layout() {
            let bound = if let Some(rest) = name.strip_prefix("conv") {
                let block: usize = rest.split('.').next().and_then(|d| d.parse().ok()).unwrap_or(1);
                let spec = arch.blocks[block - 1].conv;
                let fan_in = (spec.c_in * spec.k_t * spec.k_s * spec.k_s) as f64;
                if name.ends_with("weight") {
                    (6.0 / fan_in).sqrt()
                } else {
                    1.0 / fan_in.sqrt()
                }
            } else if name.starts_with("lstm") {
                1.0 / (arch.lstm_hidden as f64).sqrt()
            } else {
                1.0 / (arch.embedding_dim() as f64).sqrt()
            };
            params.push(uniform(&mut rng, &shape, bound));
            names.push(name);
        }
        Ok(ConvLstm { arch, names, params })
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ConvLstm<U> {
        ConvLstm {
            arch: self.arch.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Builds the forward pass of `clip` on `g`. Dropout is active only when `dropout_rng` is given.
    pub fn forward(&self, g: &mut Graph<T>, clip: &ClipTensor<T>, mut dropout_rng: Option<&mut Rng>) -> Result<ForwardVars> {
        let arch = &self.arch;
        if clip.dims[0] != arch.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} channels, clip has {}",
                arch.input_channels(),
                clip.dims[0]
            )));
        }
        let need = arch.min_frames();
        if clip.dims[1] < need {
            return Err(Error::TooShortClip {
                needed: need,
                got: clip.dims[1],
            });
        }
        let p: Vec<Var> = self.params.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect();
        let data = match arch.temporal_centring {
            Some(gain) => centre_in_time(&clip.data, clip.dims, T::lit(gain)),
            None => clip.data.clone(),
        };
        let mut x = g.input(Tensor::new(clip.dims.to_vec(), data)?);
        let mut k = 0;
        for b in &arch.blocks {
            x = g.conv3d(x, p[k], p[k + 1], b.conv)?;
            x = g.maxpool3d(x, b.pool)?;
            x = g.relu(x);
            k += 2;
        }
        let mut seq = g.spatial_mean(x)?;
        for l in 0..arch.lstm_layers {
            if l > 0 && arch.lstm_dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    seq = g.dropout(seq, arch.lstm_dropout, rng);
                }
            }
            let fwd = g.lstm(seq, p[k], p[k + 1], p[k + 2], false)?;
            k += 3;
            seq = if arch.bidirectional {
                let bwd = g.lstm(seq, p[k], p[k + 1], p[k + 2], true)?;
                k += 3;
                g.concat(fwd, bwd)?
            } else {
                fwd
            };
        }
        let embedding = g.attention(seq, p[k])?;
        let logits = g.linear(embedding, p[k + 1], p[k + 2])?;
        Ok(ForwardVars {
            logits,
            embedding,
            attention: embedding,
        })
    }

    /// Loss and per-parameter gradients for one labelled clip.
    pub fn loss_and_grads(&self, clip: &ClipTensor<T>, target: usize, dropout_rng: Option<&mut Rng>) -> Result<(T, Vec<Vec<T>>)> {
        let mut g = Graph::new(true);
        let out = self.forward(&mut g, clip, dropout_rng)?;
        let loss = g.softmax_cross_entropy(out.logits, target)?;
        g.backward(loss)?;
        Ok((g.value(loss).data[0], g.param_grads(&self.param_sizes())))
    }

    /// Loss without building gradients.
    pub fn loss(&self, clip: &ClipTensor<T>, target: usize) -> Result<T> {
        let mut g = Graph::new(false);
        let out = self.forward(&mut g, clip, None)?;
        let loss = g.softmax_cross_entropy(out.logits, target)?;
        Ok(g.value(loss).data[0])
    }

    /// Class (lowest index on ties), softmax probabilities and the pooled embedding.
    pub fn predict(&self, clip: &ClipTensor<T>) -> Result<Prediction> {
        let mut g = Graph::new(false);
        let out = self.forward(&mut g, clip, None)?;
        let probs: Vec<f64> = softmax(&g.value(out.logits).data).iter().map(|v| v.to_f64_lossy()).collect();
        let class = crate::forest::argmax(&probs) as u8;
        let embedding = g.value(out.embedding).data.iter().map(|v| v.to_f64_lossy()).collect();
        Ok(Prediction { class, probs, embedding })
    }

    /// Attention weights over the pooled timesteps for `clip`.
    pub fn attention(&self, clip: &ClipTensor<T>) -> Result<Vec<f64>> {
        let mut g = Graph::new(false);
        let out = self.forward(&mut g, clip, None)?;
        let w = g.attention_weights(out.attention).ok_or(Error::GraphNotBuilt)?;
        Ok(w.iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Header JSON length (u32 LE), header JSON, then every parameter as f32 LE in layout order.
    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = CheckpointHeader {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            arch: self.arch.clone(),
            params: self.names.iter().cloned().zip(self.params.iter().map(|p| p.shape.clone())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for p in &self.params {
            for v in &p.data {
                w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Outer error is I/O; inner error is a malformed or mismatched header.
    pub fn read_checkpoint(mut r: impl Read) -> std::io::Result<Result<Self>> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = match serde_json::from_slice(&json) {
            Ok(h) => h,
            Err(e) => return Ok(Err(e.into())),
        };
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Ok(Err(Error::Invalid(format!("unsupported checkpoint schema {}", header.schema_version))));
        }
        if let Err(e) = header.arch.validate() {
            return Ok(Err(e));
        }
        let expected = header.arch.param_layout();
        if expected != header.params {
            return Ok(Err(Error::Invalid("checkpoint parameter layout does not match its architecture".into())));
        }
        let mut params = Vec::with_capacity(expected.len());
        for (_, shape) in &expected {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            params.push(Tensor {
                shape: shape.clone(),
                data,
                grad: None,
            });
        }
        Ok(Ok(ConvLstm {
            arch: header.arch,
            names: expected.into_iter().map(|(n, _)| n).collect(),
            params,
        }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            self.write_checkpoint(&mut f)?;
            f.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f)).map_err(|e| Error::io(path, e))?
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    arch: ArchConfig,
    params: Vec<(String, Vec<usize>)>,
}

/// Subtracts each pixel's mean over time and multiplies by `gain`.
pub fn centre_in_time<T: Scalar>(data: &[T], dims: [usize; 4], gain: T) -> Vec<T> {
    let [c, t, h, w] = dims;
    let plane = h * w;
    let mut out = data.to_vec();
    let inv_t = T::one() / T::lit(t as f64);
    for ci in 0..c {
        let block = &mut out[ci * t * plane..(ci + 1) * t * plane];
        let mut mean = vec![T::zero(); plane];
        for frame in block.chunks_exact(plane) {
            for (m, &v) in mean.iter_mut().zip(frame) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m *= inv_t;
        }
        for frame in block.chunks_exact_mut(plane) {
            for (v, &m) in frame.iter_mut().zip(&mean) {
                *v = (*v - m) * gain;
            }
        }
    }
    out
}

/// Per-parameter-group relative error `|a - n| / max(|a|, |n|)` between the tape
/// gradient and central differences with step `eps`.
pub fn gradient_check(model: &ConvLstm<f64>, clip: &ClipTensor<f64>, target: usize, eps: f64) -> Result<Vec<(String, f64)>> {
    let (_, analytic) = model.loss_and_grads(clip, target, None)?;
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.params.len());
    for (pi, name) in model.names.iter().enumerate() {
        let mut diff = 0.0;
        let mut scale_a = 0.0;
        let mut scale_n = 0.0;
        for k in 0..model.params[pi].len() {
            let orig = probe.params[pi].data[k];
            probe.params[pi].data[k] = orig + eps;
            let plus = probe.loss(clip, target)?;
            probe.params[pi].data[k] = orig - eps;
            let minus = probe.loss(clip, target)?;
            probe.params[pi].data[k] = orig;
            let num = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][k];
            diff += (a - num) * (a - num);
            scale_a += a * a;
            scale_n += num * num;
        }
        let denom = scale_a.sqrt().max(scale_n.sqrt());
        let rel = if denom > 0.0 { diff.sqrt() / denom } else { 0.0 };
        out.push((name.clone(), rel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_clip<T: Scalar>(seed: u64, c: usize, t: usize, n: usize) -> ClipTensor<T> {
        let mut rng = Rng::seed_from_u64(seed);
        let data = (0..c * t * n * n).map(|_| T::lit(rng.random::<f64>())).collect();
        ClipTensor::new(data, [c, t, n, n], 30.0).unwrap()
    }

    #[test]
    fn default_shape_chain() {
        let arch = ArchConfig::default();
        let chain = arch.shape_chain([3, 32, 32, 32]).unwrap();
        let spatial: Vec<usize> = chain.iter().map(|d| d[2]).collect();
        let temporal: Vec<usize> = chain.iter().map(|d| d[1]).collect();
        assert_eq!(spatial, vec![32, 30, 15, 13, 6, 4, 2]);
        assert_eq!(temporal, vec![32, 32, 32, 32, 16, 16, 8]);
        assert!(chain[1..].iter().all(|d| d[0] == 32));
        assert_eq!(arch.lstm_input(), 32);
        assert_eq!(arch.embedding_dim(), 16);
        assert_eq!(arch.min_frames(), 4);
    }

    #[test]
    fn forward_outputs_have_expected_lengths() {
        let model = ConvLstm::<f32>::new(ArchConfig::default(), 1).unwrap();
        let clip = random_clip::<f32>(2, 3, 32, 32);
        let mut g = Graph::new(false);
        let out = model.forward(&mut g, &clip, None).unwrap();
        assert_eq!(g.value(out.logits).shape, vec![4]);
        assert_eq!(g.value(out.embedding).shape, vec![16]);
        let w = g.attention_weights(out.attention).unwrap();
        assert_eq!(w.len(), 8);
        assert!((w.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        let pred = model.predict(&clip).unwrap();
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(pred.embedding.len(), 16);
    }

    #[test]
    fn short_or_wrong_clips_are_rejected() {
        let model = ConvLstm::<f32>::new(ArchConfig::default(), 1).unwrap();
        assert!(matches!(
            model.predict(&random_clip::<f32>(3, 3, 3, 32)),
            Err(Error::TooShortClip { needed: 4, got: 3 })
        ));
        assert!(model.predict(&random_clip::<f32>(3, 3, 4, 32)).is_ok());
        assert!(matches!(model.predict(&random_clip::<f32>(3, 1, 8, 32)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_model_is_uniform_and_picks_class_zero() {
        let mut model = ConvLstm::<f64>::new(ArchConfig::default(), 1).unwrap();
        for p in &mut model.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let pred = model.predict(&random_clip::<f64>(4, 3, 8, 32)).unwrap();
        assert!(pred.probs.iter().all(|&p| (p - 0.25).abs() < 1e-12));
        assert_eq!(pred.class, 0);
    }

    #[test]
    fn init_is_seeded() {
        let a = ConvLstm::<f32>::new(ArchConfig::default(), 5).unwrap();
        let b = ConvLstm::<f32>::new(ArchConfig::default(), 5).unwrap();
        let c = ConvLstm::<f32>::new(ArchConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.names.len(), a.params.len());
        assert_eq!(a.names[0], "conv1.weight");
        assert_eq!(a.params[0].shape, vec![32, 3, 5, 3, 3]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = ConvLstm::<f32>::new(ArchConfig::tiny(4, 3, 2), 9).unwrap();
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let header_len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 4 + header_len + 4 * model.n_params());
        let back = ConvLstm::<f32>::read_checkpoint(&buf[..]).unwrap().unwrap();
        assert_eq!(back, model);
        assert!(ConvLstm::<f32>::read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn arch_validation() {
        let mut arch = ArchConfig::default();
        arch.blocks[1].conv.c_in = 16;
        assert!(arch.validate().is_err());
        let mut arch = ArchConfig::default();
        arch.lstm_dropout = 1.0;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let model = ConvLstm::<f64>::new(ArchConfig::tiny(2, 3, 2), 11).unwrap();
        let a = crate::synth::gen_assessment(&crate::synth::SynthSpec::for_score(2, crate::poseproc::Laterality::Left, 12)).unwrap();
        let clip = crate::poseproc::preprocess::<f64>(&a.pose, &a.video, a.roi).unwrap().time_slice(0, 8).unwrap();
        for (name, rel) in gradient_check(&model, &clip, 2, 1e-5).unwrap() {
            assert!(rel < 1e-2, "{name}: relative error {rel}");
        }
    }

    #[test]
    fn temporal_centring_removes_static_content() {
        // two pixels, three frames, one channel
        let data = [1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
        let out = centre_in_time(&data, [1, 3, 1, 2], 2.0);
        assert_eq!(out, vec![-2.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
