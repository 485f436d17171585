//! ResNet-style classifier over fixed-length 12-lead pulses, in a
//! 1D-convolution and a 2D-convolution variant, plus the binary model
//! checkpoint format.
//!
//! Both variants consume the same pulse (12 leads x L samples) and emit
//! two logits. The 1D variant treats leads as channels; the 2D variant
//! treats the lead axis as a spatial dimension under a 3x7 kernel.
//! Downsampling is stride 2 on the time axis at each block transition.

use byteorder::{ByteOrder, LittleEndian};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv, GlobalAvgPool, Linear, Relu, ResidualBlock};
use super::tensor::Tensor;
use crate::ecg::NUM_LEADS;
use crate::pulses::Pulse;
use crate::{Error, Result};

pub const N_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Conv1d,
    Conv2d,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Conv1d => "1d",
            Variant::Conv2d => "2d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    /// Kernel extent on the time axis.
    pub kernel_time: usize,
    /// Kernel extent across leads; only the 2D variant uses it.
    pub kernel_lead: usize,
    pub fc_hidden: usize,
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            stem_channels: 16,
            block_channels: vec![16, 32, 64],
            kernel_time: 7,
            kernel_lead: 3,
            fc_hidden: 64,
        }
    }

    /// Narrow preset sized so a full repeated-split experiment finishes in
    /// minutes on one CPU core. Same topology, fewer channels.
    pub fn desk_scale(variant: Variant) -> Self {
        ModelConfig {
            variant,
            stem_channels: 4,
            block_channels: vec![4, 8],
            kernel_time: 7,
            kernel_lead: 3,
            fc_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::Config("need at least one residual block".into()));
        }
        if self.stem_channels == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel_time == 0 || self.kernel_lead == 0 {
            return Err(Error::Config("kernel sizes must be positive".into()));
        }
        Ok(())
    }

    fn stem_in_channels(&self) -> usize {
        match self.variant {
            Variant::Conv1d => NUM_LEADS,
            Variant::Conv2d => 1,
        }
    }

    fn kernel(&self) -> (usize, usize) {
        match self.variant {
            Variant::Conv1d => (1, self.kernel_time),
            Variant::Conv2d => (self.kernel_lead, self.kernel_time),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_variant(Variant::Conv1d)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    stem: Conv,
    stem_bn: BatchNorm,
    stem_relu: Relu,
    blocks: Vec<ResidualBlock>,
    pool: GlobalAvgPool,
    fc1: Linear,
    fc_relu: Relu,
    fc2: Linear,
    pub train_mode: bool,
    pub trained: bool,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = config.kernel();
        let stem = Conv::new(
            config.stem_in_channels(),
            config.stem_channels,
            kernel.0,
            kernel.1,
            (1, 1),
            &mut rng,
        );
        let mut blocks = Vec::new();
        let mut c_in = config.stem_channels;
        for (i, &c_out) in config.block_channels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            blocks.push(ResidualBlock::new(c_in, c_out, kernel, stride, &mut rng));
            c_in = c_out;
        }
        let fc1 = Linear::new(c_in, config.fc_hidden, &mut rng);
        let fc2 = Linear::new(config.fc_hidden, N_OUTPUTS, &mut rng);
        Ok(Model {
            stem,
            stem_bn: BatchNorm::new(config.stem_channels),
            stem_relu: Relu::default(),
            blocks,
            pool: GlobalAvgPool::default(),
            fc1,
            fc_relu: Relu::default(),
            fc2,
            config,
            train_mode: false,
            trained: false,
        })
    }

    /// Packs pulses into the variant's input layout. 1D: [N, 12, 1, L];
    /// 2D: [N, 1, 12, L]. The flat data is identical either way.
    pub fn pulses_to_input(&self, pulses: &[&Pulse]) -> Result<Tensor> {
        if pulses.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let l = pulses[0].len();
        let mut data = Vec::with_capacity(pulses.len() * NUM_LEADS * l);
        for p in pulses {
            if p.len() != l || p.leads.len() != NUM_LEADS {
                return Err(Error::Shape(format!(
                    "pulse from {} has shape 12x{}, expected 12x{l}",
                    p.source_record_id,
                    p.len()
                )));
            }
            for lead in &p.leads {
                data.extend_from_slice(lead);
            }
        }
        let shape = match self.config.variant {
            Variant::Conv1d => vec![pulses.len(), NUM_LEADS, 1, l],
            Variant::Conv2d => vec![pulses.len(), 1, NUM_LEADS, l],
        };
        Tensor::from_vec(&shape, data)
    }

    /// Forward pass to logits [N, 2]. Honors `train_mode` for batch norm.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let train = self.train_mode;
        let mut x = self.stem.forward(input)?;
        x = self.stem_bn.forward(&x, train)?;
        x = self.stem_relu.forward(&x);
        for block in &mut self.blocks {
            x = block.forward(&x, train)?;
        }
        let pooled = self.pool.forward(&x)?;
        let hidden = self.fc1.forward(&pooled)?;
        let hidden = self.fc_relu.forward(&hidden);
        self.fc2.forward(&hidden)
    }

    /// Backward pass from logit gradients; accumulates parameter gradients
    /// and returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.fc2.backward(grad_logits)?;
        let g = self.fc_relu.backward(&g);
        let g = self.fc1.backward(&g)?;
        let mut g = self.pool.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let g = self.stem_relu.backward(&g);
        let g = self.stem_bn.backward(&g)?;
        self.stem.backward(&g)
    }

    pub fn visit_params(&mut self, f: &mut super::layers::ParamVisitor) {
        self.stem.visit_params("stem.conv", f);
        self.stem_bn.visit_params("stem.bn", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&format!("block{i}"), f);
        }
        self.fc1.visit_params("fc1", f);
        self.fc2.visit_params("fc2", f);
    }

    pub fn visit_buffers(&mut self, f: &mut super::layers::BufferVisitor) {
        self.stem_bn.visit_buffers("stem.bn", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_buffers(&format!("block{i}"), f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn params_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, p| ok &= p.value.is_finite());
        ok
    }

    /// All named tensors (parameters then buffers), for checkpointing.
    fn named_tensors(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| out.push((name, p.value.clone())));
        self.visit_buffers(&mut |name, t| out.push((name, t.clone())));
        out
    }
}

const MODEL_MAGIC: &[u8; 4] = b"CAOM";
const MODEL_VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 256;
const MAX_DIMS: usize = 8;
const MAX_DIM: u64 = 1 << 24;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    trained: bool,
}

/// Serializes the model into the `model.bin` wire format.
pub fn encode_model(model: &mut Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader {
        config: model.config.clone(),
        trained: model.trained,
    })?;
    let tensors = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes `model.bin` bytes, validating every tensor shape against the
/// freshly constructed architecture.
pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() - *pos < n {
            return Err(Error::format("model.bin", "truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MODEL_MAGIC {
        return Err(Error::format("model.bin", "bad magic"));
    }
    let version = LittleEndian::read_u32(take(&mut pos, 4)?);
    if version != MODEL_VERSION {
        return Err(Error::format("model.bin", format!("unsupported version {version}")));
    }
    let header_len = LittleEndian::read_u32(take(&mut pos, 4)?) as usize;
    if header_len > 1 << 20 {
        return Err(Error::format("model.bin", "oversized header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(take(&mut pos, header_len)?)?;
    let mut model = Model::new(header.config, 0)?;
    model.trained = header.trained;

    let count = LittleEndian::read_u32(take(&mut pos, 4)?) as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name_len = LittleEndian::read_u32(take(&mut pos, 4)?) as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::format("model.bin", "tensor name too long"));
        }
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::format("model.bin", "tensor name not UTF-8"))?
            .to_string();
        let ndims = LittleEndian::read_u32(take(&mut pos, 4)?) as usize;
        if ndims > MAX_DIMS {
            return Err(Error::format("model.bin", "too many dimensions"));
        }
        let mut shape = Vec::with_capacity(ndims);
        let mut numel: u64 = 1;
        for _ in 0..ndims {
            let d = LittleEndian::read_u32(take(&mut pos, 4)?) as u64;
            if d == 0 || d > MAX_DIM {
                return Err(Error::format("model.bin", "bad dimension"));
            }
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel.saturating_mul(8) > (bytes.len() - pos) as u64 {
            return Err(Error::format("model.bin", "tensor data exceeds payload"));
        }
        let raw = take(&mut pos, numel as usize * 8)?;
        let mut data = Vec::with_capacity(numel as usize);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format("model.bin", format!("non-finite value in {name}")));
            }
            data.push(v);
        }
        if loaded.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(Error::format("model.bin", format!("duplicate tensor {name}")));
        }
    }
    if pos != bytes.len() {
        return Err(Error::format("model.bin", "trailing bytes"));
    }

    let mut missing = Vec::new();
    let mut fill = |name: String, slot: &mut Tensor| {
        match loaded.remove(&name) {
            Some(t) if t.shape == slot.shape => *slot = t,
            Some(t) => missing.push(format!("{name}: shape {:?} != {:?}", t.shape, slot.shape)),
            None => missing.push(format!("{name}: missing")),
        }
    };
    model.visit_params(&mut |name, p| fill(name, &mut p.value));
    model.visit_buffers(&mut |name, t| fill(name, t));
    if !missing.is_empty() {
        return Err(Error::format("model.bin", missing.join("; ")));
    }
    if !loaded.is_empty() {
        let extra: Vec<String> = loaded.into_keys().collect();
        return Err(Error::format("model.bin", format!("unknown tensors: {}", extra.join(", "))));
    }
    Ok(model)
}

pub fn save_model(path: &std::path::Path, model: &mut Model) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, encode_model(model)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &std::path::Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_model(&bytes)
}
