use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Lookahead, Optimizer, RAdam, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TipFormer};
use crate::tensor::Tensor;

pub const TPFC_MAGIC: &[u8; 4] = b"TPFC";
pub const TPFC_VERSION: u32 = 1;

/// Position of the training RNG when the checkpoint was taken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte ChaCha8 seed, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::format("malformed RNG state in checkpoint header");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMeta {
    pub epoch: usize,
    pub val_loss: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TipFormer,
    pub train: TrainConfig,
    pub rng: RngState,
    pub best: BestMeta,
    pub optimizer: Option<Optimizer<f32>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
    lookahead_counter: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    params: Vec<ManifestEntry>,
    rng: RngState,
    best: BestMeta,
    optimizer: Option<OptimizerMeta>,
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// `"TPFC" | u32 version | u32 header_len | JSON header | f32 payload`.
///
/// The payload holds every parameter in manifest order, followed, when
/// optimizer state is saved, by all RAdam first moments, all second
/// moments and all LookAhead slow weights in the same order.
pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck.model.params();
    let header = Header {
        model: ck.model.config().clone(),
        train: ck.train.clone(),
        params: params.iter().map(|p| ManifestEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect(),
        rng: ck.rng.clone(),
        best: ck.best.clone(),
        optimizer: ck
            .optimizer
            .as_ref()
            .map(|o| OptimizerMeta { step: o.radam.t, lookahead_counter: o.lookahead.counter }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(format!("cannot encode header: {e}")))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * params.numel());
    buf.extend_from_slice(TPFC_MAGIC);
    buf.extend_from_slice(&TPFC_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params.iter() {
        push_tensor(&mut buf, &p.value);
    }
    if let Some(o) = &ck.optimizer {
        for t in o.radam.m.iter().chain(&o.radam.v).chain(&o.lookahead.slow) {
            push_tensor(&mut buf, t);
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(ck)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&bytes)
}

struct Payload<'a> {
    rest: &'a [u8],
}

impl Payload<'_> {
    fn read(&mut self, shape: &[usize], what: &str) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        if self.rest.len() < 4 * n {
            return Err(Error::format(format!("payload too short for {what}")));
        }
        let (head, tail) = self.rest.split_at(4 * n);
        self.rest = tail;
        let data = head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != TPFC_MAGIC {
        return Err(Error::format("not a TPFC checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TPFC_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::format("truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::format(format!("malformed checkpoint header: {e}")))?;
    header.train.validate().map_err(|e| Error::format(e.to_string()))?;
    let mut model = TipFormer::new(header.model.clone(), 0).map_err(|e| Error::format(e.to_string()))?;
    if header.params.len() != model.params().len() {
        return Err(Error::format(format!(
            "manifest lists {} parameters, configuration implies {}",
            header.params.len(),
            model.params().len()
        )));
    }
    for (entry, p) in header.params.iter().zip(model.params().iter()) {
        if entry.name != p.name {
            return Err(Error::format(format!("manifest parameter {} where {} was expected", entry.name, p.name)));
        }
        if entry.shape != p.value.shape() {
            return Err(Error::format(format!(
                "parameter {} has manifest shape {:?} but the configuration implies {:?}",
                entry.name,
                entry.shape,
                p.value.shape()
            )));
        }
    }
    let mut payload = Payload { rest: &body[hlen..] };
    let mut values = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        values.push(payload.read(&entry.shape, &format!("parameter {}", entry.name))?);
    }
    let optimizer = match &header.optimizer {
        None => None,
        Some(meta) => {
            let mut read_all = |kind: &str| -> Result<Vec<Tensor<f32>>> {
                header.params.iter().map(|e| payload.read(&e.shape, &format!("{kind} of {}", e.name))).collect()
            };
            let m = read_all("first moment")?;
            let v = read_all("second moment")?;
            let slow = read_all("slow weights")?;
            let t = &header.train;
            let mut radam = RAdam::new(t.learning_rate, t.beta1, t.beta2, t.eps, model.params());
            radam.t = meta.step;
            radam.m = m;
            radam.v = v;
            let mut lookahead = Lookahead::new(t.lookahead_k, t.lookahead_alpha, model.params());
            lookahead.counter = meta.lookahead_counter;
            lookahead.slow = slow;
            Some(Optimizer { radam, lookahead })
        }
    };
    if !payload.rest.is_empty() {
        return Err(Error::format(format!("{} unexpected trailing payload bytes", payload.rest.len())));
    }
    for (p, v) in model.params_mut().iter_mut().zip(values) {
        p.value = v;
    }
    header.rng.restore()?;
    Ok(Checkpoint { model, train: header.train, rng: header.rng, best: header.best, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SequenceInput;
    use rand::{Rng, SeedableRng};

    fn sample(seed: u64, with_opt: bool) -> Checkpoint {
        let cfg = ModelConfig { hidden: 8, heads: 2, interaction_layers: 1, fallback_dim: 6, ..Default::default() };
        let model = TipFormer::new(cfg, seed).unwrap();
        let train = TrainConfig::default();
        let mut optimizer = Optimizer::new(&train, model.params());
        optimizer.radam.t = 7;
        optimizer.radam.m[0].data_mut()[0] = 0.25;
        optimizer.lookahead.counter = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _: u64 = rng.gen();
        Checkpoint {
            model,
            train,
            rng: RngState::capture(&rng),
            best: BestMeta { epoch: 4, val_loss: 0.1 + 0.2, train_loss: 0.5 },
            optimizer: with_opt.then_some(optimizer),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for with_opt in [false, true] {
            let ck = sample(5, with_opt);
            let bytes = checkpoint_bytes(&ck).unwrap();
            let back = parse_checkpoint(&bytes).unwrap();
            assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
            assert_eq!(back.best, ck.best);
            assert_eq!(back.optimizer.is_some(), with_opt);
            let t = SequenceInput::Tokens(vec![1, 2, 3]);
            let p = SequenceInput::Tokens(vec![4, 5]);
            assert_eq!(
                ck.model.predict(&t, &p).unwrap().to_bits(),
                back.model.predict(&t, &p).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn rng_state_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        rng.set_stream(1);
        let _: [u64; 3] = rng.gen();
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }

    #[test]
    fn truncated_and_corrupt_files() {
        let bytes = checkpoint_bytes(&sample(1, true)).unwrap();
        assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(parse_checkpoint(&extra), Err(Error::Format(_))));
        let mut magic = bytes.clone();
        magic[1] = b'X';
        assert!(matches!(parse_checkpoint(&magic), Err(Error::Format(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(parse_checkpoint(&version), Err(Error::Format(_))));
    }

    #[test]
    fn inconsistent_manifest_names_parameter() {
        let bytes = checkpoint_bytes(&sample(1, false)).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        let edited = header.replacen(
            r#"{"name":"encoder.toxin.proj.weight","shape":[6,8]}"#,
            r#"{"name":"encoder.toxin.proj.weight","shape":[6,9]}"#,
            1,
        );
        assert_ne!(edited, header);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[12 + hlen..]);
        match parse_checkpoint(&out) {
            Err(Error::Format(m)) => assert!(m.contains("encoder.toxin.proj.weight"), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
