//! Binary checkpoint format.
//!
//! All integers little-endian. Layout:
//!
//! ```text
//! "SGF1" | version u16 | config hash [32]
//! config text (u32 length + UTF-8)
//! step u64 | data cursor u64
//! rng: seed [32] | stream u64 | word position u128
//! params: u32 count, then per blob: name | tensor
//! optimizers: u32 count, then per group: name | step u64 | u32 n | n tensors (m) | n tensors (v)
//! trace: u64 count, then per record: step u64 | 6 x f64
//! ```
//!
//! A name is a u32 length plus UTF-8 bytes; a tensor is u32 rank, u32 dims
//! and f32 data.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use stegan_tensor::optim::AdamState;
use stegan_tensor::Tensor;

use crate::error::{Result, StegoError};

pub const MAGIC: &[u8; 4] = b"SGF1";
pub const FORMAT_VERSION: u16 = 1;

/// Resumable state of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// One row of the training trace.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub l_adv: f64,
    pub l_rec: f64,
    pub l_perc: f64,
    pub total: f64,
    pub d_acc: f64,
    pub e_bitacc: f64,
}

impl TraceRecord {
    pub fn all_finite(&self) -> bool {
        [self.l_adv, self.l_rec, self.l_perc, self.total, self.d_acc, self.e_bitacc]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub step: u64,
    pub cursor: u64,
    pub rng: RngState,
    /// Parameters and buffers of every network, names prefixed `G.`, `D.`, `E.`.
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizers: Vec<(String, AdamState<f32>)>,
    pub trace: Vec<TraceRecord>,
}

fn put_u32(w: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| StegoError::Checkpoint(format!("value {v} exceeds u32")))?;
    w.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_name(w: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor<f32>) -> Result<()> {
    put_u32(w, t.shape().len())?;
    for &d in t.shape() {
        put_u32(w, d)?;
    }
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| StegoError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| StegoError::Checkpoint("name is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| StegoError::Checkpoint("tensor size overflows".into()))?;
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| StegoError::Checkpoint("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok(Tensor::new(&shape, data)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.extend_from_slice(&self.config_hash);
        put_name(&mut w, &self.config_text)?;
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&self.cursor.to_le_bytes());
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u32(&mut w, self.params.len())?;
        for (name, t) in &self.params {
            put_name(&mut w, name)?;
            put_tensor(&mut w, t)?;
        }
        put_u32(&mut w, self.optimizers.len())?;
        for (name, st) in &self.optimizers {
            put_name(&mut w, name)?;
            w.extend_from_slice(&st.step.to_le_bytes());
            put_u32(&mut w, st.m.len())?;
            for t in st.m.iter().chain(&st.v) {
                put_tensor(&mut w, t)?;
            }
        }
        w.extend_from_slice(&(self.trace.len() as u64).to_le_bytes());
        for r in &self.trace {
            w.extend_from_slice(&r.step.to_le_bytes());
            for v in [r.l_adv, r.l_rec, r.l_perc, r.total, r.d_acc, r.e_bitacc] {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(w)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(StegoError::Checkpoint("bad magic, not an SGF1 checkpoint".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(StegoError::Checkpoint(format!("unsupported format version {version}")));
        }
        let config_hash = r.array()?;
        let config_text = r.name()?;
        let step = r.u64()?;
        let cursor = r.u64()?;
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        let n = r.u32()?;
        let params = (0..n)
            .map(|_| Ok((r.name()?, r.tensor()?)))
            .collect::<Result<Vec<_>>>()?;
        let groups = r.u32()?;
        let mut optimizers = Vec::with_capacity(groups);
        for _ in 0..groups {
            let name = r.name()?;
            let step = r.u64()?;
            let k = r.u32()?;
            let m = (0..k).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
            let v = (0..k).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
            optimizers.push((name, AdamState { step, m, v }));
        }
        let records = r.u64()?;
        let mut trace = Vec::new();
        for _ in 0..records {
            trace.push(TraceRecord {
                step: r.u64()?,
                l_adv: r.f64()?,
                l_rec: r.f64()?,
                l_perc: r.f64()?,
                total: r.f64()?,
                d_acc: r.f64()?,
                e_bitacc: r.f64()?,
            });
        }
        if r.pos != buf.len() {
            return Err(StegoError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_hash,
            config_text,
            step,
            cursor,
            rng,
            params,
            optimizers,
            trace,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| StegoError::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Parameters whose names start with `prefix`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.params
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(StegoError::io(path, e));
    }
    Ok(())
}
