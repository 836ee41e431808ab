//! Training configuration as flat `key = value` text.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are an
//! error. Keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dataset` | (required) | directory of PNG covers |
//! | `crop` | 64 | square crop extent, multiple of 16 |
//! | `batch` | 8 | covers per step |
//! | `steps` | 1000 | step budget |
//! | `lr_g`, `lr_d`, `lr_e` | 2e-4 | Adam learning rates |
//! | `beta1`, `beta2` | 0.5, 0.999 | Adam moment decay |
//! | `lambda_rec`, `lambda_perc` | 10, 1 | loss weights |
//! | `seed` | 42 | root seed |
//! | `checkpoint_interval` | 1000 | steps between checkpoint files |
//! | `bpp` | 1 | secret planes |
//! | `channels` | 3 | cover channels (1 or 3) |
//! | `gen_width`, `disc_width`, `ext_width` | 32 | base widths |
//! | `feat_width` | 16 | perceptual feature network width |
//! | `d_steps`, `g_steps`, `e_steps` | 1 | phase repetitions per step |
//! | `early_stop` | false | stop when extractor accuracy plateaus |
//! | `early_stop_window` | 500 | plateau window in steps |
//! | `early_stop_tol` | 0.002 | minimum accuracy gain per window |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Result, StegoError};
use crate::gan::{GanArch, LossWeights, DISC_BLOCKS};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub crop: usize,
    pub batch: usize,
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_e: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub bpp: usize,
    pub channels: usize,
    pub gen_width: usize,
    pub disc_width: usize,
    pub ext_width: usize,
    pub feat_width: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub e_steps: usize,
    pub early_stop: bool,
    pub early_stop_window: u64,
    pub early_stop_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::new(),
            crop: 64,
            batch: 8,
            steps: 1000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_e: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::default(),
            seed: 42,
            checkpoint_interval: 1000,
            bpp: 1,
            channels: 3,
            gen_width: 32,
            disc_width: 32,
            ext_width: 32,
            feat_width: 16,
            d_steps: 1,
            g_steps: 1,
            e_steps: 1,
            early_stop: false,
            early_stop_window: 500,
            early_stop_tol: 0.002,
        }
    }
}

/// Keys left out of the config hash: they do not change what a given step
/// computes, so a run may be resumed with a longer budget, a moved dataset
/// or a different checkpoint cadence.
const UNHASHED: [&str; 3] = ["dataset", "steps", "checkpoint_interval"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| StegoError::Config(format!("invalid value {value:?} for key {key}")))
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut have_dataset = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StegoError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => {
                    c.dataset = PathBuf::from(value);
                    have_dataset = true;
                }
                "crop" => c.crop = parse(key, value)?,
                "batch" => c.batch = parse(key, value)?,
                "steps" => c.steps = parse(key, value)?,
                "lr_g" => c.lr_g = parse(key, value)?,
                "lr_d" => c.lr_d = parse(key, value)?,
                "lr_e" => c.lr_e = parse(key, value)?,
                "beta1" => c.beta1 = parse(key, value)?,
                "beta2" => c.beta2 = parse(key, value)?,
                "lambda_rec" => c.weights.lambda_rec = parse(key, value)?,
                "lambda_perc" => c.weights.lambda_perc = parse(key, value)?,
                "seed" => c.seed = parse(key, value)?,
                "checkpoint_interval" => c.checkpoint_interval = parse(key, value)?,
                "bpp" => c.bpp = parse(key, value)?,
                "channels" => c.channels = parse(key, value)?,
                "gen_width" => c.gen_width = parse(key, value)?,
                "disc_width" => c.disc_width = parse(key, value)?,
                "ext_width" => c.ext_width = parse(key, value)?,
                "feat_width" => c.feat_width = parse(key, value)?,
                "d_steps" => c.d_steps = parse(key, value)?,
                "g_steps" => c.g_steps = parse(key, value)?,
                "e_steps" => c.e_steps = parse(key, value)?,
                "early_stop" => c.early_stop = parse(key, value)?,
                "early_stop_window" => c.early_stop_window = parse(key, value)?,
                "early_stop_tol" => c.early_stop_tol = parse(key, value)?,
                other => return Err(StegoError::Config(format!("unknown key {other:?}"))),
            }
        }
        if !have_dataset {
            return Err(StegoError::Config("missing required key dataset".into()));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| StegoError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("crop", self.crop as u64),
            ("batch", self.batch as u64),
            ("checkpoint_interval", self.checkpoint_interval),
            ("bpp", self.bpp as u64),
            ("gen_width", self.gen_width as u64),
            ("disc_width", self.disc_width as u64),
            ("ext_width", self.ext_width as u64),
            ("feat_width", self.feat_width as u64),
            ("d_steps", self.d_steps as u64),
            ("g_steps", self.g_steps as u64),
            ("e_steps", self.e_steps as u64),
            ("early_stop_window", self.early_stop_window),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(StegoError::Config(format!("{k} must be >= 1")));
            }
        }
        let multiple = 1 << DISC_BLOCKS;
        if self.crop % multiple != 0 {
            return Err(StegoError::Config(format!("crop {} must be a multiple of {multiple}", self.crop)));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(StegoError::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        for (k, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lr_e", self.lr_e)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(StegoError::Config(format!("{k} must be finite and >= 0")));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(StegoError::Config(format!("{k} must be in [0, 1)")));
            }
        }
        LossWeights::new(self.weights.lambda_rec, self.weights.lambda_perc)
            .map_err(|e| StegoError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn arch(&self) -> GanArch {
        GanArch {
            channels: self.channels,
            planes: self.bpp,
            gen_width: self.gen_width,
            disc_width: self.disc_width,
            ext_width: self.ext_width,
        }
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.display().to_string()),
            ("crop", self.crop.to_string()),
            ("batch", self.batch.to_string()),
            ("steps", self.steps.to_string()),
            ("lr_g", format!("{:?}", self.lr_g)),
            ("lr_d", format!("{:?}", self.lr_d)),
            ("lr_e", format!("{:?}", self.lr_e)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("lambda_rec", format!("{:?}", self.weights.lambda_rec)),
            ("lambda_perc", format!("{:?}", self.weights.lambda_perc)),
            ("seed", self.seed.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("bpp", self.bpp.to_string()),
            ("channels", self.channels.to_string()),
            ("gen_width", self.gen_width.to_string()),
            ("disc_width", self.disc_width.to_string()),
            ("ext_width", self.ext_width.to_string()),
            ("feat_width", self.feat_width.to_string()),
            ("d_steps", self.d_steps.to_string()),
            ("g_steps", self.g_steps.to_string()),
            ("e_steps", self.e_steps.to_string()),
            ("early_stop", self.early_stop.to_string()),
            ("early_stop_window", self.early_stop_window.to_string()),
            ("early_stop_tol", format!("{:?}", self.early_stop_tol)),
        ]
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 over the canonical text of every hashed key.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip_and_defaults() {
        let c = TrainConfig::parse("# comment\ndataset = /tmp/x\n\ncrop=32\nlambda_rec = 3.5\nearly_stop = true\n").unwrap();
        assert_eq!(c.crop, 32);
        assert_eq!(c.weights.lambda_rec, 3.5);
        assert_eq!(c.weights.lambda_perc, 1.0);
        assert_eq!(c.seed, 42);
        assert!(c.early_stop);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::parse("crop = 64").is_err());
        assert!(TrainConfig::parse("dataset = d\ncrop = 40").is_err());
        assert!(TrainConfig::parse("dataset = d\nbatch = 0").is_err());
        assert!(TrainConfig::parse("dataset = d\nwhat = 1").is_err());
        assert!(TrainConfig::parse("dataset = d\nlambda_perc = -1").is_err());
        assert!(TrainConfig::parse("dataset = d\nsteps").is_err());
        assert!(TrainConfig::parse("dataset = d\nchannels = 2").is_err());
    }

    #[test]
    fn hash_ignores_budget_and_paths_only() {
        let a = TrainConfig::parse("dataset = a\nsteps = 10").unwrap();
        let b = TrainConfig::parse("dataset = b\nsteps = 20\ncheckpoint_interval = 3").unwrap();
        let c = TrainConfig::parse("dataset = a\nsteps = 10\nseed = 7").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(hex(&a.hash()).len(), 64);
    }
}
