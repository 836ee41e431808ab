//! `stegan`: embed, extract, train, evaluate, metrics.
//!
//! Failures print one line `error: <kind>: <detail>` on stderr and exit with
//! 2 (capacity), 3 (io, format, dataset), 4 (flags, dimensions, config hash)
//! or 5 (non-finite training loss). Files are written to a temporary sibling
//! and renamed into place, so a failing command leaves no partial output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stegan_core::baselines::{DctParams, LsbParams};
use stegan_core::evalbench::{emit_report, run_benchmark, BenchConfig, CnnTrainConfig, Method, ReportFormat};
use stegan_core::media::{bits_to_bytes, bytes_to_bits, encode_png, load_image, unframe, HEADER_BITS};
use stegan_core::metrics::{format_db, mae, mse, psnr_from_mse, ssim};
use stegan_core::trainer::{resume_run, train_run, write_atomic, Checkpoint, StegoModel, TrainConfig};
use stegan_core::StegoError;

#[derive(Parser, Debug)]
#[command(name = "stegan", version, about = "Image steganography: LSB, DCT-QIM and GAN embedding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hide a payload file in a cover image.
    Embed {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        payload: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// Stego PNG to write.
        #[arg(long)]
        out: PathBuf,
        /// Accepted for symmetry with `evaluate`; embedding itself is deterministic.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Recover a payload file from a stego image.
    Extract {
        #[arg(long)]
        stego: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// Payload file to write.
        #[arg(long)]
        out: PathBuf,
        /// Accepted for symmetry with `evaluate`; extraction itself is deterministic.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a GAN model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint (its config hash must match).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Directory for checkpoints and the trace CSV.
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Benchmark methods on a directory of PNG covers.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Methods to compare; repeat the flag for several.
        #[arg(long = "method", value_enum, required = true)]
        methods: Vec<MethodKind>,
        #[arg(long, default_value_t = 1)]
        k: u8,
        #[arg(long, default_value_t = 8.0)]
        delta: f64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bpp: Option<usize>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Report formats; repeat for several (default: both).
        #[arg(long = "format", value_enum)]
        formats: Vec<FormatArg>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Training steps of the CNN detector; 0 leaves it out.
        #[arg(long, default_value_t = 0)]
        cnn_steps: usize,
        /// Leave out the quoted reference figures.
        #[arg(long)]
        no_reference: bool,
    },
    /// Print PSNR, SSIM, RMSE and MAE between two images.
    Metrics { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodKind {
    Lsb,
    Dct,
    Gan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "lsb")]
    method: MethodKind,
    /// LSB bits per carrier byte (1..=4).
    #[arg(long)]
    k: Option<u8>,
    /// DCT quantization step (>= 4).
    #[arg(long)]
    delta: Option<f64>,
    /// GAN checkpoint file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// GAN secret planes; must match the checkpoint.
    #[arg(long)]
    bpp: Option<usize>,
}

struct CliError {
    code: u8,
    kind: &'static str,
    detail: String,
}

impl CliError {
    fn flags(detail: impl Into<String>) -> Self {
        CliError {
            code: 4,
            kind: "flags",
            detail: detail.into(),
        }
    }
}

impl From<StegoError> for CliError {
    fn from(e: StegoError) -> Self {
        let (code, kind) = match &e {
            StegoError::CapacityExceeded { .. } => (2, "capacity"),
            StegoError::Io { .. } => (3, "io"),
            StegoError::UnsupportedFormat(_) | StegoError::Decode(_) | StegoError::MalformedHeader { .. } => {
                (3, "format")
            }
            StegoError::Checkpoint(_) | StegoError::Report(_) => (3, "format"),
            StegoError::Dataset(_) => (3, "dataset"),
            StegoError::ConfigHashMismatch { .. } => (4, "config_hash"),
            StegoError::Config(_) | StegoError::InvalidParams(_) => (4, "flags"),
            StegoError::DimensionMismatch(_)
            | StegoError::Extent { .. }
            | StegoError::LengthMismatch(..)
            | StegoError::Tensor(_) => (4, "dimension"),
            StegoError::NonFinite { .. } => (5, "non_finite"),
        };
        CliError {
            code,
            kind,
            detail: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Checks flag combinations before any file is touched.
fn check_method_flags(m: &MethodArgs) -> CliResult<()> {
    let stray = |flag: &str| CliError::flags(format!("--{flag} does not apply to method {:?}", m.method));
    match m.method {
        MethodKind::Lsb => {
            if m.delta.is_some() {
                return Err(stray("delta"));
            }
            if m.checkpoint.is_some() || m.bpp.is_some() {
                return Err(stray(if m.checkpoint.is_some() { "checkpoint" } else { "bpp" }));
            }
            LsbParams::new(m.k.unwrap_or(1))?;
        }
        MethodKind::Dct => {
            if m.k.is_some() {
                return Err(stray("k"));
            }
            if m.checkpoint.is_some() || m.bpp.is_some() {
                return Err(stray(if m.checkpoint.is_some() { "checkpoint" } else { "bpp" }));
            }
            DctParams::with_delta(m.delta.unwrap_or(8.0))?;
        }
        MethodKind::Gan => {
            if m.k.is_some() || m.delta.is_some() {
                return Err(stray(if m.k.is_some() { "k" } else { "delta" }));
            }
            if m.checkpoint.is_none() {
                return Err(CliError::flags("method gan requires --checkpoint"));
            }
            if m.bpp == Some(0) {
                return Err(CliError::flags("--bpp must be >= 1"));
            }
        }
    }
    Ok(())
}

fn load_gan(path: &Path, bpp: Option<usize>) -> CliResult<Method> {
    let model = StegoModel::load(path)?;
    if let Some(b) = bpp {
        if b != model.arch().planes {
            return Err(CliError::flags(format!(
                "--bpp {b} does not match checkpoint bpp {}",
                model.arch().planes
            )));
        }
    }
    Ok(Method::Gan(Arc::new(model)))
}

fn build_method(m: &MethodArgs) -> CliResult<Method> {
    Ok(match m.method {
        MethodKind::Lsb => Method::Lsb(LsbParams::new(m.k.unwrap_or(1))?),
        MethodKind::Dct => Method::Dct(DctParams::with_delta(m.delta.unwrap_or(8.0))?),
        MethodKind::Gan => load_gan(m.checkpoint.as_deref().expect("checked"), m.bpp)?,
    })
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| StegoError::io(path, e).into())
}

fn cmd_embed(cover: &Path, payload: &Path, m: &MethodArgs, out: &Path) -> CliResult<()> {
    check_method_flags(m)?;
    let method = build_method(m)?;
    let cover = load_image(cover)?;
    let cover = match &method {
        Method::Gan(model) => cover.with_channels(model.arch().channels)?,
        _ => cover,
    };
    let bits = bytes_to_bits(&read_file(payload)?);
    let stego = method.embed(&cover, &bits)?;
    write_atomic(out, &encode_png(&stego)?)?;
    let capacity = method.capacity(&cover)?;
    let used = bits.len() + HEADER_BITS;
    println!(
        "capacity: {used}/{capacity} bits ({:.2}%)",
        100.0 * used as f64 / capacity as f64
    );
    println!("psnr={}", format_db(psnr_from_mse(mse(&cover, &stego)?)));
    Ok(())
}

fn cmd_extract(stego: &Path, m: &MethodArgs, out: &Path) -> CliResult<()> {
    check_method_flags(m)?;
    let method = build_method(m)?;
    let stego = load_image(stego)?;
    let stego = match &method {
        Method::Gan(model) => stego.with_channels(model.arch().channels)?,
        _ => stego,
    };
    let bits = unframe(&method.decode_raw(&stego)?)?;
    write_atomic(out, &bits_to_bytes(&bits))?;
    println!("extracted {} bits", bits.len());
    Ok(())
}

fn cmd_train(config: &Path, resume: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (ck, trace) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            resume_run(&cfg, &ck, Some(out))?
        }
        None => train_run(&cfg, Some(out))?,
    };
    if let Some(last) = trace.last() {
        println!(
            "step={} total={} d_acc={} e_bitacc={}",
            last.step, last.total, last.d_acc, last.e_bitacc
        );
    }
    println!("trained to step {}; wrote {}", ck.step, out.join("final.sgf").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    dataset: &Path,
    kinds: &[MethodKind],
    k: u8,
    delta: f64,
    checkpoint: Option<&Path>,
    bpp: Option<usize>,
    out: &Path,
    formats: &[FormatArg],
    seed: u64,
    cnn_steps: usize,
    reference: bool,
) -> CliResult<()> {
    let lsb = LsbParams::new(k)?;
    let dct = DctParams::with_delta(delta)?;
    if kinds.contains(&MethodKind::Gan) && checkpoint.is_none() {
        return Err(CliError::flags("method gan requires --checkpoint"));
    }
    let mut methods = Vec::new();
    for kind in kinds {
        methods.push(match kind {
            MethodKind::Lsb => Method::Lsb(lsb),
            MethodKind::Dct => Method::Dct(dct.clone()),
            MethodKind::Gan => load_gan(checkpoint.expect("checked"), bpp)?,
        });
    }
    let config = BenchConfig {
        seed,
        cnn: (cnn_steps > 0).then(|| CnnTrainConfig {
            steps: cnn_steps,
            seed,
            ..CnnTrainConfig::default()
        }),
        include_reference: reference,
        ..BenchConfig::default()
    };
    let report = run_benchmark(dataset, &methods, &config)?;
    let formats: Vec<ReportFormat> = if formats.is_empty() {
        vec![ReportFormat::Csv, ReportFormat::Json]
    } else {
        formats
            .iter()
            .map(|f| match f {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Json => ReportFormat::Json,
            })
            .collect()
    };
    for path in emit_report(&report, out, &formats)? {
        println!("wrote {}", path.display());
    }
    for cell in report.cells.iter().filter(|c| !c.reference) {
        println!("{}: n={} failures={}", cell.method, cell.n, cell.failures);
    }
    Ok(())
}

fn cmd_metrics(a: &Path, b: &Path) -> CliResult<()> {
    let (a, b) = (load_image(a)?, load_image(b)?);
    let m = mse(&a, &b)?;
    println!("psnr={}", format_db(psnr_from_mse(m)));
    println!("ssim={}", ssim(&a, &b)?);
    println!("rmse={}", m.sqrt());
    println!("mae={}", mae(&a, &b)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Embed {
            cover,
            payload,
            method,
            out,
            seed: _,
        } => cmd_embed(&cover, &payload, &method, &out),
        Command::Extract {
            stego,
            method,
            out,
            seed: _,
        } => cmd_extract(&stego, &method, &out),
        Command::Train {
            config,
            resume,
            out,
            seed,
        } => cmd_train(&config, resume.as_deref(), &out, seed),
        Command::Evaluate {
            dataset,
            methods,
            k,
            delta,
            checkpoint,
            bpp,
            out,
            formats,
            seed,
            cnn_steps,
            no_reference,
        } => cmd_evaluate(
            &dataset,
            &methods,
            k,
            delta,
            checkpoint.as_deref(),
            bpp,
            &out,
            &formats,
            seed,
            cnn_steps,
            !no_reference,
        ),
        Command::Metrics { a, b } => cmd_metrics(&a, &b),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: flags: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(4);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind, one_line(&e.detail));
            ExitCode::from(e.code)
        }
    }
}
