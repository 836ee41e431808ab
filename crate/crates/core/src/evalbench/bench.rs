//! Per-image embed/extract/score runs aggregated into a [`BenchReport`].
//!
//! Each image gets a uniform random payload that fills the method's
//! capacity. The leading whole bytes of the payload, read as a square
//! grayscale image, form the secret image; the same bytes read back from the
//! stego form the recovered image. Extraction reads raw carrier bits, so one
//! flipped header bit costs a bit error rather than the whole image.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest, Sha256};
use stegan_tensor::par::{self, Exec};
use stegan_tensor::SeedSplitter;

use crate::baselines::{dct_capacity, dct_decode_bits, dct_embed, lsb_capacity, lsb_embed, DctParams, LsbParams};
use crate::error::{Result, StegoError};
use crate::media::{bits_to_image, bits_to_plane, frame, load_image, Image, HEADER_BITS};
use crate::metrics::{mse, psnr_from_mse, ssim, PairKind, SSIM_WINDOW};
use crate::trainer::{hex, list_pngs, StegoModel};

use super::detect::{balanced_accuracy, chi_square_lsb_score, CnnDetector, CnnTrainConfig};
use super::report::{reference_cells, BenchCell, BenchMetadata, BenchReport, CellValue, Metric};

/// Stream domain of per-image payloads.
const PAYLOAD_DOMAIN: u32 = 8;

/// GAN extents must be multiples of this; other pixels are left as they are.
const GAN_MULTIPLE: usize = 8;

/// An embedding method under test.
#[derive(Clone, Debug)]
pub enum Method {
    Lsb(LsbParams),
    Dct(DctParams),
    Gan(Arc<StegoModel>),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Lsb(p) => format!("lsb(k={})", p.k()),
            Method::Dct(p) => format!("dct(delta={})", p.delta()),
            Method::Gan(m) => format!("gan(bpp={})", m.arch().planes),
        }
    }

    /// Full parameter description for the report metadata.
    pub fn params(&self) -> String {
        match self {
            Method::Lsb(p) => format!("k={}", p.k()),
            Method::Dct(p) => {
                let coefs: Vec<String> = p.coefficients().iter().map(|(u, v)| format!("{u}:{v}")).collect();
                format!("delta={} luma_only={} coefficients={}", p.delta(), p.luma_only(), coefs.join(","))
            }
            Method::Gan(m) => format!("config_hash={} bpp={}", hex(&m.config.hash()), m.arch().planes),
        }
    }

    /// The cover as this method sees it (GAN models fix the channel count).
    fn prepare(&self, image: &Image) -> Result<Image> {
        match self {
            Method::Gan(m) => image.with_channels(m.arch().channels),
            _ => Ok(image.clone()),
        }
    }

    fn gan_region(image: &Image) -> Result<(usize, usize, usize, usize)> {
        let (w, h) = (image.width() / GAN_MULTIPLE * GAN_MULTIPLE, image.height() / GAN_MULTIPLE * GAN_MULTIPLE);
        if w == 0 || h == 0 {
            return Err(StegoError::Extent {
                extent: image.width().min(image.height()),
                multiple: GAN_MULTIPLE,
            });
        }
        let (x0, y0) = image.center_offset(w, h);
        Ok((x0, y0, w, h))
    }

    /// Raw carrier bits, header included.
    pub fn capacity(&self, cover: &Image) -> Result<usize> {
        Ok(match self {
            Method::Lsb(p) => lsb_capacity(cover, *p),
            Method::Dct(p) => dct_capacity(cover, p),
            Method::Gan(m) => {
                let (_, _, w, h) = Self::gan_region(cover)?;
                m.arch().planes * w * h
            }
        })
    }

    /// Embeds `payload` behind the length header.
    pub fn embed(&self, cover: &Image, payload: &[u8]) -> Result<Image> {
        match self {
            Method::Lsb(p) => lsb_embed(cover, payload, *p),
            Method::Dct(p) => dct_embed(cover, payload, p),
            Method::Gan(m) => {
                let (x0, y0, w, h) = Self::gan_region(cover)?;
                let framed = frame(payload);
                let available = m.arch().planes * w * h;
                if framed.len() > available {
                    return Err(StegoError::CapacityExceeded {
                        needed: framed.len(),
                        available,
                    });
                }
                let plane = bits_to_plane(&framed, h, w, m.arch().planes)?;
                let patch = m.embed_plane(&cover.crop(x0, y0, w, h)?, &plane)?;
                let mut stego = cover.clone();
                stego.paste(&patch, x0, y0)?;
                Ok(stego)
            }
        }
    }

    /// Every carrier bit as decoded, header included, without unframing.
    pub fn decode_raw(&self, stego: &Image) -> Result<Vec<u8>> {
        match self {
            Method::Lsb(p) => {
                let k = p.k() as usize;
                Ok(stego
                    .pixels()
                    .iter()
                    .flat_map(|&b| (0..k).rev().map(move |pos| (b >> pos) & 1))
                    .collect())
            }
            Method::Dct(p) => Ok(dct_decode_bits(stego, p)),
            Method::Gan(m) => {
                let (x0, y0, w, h) = Self::gan_region(stego)?;
                Ok(m.extract_plane(&stego.crop(x0, y0, w, h)?)?.bits().to_vec())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub seed: u64,
    pub threshold: f64,
    /// Train and score the CNN detector on each method's stegos.
    pub cnn: Option<CnnTrainConfig>,
    /// Append the published comparison figures as labelled reference cells.
    pub include_reference: bool,
    pub exec: Exec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 42,
            threshold: super::DETECTION_THRESHOLD,
            cnn: None,
            include_reference: false,
            exec: Exec::default(),
        }
    }
}

impl BenchConfig {
    /// SHA-256 over the settings and method parameters that shape the numbers.
    pub fn hash(&self, methods: &[Method]) -> String {
        let mut h = Sha256::new();
        h.update(format!("seed={}\nthreshold={:?}\n", self.seed, self.threshold));
        if let Some(c) = &self.cnn {
            h.update(format!(
                "cnn crop={} width={} steps={} batch={} lr={:?} seed={}\n",
                c.crop, c.width, c.steps, c.batch, c.lr, c.seed
            ));
        }
        for m in methods {
            h.update(format!("method {} {}\n", m.label(), m.params()));
        }
        hex(&h.finalize())
    }
}

/// Everything measured on one image for one method.
#[derive(Clone, Debug)]
pub struct ImageOutcome {
    pub cover: Image,
    pub stego: Image,
    pub cover_stego: [f64; 4],
    pub secret_recovered: [f64; 4],
    pub ber: f64,
    pub chi_cover: f64,
    pub chi_stego: f64,
}

/// `[ssim, psnr, rmse, mae]`.
fn quality(a: &Image, b: &Image) -> Result<[f64; 4]> {
    let m = mse(a, b)?;
    Ok([ssim(a, b)?, psnr_from_mse(m), m.sqrt(), crate::metrics::mae(a, b)?])
}

/// Side of the square secret image that `bits` payload bits can carry.
fn secret_side(bits: usize) -> usize {
    ((bits / 8) as f64).sqrt().floor() as usize
}

/// Runs one method on one cover with payload stream `index`.
pub fn evaluate_image(method: &Method, image: &Image, seed: u64, index: u32) -> Result<ImageOutcome> {
    let cover = method.prepare(image)?;
    let capacity = method.capacity(&cover)?;
    let n = capacity.saturating_sub(HEADER_BITS);
    let side = secret_side(n);
    if side < SSIM_WINDOW {
        return Err(StegoError::CapacityExceeded {
            needed: HEADER_BITS + 8 * SSIM_WINDOW * SSIM_WINDOW,
            available: capacity,
        });
    }
    let mut rng = SeedSplitter::new(seed).substream(PAYLOAD_DOMAIN, index);
    let payload: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
    let stego = method.embed(&cover, &payload)?;
    let raw = method.decode_raw(&stego)?;
    let recovered = &raw[HEADER_BITS..HEADER_BITS + n];
    let errors = payload.iter().zip(recovered).filter(|(a, b)| a != b).count();
    let secret_bits = 8 * side * side;
    let secret = bits_to_image(&payload[..secret_bits], side, side, 1)?;
    let rec = bits_to_image(&recovered[..secret_bits], side, side, 1)?;
    Ok(ImageOutcome {
        cover_stego: quality(&cover, &stego)?,
        secret_recovered: quality(&secret, &rec)?,
        ber: errors as f64 / n as f64,
        chi_cover: chi_square_lsb_score(&cover),
        chi_stego: chi_square_lsb_score(&stego),
        cover,
        stego,
    })
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Trains on the first half of the images and scores the second half.
fn cnn_accuracy(outcomes: &[&ImageOutcome], config: CnnTrainConfig, threshold: f64) -> Result<f64> {
    if outcomes.len() < 2 {
        return Err(StegoError::Dataset("CNN detector needs at least two images".into()));
    }
    let split = outcomes.len() / 2;
    let (train, test) = outcomes.split_at(split);
    let covers: Vec<Image> = train.iter().map(|o| o.cover.clone()).collect();
    let stegos: Vec<Image> = train.iter().map(|o| o.stego.clone()).collect();
    let det = CnnDetector::train(&covers, &stegos, config)?;
    let cs = test.iter().map(|o| det.score(&o.cover)).collect::<Result<Vec<_>>>()?;
    let ss = test.iter().map(|o| det.score(&o.stego)).collect::<Result<Vec<_>>>()?;
    balanced_accuracy(&cs, &ss, threshold)
}

fn method_cell(
    dataset: &str,
    method: &Method,
    outcomes: &[Result<ImageOutcome>],
    config: &BenchConfig,
    notes: &mut Vec<String>,
) -> Result<BenchCell> {
    let ok: Vec<&ImageOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    for (i, o) in outcomes.iter().enumerate() {
        if let Err(e) = o {
            notes.push(format!("{}: image {i} skipped: {e}", method.label()));
        }
    }
    let mut values = Vec::new();
    if !ok.is_empty() {
        let kinds = [
            (PairKind::CoverStego, ok.iter().map(|o| o.cover_stego).collect::<Vec<_>>()),
            (PairKind::SecretRecovered, ok.iter().map(|o| o.secret_recovered).collect()),
        ];
        for (kind, rows) in kinds {
            for (j, metric) in [Metric::Ssim, Metric::Psnr, Metric::Rmse, Metric::Mae].into_iter().enumerate() {
                values.push(CellValue::new(metric, kind, mean(rows.iter().map(|r| r[j]))));
            }
        }
        values.push(CellValue::new(Metric::Ber, PairKind::SecretRecovered, mean(ok.iter().map(|o| o.ber))));
        let cs: Vec<f64> = ok.iter().map(|o| o.chi_cover).collect();
        let ss: Vec<f64> = ok.iter().map(|o| o.chi_stego).collect();
        let acc = balanced_accuracy(&cs, &ss, config.threshold)?;
        values.push(CellValue::new(Metric::DetectChiSquare, PairKind::CoverStego, acc));
        if let Some(cnn) = config.cnn {
            match cnn_accuracy(&ok, cnn, config.threshold) {
                Ok(acc) => values.push(CellValue::new(Metric::DetectCnn, PairKind::CoverStego, acc)),
                Err(e) => notes.push(format!("{}: cnn detector skipped: {e}", method.label())),
            }
        }
    }
    Ok(BenchCell {
        dataset: dataset.to_string(),
        method: method.label(),
        params: method.params(),
        n: ok.len(),
        failures: outcomes.len() - ok.len(),
        reference: false,
        values,
    })
}

/// Benchmarks every method on every PNG of `dataset_dir`.
///
/// Images that fail to load or process are skipped and counted; the run
/// fails only when nothing succeeds.
pub fn run_benchmark(dataset_dir: impl AsRef<Path>, methods: &[Method], config: &BenchConfig) -> Result<BenchReport> {
    let dir = dataset_dir.as_ref();
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(StegoError::Dataset(format!("no PNG files in {}", dir.display())));
    }
    let images: Vec<Result<Image>> = par::map(config.exec, paths.len(), |i| load_image(&paths[i]));
    let mut notes = Vec::new();
    for (p, img) in paths.iter().zip(&images) {
        if let Err(e) = img {
            notes.push(format!("{} skipped: {e}", p.display()));
        }
    }
    if images.iter().all(|r| r.is_err()) {
        return Err(StegoError::Dataset(format!("no decodable images in {}", dir.display())));
    }
    let dataset = dataset_name(dir);
    let mut cells = Vec::new();
    for method in methods {
        let outcomes: Vec<Result<ImageOutcome>> = par::map(config.exec, images.len(), |i| match &images[i] {
            Ok(img) => evaluate_image(method, img, config.seed, i as u32),
            Err(e) => Err(StegoError::Dataset(format!("image {i} not decodable: {e}"))),
        });
        cells.push(method_cell(&dataset, method, &outcomes, config, &mut notes)?);
    }
    if !methods.is_empty() && cells.iter().all(|c| c.n == 0) {
        return Err(StegoError::Dataset(format!(
            "every image failed for every method: {}",
            notes.first().map(String::as_str).unwrap_or("no detail")
        )));
    }
    if config.include_reference {
        cells.extend(reference_cells());
    }
    let mut report = BenchReport {
        metadata: BenchMetadata {
            dataset,
            seed: config.seed,
            config_hash: config.hash(methods),
            threshold: config.threshold,
            images: paths.len(),
            decoded: images.iter().filter(|r| r.is_ok()).count(),
            methods: methods.iter().map(|m| format!("{}: {}", m.label(), m.params())).collect(),
        },
        cells,
        notes,
    };
    report.mark_best();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::write_fixture_dataset;

    #[test]
    fn lsb_outcome_recovers_the_secret_exactly() {
        let cover = crate::evalbench::synthetic_cover(32, 32, 3, 1, 0).unwrap();
        let o = evaluate_image(&Method::Lsb(LsbParams::new(2).unwrap()), &cover, 7, 0).unwrap();
        assert_eq!(o.ber, 0.0);
        assert_eq!(o.secret_recovered[0], 1.0);
        assert_eq!(o.secret_recovered[1], f64::INFINITY);
        assert!(o.cover_stego[1].is_finite());
    }

    #[test]
    fn small_carriers_fail_per_image() {
        let cover = Image::filled(16, 16, 1, 100).unwrap();
        let dct = Method::Dct(DctParams::default());
        assert!(matches!(evaluate_image(&dct, &cover, 1, 0), Err(StegoError::CapacityExceeded { .. })));
    }

    #[test]
    fn failures_are_counted_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_dataset(dir.path(), 3, 32, 32, 3, 4).unwrap();
        std::fs::write(dir.path().join("zz_broken.png"), b"not a png").unwrap();
        let methods = [Method::Lsb(LsbParams::new(1).unwrap())];
        let r = run_benchmark(dir.path(), &methods, &BenchConfig::default()).unwrap();
        assert_eq!(r.metadata.images, 4);
        assert_eq!(r.metadata.decoded, 3);
        assert_eq!(r.cells[0].n, 3);
        assert_eq!(r.cells[0].failures, 1);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn all_failing_is_an_error_and_no_methods_is_not() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_dataset(dir.path(), 2, 16, 16, 1, 4).unwrap();
        let dct = [Method::Dct(DctParams::default())];
        assert!(run_benchmark(dir.path(), &dct, &BenchConfig::default()).is_err());
        let r = run_benchmark(dir.path(), &[], &BenchConfig::default()).unwrap();
        assert!(r.cells.is_empty());
        assert_eq!(r.metadata.images, 2);
        let empty = tempfile::tempdir().unwrap();
        assert!(run_benchmark(empty.path(), &[], &BenchConfig::default()).is_err());
    }

    #[test]
    fn execution_mode_does_not_change_results() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_dataset(dir.path(), 4, 32, 32, 3, 9).unwrap();
        let methods = [Method::Lsb(LsbParams::new(3).unwrap()), Method::Dct(DctParams::default())];
        let seq = BenchConfig {
            exec: Exec::Sequential,
            ..BenchConfig::default()
        };
        let par = BenchConfig {
            exec: Exec::Parallel,
            ..BenchConfig::default()
        };
        assert_eq!(
            run_benchmark(dir.path(), &methods, &seq).unwrap(),
            run_benchmark(dir.path(), &methods, &par).unwrap()
        );
    }
}
