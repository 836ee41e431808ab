use proptest::prelude::*;
use stegan_core::baselines::{dct_capacity, dct_embed, dct_extract, lsb_capacity, lsb_embed, lsb_extract, DctParams, LsbParams};
use stegan_core::evalbench::{
    balanced_accuracy, parse_csv_rows, BenchCell, BenchMetadata, BenchReport, CellValue, Metric,
};
use stegan_core::media::{bits_to_bytes, bytes_to_bits, decode_png, encode_png, frame, unframe, Image, HEADER_BITS};
use stegan_core::metrics::{mae, psnr, rmse, ssim, PairKind};

fn image(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(any::<u8>(), w * h * c).prop_map(move |px| Image::new(w, h, c, px).unwrap())
    })
}

fn image_pair(min_side: usize, max_side: usize) -> impl Strategy<Value = (Image, Image)> {
    (min_side..=max_side, min_side..=max_side, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        let n = w * h * c;
        (proptest::collection::vec(any::<u8>(), n), proptest::collection::vec(any::<u8>(), n))
            .prop_map(move |(a, b)| (Image::new(w, h, c, a).unwrap(), Image::new(w, h, c, b).unwrap()))
    })
}

fn bits(max: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..=1, 0..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_metrics_are_ordered_and_symmetric((a, b) in image_pair(1, 24)) {
        let (r, m) = (rmse(&a, &b).unwrap(), mae(&a, &b).unwrap());
        prop_assert!(r + 1e-12 >= m);
        prop_assert!(m >= 0.0 && r <= 255.0);
        prop_assert_eq!(r, rmse(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_is_bounded_and_symmetric((a, b) in image_pair(11, 24)) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_images_are_perfect(a in image(24)) {
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        if a.width() >= 11 && a.height() >= 11 {
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn png_round_trip_is_lossless(a in image(20)) {
        prop_assert_eq!(decode_png(&encode_png(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn framing_round_trips(b in bits(300)) {
        let f = frame(&b);
        prop_assert_eq!(f.len(), b.len() + HEADER_BITS);
        prop_assert_eq!(unframe(&f).unwrap(), b.clone());
        let mut padded = f.clone();
        padded.extend(std::iter::repeat(1).take(17));
        prop_assert_eq!(unframe(&padded).unwrap(), b);
    }

    #[test]
    fn byte_bit_conversion_round_trips(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
    }

    #[test]
    fn lsb_round_trips_and_bounds_distortion(cover in image(24), k in 1u8..=4, b in bits(2000)) {
        let p = LsbParams::new(k).unwrap();
        let cap = lsb_capacity(&cover, p);
        match lsb_embed(&cover, &b, p) {
            Ok(stego) => {
                prop_assert!(b.len() + HEADER_BITS <= cap);
                prop_assert_eq!(lsb_extract(&stego, p).unwrap(), b);
                let limit = (1i32 << k) - 1;
                for (x, y) in cover.pixels().iter().zip(stego.pixels()) {
                    prop_assert!((*x as i32 - *y as i32).abs() <= limit);
                }
            }
            Err(_) => prop_assert!(b.len() + HEADER_BITS > cap),
        }
    }

    #[test]
    fn dct_round_trips(cover in image_pair(8, 40).prop_map(|p| p.0), delta in 6.0f64..20.0, seed in any::<u64>()) {
        let p = DctParams::with_delta(delta).unwrap();
        let cap = dct_capacity(&cover, &p);
        prop_assume!(cap > HEADER_BITS);
        let n = (cap - HEADER_BITS).min(200);
        let b: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8 ^ (i % 3 == 0) as u8).collect();
        let stego = dct_embed(&cover, &b, &p).unwrap();
        prop_assert_eq!(dct_extract(&stego, &p).unwrap(), b);
    }

    #[test]
    fn swapping_labels_mirrors_balanced_accuracy(
        cover in proptest::collection::vec(0.0f64..1.0, 1..40),
        stego in proptest::collection::vec(0.0f64..1.0, 1..40),
    ) {
        let a = balanced_accuracy(&cover, &stego, 0.5).unwrap();
        let flip = |v: &[f64]| v.iter().map(|s| 1.0 - s).collect::<Vec<_>>();
        // Flipping scores around the threshold swaps strict and non-strict
        // comparisons, so scores exactly at 0.5 are excluded above.
        prop_assume!(cover.iter().chain(&stego).all(|s| *s != 0.5));
        let swapped = balanced_accuracy(&flip(&cover), &flip(&stego), 0.5).unwrap();
        prop_assert!((a + swapped - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn report_formats_agree(values in proptest::collection::vec(
        prop_oneof![3 => -1e6f64..1e6, 1 => Just(f64::INFINITY)], 1..12)
    ) {
        let metrics = [Metric::Ssim, Metric::Psnr, Metric::Rmse, Metric::Mae, Metric::Ber];
        let cells: Vec<BenchCell> = values
            .chunks(3)
            .enumerate()
            .map(|(i, chunk)| BenchCell {
                dataset: "fixtures".into(),
                method: format!("m{i}"),
                params: String::new(),
                n: i + 1,
                failures: 0,
                reference: false,
                values: chunk
                    .iter()
                    .enumerate()
                    .map(|(j, v)| CellValue::new(metrics[j % metrics.len()], PairKind::CoverStego, *v))
                    .collect(),
            })
            .collect();
        let mut report = BenchReport {
            metadata: BenchMetadata {
                dataset: "fixtures".into(),
                seed: 1,
                config_hash: "00".into(),
                threshold: 0.5,
                images: 1,
                decoded: 1,
                methods: cells.iter().map(|c| c.method.clone()).collect(),
            },
            cells,
            notes: vec![],
        };
        report.mark_best();
        let json = BenchReport::from_json(&report.to_json().unwrap()).unwrap();
        prop_assert_eq!(&json, &report);
        let rows = parse_csv_rows(&report.to_csv().unwrap()).unwrap();
        prop_assert_eq!(rows, report.rows());
    }
}
