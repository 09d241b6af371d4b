use dfm_core::dataset::{
    compute_norm_stats, read_dataset, split_dataset, ExprCoeffs, ExprSample, ExpressionDataset, SplitMode, VaPoint,
    DEFAULT_COEFF_BOUND, EXPR_DIM, STD_FLOOR,
};
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = (f64, f64, Vec<f64>)> {
    (-1.0..=1.0f64, -1.0..=1.0f64, prop::collection::vec(-10.0..=10.0f64, EXPR_DIM))
}

fn dataset_strategy(max: usize) -> impl Strategy<Value = ExpressionDataset> {
    (prop::collection::vec(sample_strategy(), 1..max), 1usize..4).prop_map(|(rows, videos)| {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (v, a, e))| ExprSample {
                video_id: format!("v{}", i % videos),
                frame_idx: (i / videos) as u64,
                va: VaPoint::new(v, a),
                expr: ExprCoeffs::from_slice(&e).unwrap(),
            })
            .collect();
        ExpressionDataset::new(samples)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_invariants(d in dataset_strategy(60)) {
        let s = compute_norm_stats(&d).unwrap();
        prop_assert!(s.expr_std.iter().all(|&x| x >= STD_FLOOR));
        let normed: Vec<ExprCoeffs> = d.samples.iter().map(|x| s.normalize(&x.expr)).collect();
        for j in 0..EXPR_DIM {
            let mean = normed.iter().map(|e| e[j]).sum::<f64>() / normed.len() as f64;
            prop_assert!(mean.abs() < 1e-9, "mean {mean}");
            if s.expr_std[j] > STD_FLOOR {
                let var = normed.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / normed.len() as f64;
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9, "std {}", var.sqrt());
            }
        }
        for (x, n) in d.samples.iter().zip(&normed) {
            let back = s.denormalize(n);
            for j in 0..EXPR_DIM {
                prop_assert!((back[j] - x.expr[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_partitions(d in dataset_strategy(80), frac in 0.05..0.95f64, seed in any::<u64>(), shuffled in any::<bool>()) {
        let mode = if shuffled { SplitMode::Shuffled } else { SplitMode::TemporalPrefix };
        let (a, b) = split_dataset(&d, frac, mode, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), d.len());
        let key = |s: &ExprSample| (s.video_id.clone(), s.frame_idx);
        let mut all: Vec<_> = a.samples.iter().chain(&b.samples).map(key).collect();
        all.sort();
        let mut orig: Vec<_> = d.samples.iter().map(key).collect();
        orig.sort();
        prop_assert_eq!(all, orig);
        if shuffled {
            prop_assert_eq!(a.len(), (frac * d.len() as f64).ceil() as usize);
        } else {
            // Every training frame precedes every test frame of the same video.
            for t in &b.samples {
                prop_assert!(a.samples.iter().filter(|s| s.video_id == t.video_id).all(|s| s.frame_idx < t.frame_idx));
            }
        }
    }

    #[test]
    fn jsonl_round_trip(d in dataset_strategy(30)) {
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), DEFAULT_COEFF_BOUND).unwrap();
        prop_assert_eq!(back.samples, d.samples);
    }
}

#[test]
fn three_line_file_in_order() {
    let zeros = vec!["0"; 30].join(",");
    let text: String = (0..3)
        .map(|i| format!("{{\"video_id\":\"v1\",\"frame\":{i},\"va\":[0.{i},0.0],\"expr\":[{zeros}]}}\n"))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(&path, text).unwrap();
    let d = dfm_core::dataset::load_dataset(&path).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.samples.iter().map(|s| s.frame_idx).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(d.samples[2].va, VaPoint::new(0.2, 0.0));
}
