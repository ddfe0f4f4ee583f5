use std::path::{Path, PathBuf};

use desmoke::bench::{
    ab_experiment, evaluate, evaluate_with_samples, render_report, report_csv, EvalConfig, Method, Metric,
};
use desmoke::imgio::{save_image, Image};
use desmoke::neuro::{LossWeights, NetworkSpec, TrainConfig};
use desmoke::scenes::{tissue_scene, write_scenes};
use desmoke::smokesim::{build_dataset, DatasetManifest, Density, ManifestEntry, Split, SynthParams};
use desmoke::Error;

const GOLDEN: &str = include_str!("golden/eval_report.csv");

fn synthetic(dir: &Path, scenes: usize, size: usize, seed: u64) -> DatasetManifest {
    write_scenes(&dir.join("scenes"), scenes, size, seed).unwrap();
    let params = SynthParams {
        test_fraction: 0.5,
        val_fraction: 0.0,
        ..Default::default()
    };
    build_dataset(&dir.join("scenes"), &dir.join("data"), &params, seed).unwrap()
}

/// Test pairs whose smoky image is the clean image itself.
fn smoke_free(dir: &Path, n: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for i in 0..n {
        let rel = PathBuf::from(format!("clean_{}.png", i));
        save_image(&tissue_scene(40, 36, i as u64).unwrap(), dir.join(&rel)).unwrap();
        entries.push(ManifestEntry {
            clean: rel.clone(),
            smoke: rel,
            density: Density::Light,
            seed: i as u64,
            airlight: [1.0; 3],
            split: Split::Test,
        });
    }
    DatasetManifest {
        root: dir.to_path_buf(),
        entries,
    }
}

#[test]
fn identity_on_smoke_free_pairs_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = smoke_free(dir.path(), 3);
    let config = EvalConfig {
        methods: vec![Method::Identity],
        metrics: vec![Metric::Ciede2000, Metric::Rmse, Metric::Psnr],
        ..Default::default()
    };
    let rows = evaluate(&m, &config).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].get(Metric::Ciede2000).unwrap().mean, 0.0);
    assert_eq!(rows[0].get(Metric::Rmse).unwrap().mean, 0.0);
    // infinite PSNR is reported as a failed metric, not an abort
    assert!(rows[0].get(Metric::Psnr).is_none());
    assert!(report_csv(&rows).ends_with(",NA,NA\n"));
}

#[test]
fn one_row_per_method_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 4, 48, 2);
    let config = EvalConfig {
        metrics: Metric::ALL.to_vec(),
        ..Default::default()
    };
    let a = evaluate(&m, &config).unwrap();
    let b = evaluate(&m, &config).unwrap();
    assert_eq!(a.len(), config.methods.len());
    assert_eq!(a, b);
    for row in &a {
        for metric in [Metric::Ciede2000, Metric::Rmse, Metric::Ssim, Metric::GridScore] {
            let r = row.get(metric).unwrap();
            assert_eq!(r.per_image.len(), m.subset(Split::Test).len());
        }
    }
}

#[test]
fn method_order_does_not_change_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 2, 40, 3);
    let fwd = evaluate(&m, &EvalConfig::default()).unwrap();
    let rev = evaluate(
        &m,
        &EvalConfig {
            methods: vec![Method::Veil, Method::Dcp, Method::Identity],
            ..Default::default()
        },
    )
    .unwrap();
    for row in &fwd {
        assert_eq!(Some(row), rev.iter().find(|r| r.method == row.method));
    }
}

#[test]
fn padding_never_reaches_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    // 40x20 content padded to 64x64
    let clean = tissue_scene(40, 20, 1).unwrap();
    let smoky = clean.map(|v| 0.5 * v + 0.4);
    save_image(&clean, dir.path().join("c.png")).unwrap();
    save_image(&smoky, dir.path().join("s.png")).unwrap();
    let m = DatasetManifest {
        root: dir.path().to_path_buf(),
        entries: vec![ManifestEntry {
            clean: "c.png".into(),
            smoke: "s.png".into(),
            density: Density::Heavy,
            seed: 0,
            airlight: [0.8; 3],
            split: Split::Test,
        }],
    };
    let config = |exclude| EvalConfig {
        methods: vec![Method::Identity],
        metrics: vec![Metric::Rmse],
        image_size: Some(64),
        exclude_padding: exclude,
        ..Default::default()
    };
    let native = evaluate(&m, &EvalConfig { image_size: None, ..config(true) }).unwrap()[0]
        .get(Metric::Rmse)
        .unwrap()
        .mean;
    let cropped = evaluate(&m, &config(true)).unwrap()[0].get(Metric::Rmse).unwrap().mean;
    let padded = evaluate(&m, &config(false)).unwrap()[0].get(Metric::Rmse).unwrap().mean;
    // zero rows dilute the error when they are counted
    assert!(padded < cropped);
    assert!((cropped - native).abs() < 0.05 * native, "{} vs {}", cropped, native);
}

#[test]
fn missing_image_is_an_io_error_naming_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = smoke_free(dir.path(), 2);
    m.entries[1].smoke = "gone.png".into();
    let err = evaluate(&m, &EvalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("gone.png"), "{}", err);
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = smoke_free(dir.path(), 1);
    let config = EvalConfig {
        methods: vec![Method::Model(dir.path().join("none.ckpt"))],
        ..Default::default()
    };
    assert!(matches!(evaluate(&m, &config), Err(Error::Io { .. })));
}

#[test]
fn html_references_only_files_in_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 2, 40, 4);
    let out = dir.path().join("report");
    let (rows, triples) = evaluate_with_samples(&m, &EvalConfig::default(), 2).unwrap();
    assert_eq!(triples.len(), 2 * 3);
    render_report(&rows, &triples, &out).unwrap();
    let html = std::fs::read_to_string(out.join("index.html")).unwrap();
    let mut refs = 0;
    for attr in ["src=\"", "href=\""] {
        for part in html.split(attr).skip(1) {
            let target = &part[..part.find('"').unwrap()];
            assert!(!target.starts_with('/') && !target.contains("..") && !target.contains(':'), "{}", target);
            assert!(out.join(target).is_file(), "{}", target);
            refs += 1;
        }
    }
    assert_eq!(refs, 2 * 3 * 3 + 1);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,ciede2000_mean,ciede2000_std,rmse_mean,rmse_std,"));
}

#[test]
fn golden_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 4, 40, 42);
    let rows = evaluate(&m, &EvalConfig::default()).unwrap();
    assert_eq!(report_csv(&rows), GOLDEN);
}

#[test]
fn ab_record_has_two_matching_arms() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 4, 32, 6);
    let spec = NetworkSpec::unet(3, 32, &[4, 8], &[4, 8], 0.2);
    let weights = LossWeights {
        lambda_perc: vec![1.0, 1.0],
        ..Default::default()
    };
    let config = TrainConfig {
        epochs: 1,
        image_size: 32,
        seed: 9,
        ..Default::default()
    };
    let out = dir.path().join("ab");
    let record = ab_experiment(&m, &spec, &weights, &config, &out).unwrap();
    assert_eq!(record.arms.len(), 2);
    let (a, b) = (&record.arms[0], &record.arms[1]);
    assert_eq!((a.name.as_str(), b.name.as_str()), ("none", "ms_ssim"));
    assert_eq!(a.config, b.config);
    let mut aw = a.weights.clone();
    aw.ssim_variant = b.weights.ssim_variant;
    assert_eq!(aw, b.weights);
    assert_ne!(a.weights.ssim_variant, b.weights.ssim_variant);
    assert_eq!(a.grid_scores.len(), record.held_out);
    assert!(record.overhead_percent.is_finite());
    for f in ["ab_record.json", "none/model.ckpt", "ms_ssim/train_log.csv", "ms_ssim/sample_spectrum.png"] {
        assert!(out.join(f).is_file(), "{}", f);
    }
}

#[test]
fn grayscale_inputs_are_scored_against_rgb_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let grey = Image::<f64>::from_fn(40, 40, 1, |_, y, x| ((x + y) % 7) as f64 / 8.0 + 0.1).unwrap();
    save_image(&grey, dir.path().join("g.png")).unwrap();
    let m = DatasetManifest {
        root: dir.path().to_path_buf(),
        entries: vec![ManifestEntry {
            clean: "g.png".into(),
            smoke: "g.png".into(),
            density: Density::Light,
            seed: 0,
            airlight: [1.0; 3],
            split: Split::Test,
        }],
    };
    let rows = evaluate(&m, &EvalConfig::default()).unwrap();
    assert!(rows.iter().all(|r| r.get(Metric::Rmse).is_some()));
}
