use std::fs;
use std::path::Path;

use d3fuse::data::{generate_benchmark, write_benchmark, BenchmarkConfig};
use d3fuse::features::{encode_feature_tensor, handcrafted_features, Modality};
use d3fuse::pipeline::*;
use d3fuse::Error;

fn tiny_bench(seed: u64) -> BenchmarkConfig {
    BenchmarkConfig {
        categories: 2,
        train: 6,
        test_good: 3,
        test_defect: 4,
        size: 32,
        seed,
        ..Default::default()
    }
}

fn tiny_data(seed: u64) -> Vec<CategoryData> {
    generate_benchmark(&tiny_bench(seed))
        .unwrap()
        .into_iter()
        .map(Into::into)
        .collect()
}

fn quick_cfg() -> RunConfig {
    RunConfig {
        epochs: 3,
        projection_dim: 8,
        ocsvm_epochs: 100,
        threads: 1,
        ..Default::default()
    }
}

fn dir_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_sample_ratio_one_rescores_to_zero() {
    let data = tiny_data(1);
    let cfg = RunConfig {
        coreset: 1.0,
        ..quick_cfg()
    };
    let opts = ExtractOptions::from_config(&cfg);
    let train = extract_all(&data[0].train[..1], &opts, 0).unwrap();
    let model = CategoryModel::fit("plate", &train, &cfg).unwrap();
    assert_eq!(model.streams, vec![Stream::Rgb, Stream::Ps, Stream::Fused]);
    for scores in model.patch_scores(&train[0]).unwrap() {
        assert!(scores.nearest.iter().all(|&d| d == 0.0), "{:?}", scores.nearest);
    }
}

#[test]
fn refit_gives_identical_bundle_files() {
    let data = tiny_data(2);
    let cfg = quick_cfg();
    let a = fit_categories(&data, &cfg).unwrap();
    let b = fit_categories(&data, &cfg).unwrap();
    assert_eq!(a, b);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    let fa = dir_files(da.path());
    assert_eq!(fa.len(), 1 + 2 * 3);
    assert_eq!(fa, dir_files(db.path()));
}

#[test]
fn rgb_only_bundle_has_one_bank() {
    let data = tiny_data(3);
    let cfg = RunConfig {
        modalities: "rgb".parse().unwrap(),
        ..quick_cfg()
    };
    let bundle = fit_categories(&data[..1], &cfg).unwrap();
    let m = &bundle.categories[0];
    assert_eq!(m.banks.len(), 1);
    assert!(m.fusion.is_none() && m.swap.is_none());
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    assert_eq!(fs::read_dir(dir.path().join(BANKS_DIR)).unwrap().count(), 1);
}

#[test]
fn bundle_round_trips_through_disk() {
    let data = tiny_data(4);
    let cfg = RunConfig {
        root: Some("somewhere".into()),
        out: "elsewhere".into(),
        ..quick_cfg()
    };
    let bundle = fit_categories(&data, &cfg).unwrap();
    assert!(bundle.config.root.is_none());
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(back, bundle);
    let e1 = evaluate_categories(&bundle, &data).unwrap();
    let e2 = evaluate_categories(&back, &data).unwrap();
    for (x, y) in e1.iter().zip(&e2) {
        assert_eq!(x.i_auroc, y.i_auroc);
        assert_eq!(x.p_auroc, y.p_auroc);
    }
}

#[test]
fn missing_bank_file_is_reported() {
    let data = tiny_data(4);
    let bundle = fit_categories(&data[..1], &quick_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let bank = fs::read_dir(dir.path().join(BANKS_DIR))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    fs::remove_file(bank).unwrap();
    assert!(ModelBundle::load(dir.path()).is_err());
}

#[test]
fn eval_outputs_one_row_per_category_and_sidecars() {
    let data = tiny_data(5);
    let bundle = fit_categories(&data, &quick_cfg()).unwrap();
    let evals = evaluate_categories(&bundle, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_eval(dir.path(), &evals).unwrap();
    let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "category,i_auroc,p_auroc");
    assert_eq!(lines.len(), 1 + data.len());
    for (line, e) in lines[1..].iter().zip(&evals) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], e.name);
        assert_eq!(cells[1].parse::<f64>().unwrap(), e.i_auroc);
    }
    let scores = fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
    assert_eq!(scores.lines().count(), 1 + 2 * 7);

    let s = &evals[0].samples[0];
    let base = dir.path().join(HEATMAPS_DIR).join(&evals[0].name).join("good");
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(base.join(format!("{}.json", s.id))).unwrap()).unwrap();
    let (lo, hi) = (sidecar["min"].as_f64().unwrap(), sidecar["max"].as_f64().unwrap());
    let raw = s.scored.map.data();
    assert_eq!(lo, raw.iter().copied().fold(f64::INFINITY, f64::min));
    assert_eq!(hi, raw.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let png = d3fuse::data::read_gray(&base.join(format!("{}.png", s.id))).unwrap();
    for (p, r) in png.data().iter().zip(raw) {
        assert!((p - (r - lo) / (hi - lo)).abs() <= 1.0 / 65535.0);
    }
}

#[test]
fn heatmap_normalization_handles_flat_maps() {
    let flat = d3fuse::Raster::filled(3, 2, 1, 0.7);
    let (img, lo, hi) = normalize_heatmap(&flat);
    assert_eq!((lo, hi), (0.7, 0.7));
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn ablation_arm_list() {
    let names: Vec<String> = ablation_arms(&RunConfig::default())
        .into_iter()
        .map(|a| a.name)
        .collect();
    assert_eq!(
        names,
        [
            "rgb",
            "ps",
            "3d",
            "rgb+ps",
            "rgb+3d",
            "rgb+ps+3d",
            "3d-downsample-1",
            "3d-downsample-4",
            "3d-downsample-40",
            "rgb+3d-interpolation-on",
            "rgb+3d-interpolation-off",
        ]
    );
}

#[test]
fn downsample_factor_one_matches_baseline() {
    let data = tiny_data(6);
    let cfg = quick_cfg();
    let arms: Vec<AblationArm> = ablation_arms(&cfg)
        .into_iter()
        .filter(|a| a.name == "3d" || a.name == "3d-downsample-1")
        .collect();
    let rows = run_arms(&data, &cfg, &arms).unwrap();
    let per = data.len() + 1;
    assert_eq!(rows.len(), 2 * per);
    for (a, b) in rows[..per].iter().zip(&rows[per..]) {
        assert_eq!(a.category, b.category);
        assert!((a.i_auroc - b.i_auroc).abs() <= 1e-12);
        assert!((a.p_auroc - b.p_auroc).abs() <= 1e-12);
    }
}

#[test]
fn full_arm_reproduces_fit_and_eval() {
    let data = tiny_data(7);
    let cfg = quick_cfg();
    let arms: Vec<AblationArm> = ablation_arms(&cfg)
        .into_iter()
        .filter(|a| a.name == "rgb+ps+3d")
        .collect();
    let rows = run_arms(&data, &cfg, &arms).unwrap();
    let evals = evaluate_categories(&fit_categories(&data, &cfg).unwrap(), &data).unwrap();
    for (r, e) in rows.iter().zip(&evals) {
        assert_eq!(r.category, e.name);
        assert_eq!(r.i_auroc, e.i_auroc);
        assert_eq!(r.p_auroc, e.p_auroc);
    }
    let mean = rows.last().unwrap();
    assert_eq!(mean.category, "mean");
    let avg = evals.iter().map(|e| e.i_auroc).sum::<f64>() / evals.len() as f64;
    assert!((mean.i_auroc - avg).abs() < 1e-15);
}

#[test]
fn ablation_csv_has_a_row_per_arm_and_category() {
    let data = tiny_data(8);
    let mut cfg = quick_cfg();
    cfg.modalities = ModalitySet::ALL;
    let rows = run_ablation(&data[..1], &cfg).unwrap();
    assert_eq!(rows.len(), 11 * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(ABLATION_FILE);
    write_ablation(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + rows.len());
    assert!(text.starts_with("arm,modalities,downsample,interpolation,category,i_auroc,p_auroc\n"));
    assert!(text.contains("rgb+3d-interpolation-off,\"rgb,3d\",1,off,plate,"));
}

#[test]
fn thread_count_does_not_change_metrics() {
    let data = tiny_data(9);
    let cfg = quick_cfg();
    let run = |threads| {
        with_threads(threads, || {
            let bundle = fit_categories(&data, &cfg)?;
            evaluate_categories(&bundle, &data)
        })
        .unwrap()
    };
    let (a, b) = (run(1), run(4));
    for (x, y) in a.iter().zip(&b) {
        assert!((x.i_auroc - y.i_auroc).abs() <= 1e-9);
        assert!((x.p_auroc - y.p_auroc).abs() <= 1e-9);
    }
}

#[test]
fn depth_input_gives_three_channel_ps_raster() {
    let data = tiny_data(10);
    let s = &data[0].train[0].sample;
    let r = ps_raster(&s.ps, PsInput::Depth, 0.02).unwrap();
    assert_eq!((r.channels(), r.width(), r.height()), (3, 32, 32));
    let cfg = RunConfig {
        ps_input: PsInput::Depth,
        modalities: "ps".parse().unwrap(),
        ..quick_cfg()
    };
    let evals = evaluate_categories(&fit_categories(&data, &cfg).unwrap(), &data).unwrap();
    assert!(evals.iter().all(|e| (0.0..=1.0).contains(&e.i_auroc)));
}

#[test]
fn fit_and_eval_from_a_dataset_tree() {
    let root = tempfile::tempdir().unwrap();
    let cats = generate_benchmark(&tiny_bench(11)).unwrap();
    write_benchmark(root.path(), &cats).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        root: Some(root.path().to_path_buf()),
        out: out.path().join("model"),
        ..quick_cfg()
    };
    let bundle = cmd_fit(&cfg).unwrap();
    assert_eq!(bundle.categories.len(), 2);
    let eval_cfg = RunConfig {
        out: out.path().join("eval"),
        ..cfg.clone()
    };
    let evals = cmd_eval(&eval_cfg, &cfg.out).unwrap();
    assert_eq!(evals.len(), 2);
    assert!(out.path().join("eval").join(METRICS_FILE).is_file());
}

#[test]
fn imported_backend_reads_tensors_next_to_samples() {
    let root = tempfile::tempdir().unwrap();
    let cats = generate_benchmark(&BenchmarkConfig {
        categories: 1,
        ..tiny_bench(12)
    })
    .unwrap();
    write_benchmark(root.path(), &cats).unwrap();
    let data = load_dataset(root.path()).unwrap();
    for s in data[0].train.iter().chain(&data[0].test) {
        let dir = s.dir.as_ref().unwrap();
        let rgb = handcrafted_features(&s.sample.rgb, 8, Modality::Rgb);
        fs::write(dir.join(RGB_TENSOR_FILE), encode_feature_tensor(&rgb)).unwrap();
    }
    let cfg = RunConfig {
        backend: BackendKind::Imported,
        modalities: "rgb".parse().unwrap(),
        ..quick_cfg()
    };
    let bundle = fit_categories(&data, &cfg).unwrap();
    assert_eq!(bundle.categories[0].banks[0].dim(), 36);
    evaluate_categories(&bundle, &data).unwrap();

    let ps_cfg = RunConfig {
        modalities: "rgb,ps".parse().unwrap(),
        ..cfg
    };
    assert!(matches!(fit_categories(&data, &ps_cfg), Err(Error::Io { .. })));
    let mem = tiny_data(12);
    assert!(matches!(
        fit_categories(
            &mem,
            &RunConfig {
                backend: BackendKind::Imported,
                ..quick_cfg()
            }
        ),
        Err(Error::Argument(_))
    ));
}

#[test]
fn unknown_category_in_eval_is_a_validation_error() {
    let data = tiny_data(13);
    let bundle = fit_categories(&data[..1], &quick_cfg()).unwrap();
    assert!(matches!(evaluate_categories(&bundle, &data), Err(Error::Validation(_))));
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let data = tiny_data(14);
    let cfg = RunConfig {
        coreset: 1.5,
        ..quick_cfg()
    };
    assert!(matches!(fit_categories(&data, &cfg), Err(Error::Argument(_))));
    assert!(matches!(cmd_fit(&quick_cfg()), Err(Error::Argument(_))));
}
