use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d3fuse::data::{read_normal_map, write_png16, SyntheticSceneSpec};
use d3fuse::geometry::{render_lambertian, LightingRig, NormalMap};
use d3fuse::pipeline::{valid_mask_path, MODEL_FILE};

fn d3fuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d3fuse"))
        .args(args)
        .env_remove("D3FUSE_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn write_light_stack(dir: &Path, images: usize, rig_lights: usize) -> PathBuf {
    let rig = LightingRig::ring(rig_lights.max(images), 35.0).unwrap();
    let flat = NormalMap::from_normals(12, 10, vec![[0.0, 0.0, 1.0]; 120]).unwrap();
    let stack = render_lambertian(&flat, &rig);
    let lights = dir.join("lights");
    fs::create_dir_all(&lights).unwrap();
    for (i, img) in stack.images().iter().take(images).enumerate() {
        write_png16(&lights.join(format!("{i:03}.png")), img).unwrap();
    }
    let rig_file = dir.join("rig.txt");
    fs::write(&rig_file, LightingRig::ring(rig_lights, 35.0).unwrap().to_text()).unwrap();
    rig_file
}

#[test]
fn ps_solve_flat_stack_gives_upward_normals() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_light_stack(dir.path(), 4, 4);
    let out = dir.path().join("out").join("normals.png");
    let o = d3fuse(&[
        "ps-solve",
        "--lights",
        s(&dir.path().join("lights")),
        "--rig",
        s(&rig),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let nmap = read_normal_map(&out, Some(&valid_mask_path(&out))).unwrap();
    assert!(nmap.valid().iter().all(|v| *v));
    for n in nmap.normals() {
        assert!(
            n[0].abs() < 1e-3 && n[1].abs() < 1e-3 && (n[2] - 1.0).abs() < 1e-3,
            "{n:?}"
        );
    }
}

#[test]
fn ps_solve_image_count_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_light_stack(dir.path(), 3, 4);
    let out = dir.path().join("normals.png");
    let o = d3fuse(&[
        "ps-solve",
        "--lights",
        s(&dir.path().join("lights")),
        "--rig",
        s(&rig),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn missing_input_directory_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_light_stack(dir.path(), 4, 4);
    let o = d3fuse(&[
        "ps-solve",
        "--lights",
        s(&dir.path().join("nope")),
        "--rig",
        s(&rig),
        "--out",
        s(&dir.path().join("n.png")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(d3fuse(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(d3fuse(&["fit", "--modalities", "rgb,x"]).status.code(), Some(2));
    assert_eq!(d3fuse(&["fit"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = d3fuse(&["fit", "--root", s(dir.path()), "--coreset", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_spec_is_reproducible_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.json");
    fs::write(&spec, serde_json::to_string(&SyntheticSceneSpec::flat(16, 16)).unwrap()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = d3fuse(&[
            "synth",
            "--spec",
            s(&spec),
            "--count",
            "3",
            "--out",
            s(&out),
            "--category",
            "tile",
            "--seed",
            "9",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (tree(&out), String::from_utf8(o.stdout).unwrap())
    };
    let (a, stdout) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    assert!(stdout.contains("tile") && stdout.contains("train") && stdout.contains("total 3"));
    assert!(dir.path().join("a/tile/train/good").is_dir());
}

#[test]
fn fit_and_eval_are_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let bench = dir.path().join("bench.json");
    fs::write(
        &bench,
        r#"{"categories":1,"train":5,"test_good":3,"test_defect":3,"size":32}"#,
    )
    .unwrap();
    let o = d3fuse(&[
        "synth",
        "--benchmark-config",
        s(&bench),
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"epochs": 2, "projection_dim": 8, "ocsvm_epochs": 50, "seed": 3}"#,
    )
    .unwrap();
    let run = |name: &str| {
        let model = dir.path().join(name).join("model");
        let eval = dir.path().join(name).join("eval");
        let common = [
            "--config",
            s(&cfg),
            "--root",
            s(&data),
            "--threads",
            "1",
            "--epochs",
            "3",
        ];
        let o = d3fuse(&[&["fit", "--out", s(&model)][..], &common].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = d3fuse(&[&["eval", "--out", s(&eval), "--model", s(&model)][..], &common].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (tree(&model), tree(&eval))
    };
    let first = run("one");
    assert_eq!(first, run("two"));

    let saved: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("one/model").join(MODEL_FILE)).unwrap()).unwrap();
    assert_eq!(saved["config"]["epochs"], 3);
    assert_eq!(saved["config"]["seed"], 3);
    let metrics = fs::read_to_string(dir.path().join("one/eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn eval_without_a_model_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = d3fuse(&["eval", "--root", s(dir.path()), "--out", s(&dir.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
