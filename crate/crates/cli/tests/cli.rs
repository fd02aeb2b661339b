mod common;

use std::fs;
use std::path::Path;

use common::{jointrecon, jointrecon_env, p, write_two_pixel_dataset};
use jointrecon_cli::manifest::{verify, RunManifest};
use jointrecon_core::io::{load_complex, load_real, read_json, write_json};
use jointrecon_core::prior::{Channels, GaussianMixture, GmPrior};
use jointrecon_core::Shape;
use tempfile::TempDir;

fn run_manifest(dir: &Path) -> RunManifest {
    read_json(&dir.join("run.json")).unwrap()
}

fn ok(out: &common::Output) {
    assert_eq!(out.code, 0, "stdout:\n{}\nstderr:\n{}", out.stdout, out.stderr);
}

/// 16×16 dataset with 4 training and 2 test pairs.
fn tiny_dataset(dir: &Path) {
    ok(&jointrecon(&[
        "phantom", "--out", p(dir), "--size", "16", "--train", "4", "--test", "2", "--seed", "5",
    ]));
}

/// An isotropic joint mixture over 16×16 images, usable with `--oracle-gm`.
fn tiny_gm(path: &Path) {
    let plane = 16 * 16;
    let mean: Vec<f64> = [0.5, 0.3, 0.0].iter().flat_map(|&m| std::iter::repeat_n(m, plane)).collect();
    let gm = GaussianMixture::new(vec![1.0], vec![mean], vec![0.3]).unwrap();
    write_json(&GmPrior::new(Shape::square(16), Channels::Joint, gm).unwrap(), path).unwrap();
}

#[test]
fn phantom_is_reproducible() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    tiny_dataset(&a);
    tiny_dataset(&b);
    let (ma, mb) = (run_manifest(&a), run_manifest(&b));
    assert_eq!(ma.content_hash, mb.content_hash);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    verify(&a).unwrap();
}

#[test]
fn phantom_usage_errors() {
    let t = TempDir::new().unwrap();
    assert_eq!(jointrecon(&["phantom"]).code, 2);
    let out = jointrecon(&["phantom", "--out", p(&t.path().join("d")), "--size", "8"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains(">= 16"), "{}", out.stderr);
    assert_eq!(jointrecon(&["phantom", "--out", p(t.path()), "--counts", "-1"]).code, 2);
}

#[test]
fn existing_output_needs_force() {
    let t = TempDir::new().unwrap();
    let d = t.path().join("d");
    tiny_dataset(&d);
    let again = jointrecon(&["phantom", "--out", p(&d), "--size", "16", "--train", "4", "--test", "2"]);
    assert_eq!(again.code, 2);
    ok(&jointrecon(&[
        "phantom", "--out", p(&d), "--size", "16", "--train", "4", "--test", "2", "--force",
    ]));
}

#[test]
fn config_file_matches_flags() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("run.cfg");
    fs::write(&cfg, "# tiny set\nsize = 16\ntrain = 4\ntest = 2\nseed = 5\n").unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    tiny_dataset(&a);
    ok(&jointrecon(&["phantom", "--config", p(&cfg), "--out", p(&b)]));
    assert_eq!(run_manifest(&a).content_hash, run_manifest(&b).content_hash);
    // Command-line flags win over the file.
    let c = t.path().join("c");
    ok(&jointrecon(&["phantom", "--config", p(&cfg), "--out", p(&c), "--seed", "6"]));
    assert_ne!(run_manifest(&a).content_hash, run_manifest(&c).content_hash);
}

#[test]
fn train_writes_checkpoint_reproducibly() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    let train = |out: &Path| {
        jointrecon(&[
            "train", "--data", p(&data), "--out", p(out), "--epochs", "2", "--levels", "10", "--widths", "4,4,4",
            "--batch", "2",
        ])
    };
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&train(&a));
    ok(&train(&b));
    for f in ["params.bin", "params.json", "loss.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("params.bin")).unwrap(), fs::read(b.join("params.bin")).unwrap());
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    // header, the untrained baseline and two epochs
    assert_eq!(loss.lines().count(), 4, "{loss}");
    verify(&a).unwrap();
}

#[test]
fn train_all_writes_three_networks() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    let out = t.path().join("nets");
    ok(&jointrecon(&[
        "train", "--data", p(&data), "--out", p(&out), "--modality", "all", "--epochs", "1", "--levels", "10",
        "--widths", "4,4,4",
    ]));
    for ch in ["joint", "pet", "mri"] {
        assert!(out.join(ch).join("params.bin").exists(), "{ch}");
    }
}

#[test]
fn train_errors() {
    let t = TempDir::new().unwrap();
    let missing = jointrecon(&["train", "--data", p(&t.path().join("nope")), "--out", p(&t.path().join("o"))]);
    assert_eq!(missing.code, 3);

    let data = t.path().join("data");
    tiny_dataset(&data);
    let bad_lr = jointrecon(&["train", "--data", p(&data), "--out", p(&t.path().join("o")), "--lr", "-1"]);
    assert_eq!(bad_lr.code, 2);

    let blown = jointrecon(&[
        "train", "--data", p(&data), "--out", p(&t.path().join("o2")), "--lr", "1e6", "--epochs", "3", "--levels",
        "10", "--widths", "4,4,4",
    ]);
    assert_eq!(blown.code, 4, "{}", blown.stderr);
}

#[test]
fn reconstruct_exit_codes() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    let out = t.path().join("zf");
    ok(&jointrecon(&["reconstruct", "--data", p(&data), "--method", "zerofill", "--out", p(&out)]));
    assert!(out.join("samples/0000/zerofill/mri.jrg").exists());
    assert!(out.join("samples/0001/truth/pet.jrg").exists());
    verify(&out).unwrap();

    let no_prior = jointrecon(&["reconstruct", "--data", p(&data), "--method", "joint", "--out", p(&t.path().join("j"))]);
    assert_eq!(no_prior.code, 3, "{}", no_prior.stderr);
    let no_data = jointrecon(&[
        "reconstruct", "--data", p(&t.path().join("nope")), "--method", "mlem", "--out", p(&t.path().join("m")),
    ]);
    assert_eq!(no_data.code, 3);
    let no_method = jointrecon(&["reconstruct", "--data", p(&data), "--out", p(&t.path().join("m"))]);
    assert_eq!(no_method.code, 2);
}

#[test]
fn presets_set_acceleration() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    for (preset, accel) in [("fig2", 3.0), ("fig3", 5.0), ("fig4", 4.0), ("fig5", 4.0)] {
        let out = t.path().join(preset);
        ok(&jointrecon(&[
            "reconstruct", "--data", p(&data), "--method", "zerofill", "--preset", preset, "--out", p(&out),
        ]));
        let acq: serde_json::Value = read_json(&out.join("samples/0000/acq.json")).unwrap();
        assert_eq!(acq["config"]["accel"].as_f64(), Some(accel), "{preset}");
    }
}

#[test]
fn oracle_prior_matches_two_pixel_posterior() {
    const COPIES: usize = 300;
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    write_two_pixel_dataset(&data, COPIES);
    let out = t.path().join("out");
    ok(&jointrecon(&[
        "reconstruct", "--data", p(&data), "--method", "joint", "--oracle-gm", p(&data.join("prior.json")),
        "--update", "langevin", "--sigma-min", "0.01", "--sigma-max", "1", "--levels", "100", "--steps", "20",
        "--step-scale", "0.2", "--lambda-pet", "1", "--lambda-mri", "25", "--out", p(&out),
    ]));
    let mut mean = [0.0; 3];
    for i in 0..COPIES {
        let dir = out.join(format!("samples/{i:04}/joint"));
        let u = load_real(&dir.join("pet.jrg")).unwrap().get(0, 0);
        let v = load_complex(&dir.join("mri.jrg")).unwrap().get(0, 0);
        mean[0] += u / COPIES as f64;
        mean[1] += v.re / COPIES as f64;
        mean[2] += v.im / COPIES as f64;
    }
    let oracle = common::oracle_posterior_mean(&common::two_pixel());
    let err = common::relative_error(&mean, &oracle);
    assert!(err < 0.05, "sampler mean {mean:?} vs oracle {oracle:?}: {err}");
}

#[test]
fn thread_count_does_not_change_outputs() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    let gm = t.path().join("gm.json");
    tiny_gm(&gm);
    let recon = |out: &Path, env: &[(&str, &str)], jobs: &str| {
        jointrecon_env(
            &[
                "reconstruct", "--data", p(&data), "--method", "all", "--oracle-gm", p(&gm), "--levels", "10",
                "--tv-iters", "20", "--jobs", jobs, "--out", p(out),
            ],
            env,
        )
    };
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&recon(&a, &[], "1"));
    ok(&recon(&b, &[("JOINTRECON_THREADS", "1")], "1"));
    ok(&recon(&c, &[("JOINTRECON_THREADS", "3")], "2"));
    let h = run_manifest(&a).content_hash;
    assert_eq!(h, run_manifest(&b).content_hash);
    assert_eq!(h, run_manifest(&c).content_hash);
}

#[test]
fn evaluate_is_deterministic() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("data");
    tiny_dataset(&data);
    let gm = t.path().join("gm.json");
    tiny_gm(&gm);
    let run = t.path().join("run");
    ok(&jointrecon(&[
        "reconstruct", "--data", p(&data), "--method", "joint,mlem,zerofill", "--oracle-gm", p(&gm), "--levels",
        "10", "--out", p(&run),
    ]));
    let (a, b) = (t.path().join("ea"), t.path().join("eb"));
    ok(&jointrecon(&["evaluate", "--run", p(&run), "--out", p(&a)]));
    ok(&jointrecon(&["evaluate", "--run", p(&run), "--out", p(&b)]));
    for f in ["metrics.csv", "summary.csv", "montage_pet.png", "montage_mri.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    // header + 2 samples × (joint pet, joint mri, mlem, zerofill)
    assert_eq!(metrics.lines().count(), 9, "{metrics}");
    verify(&a).unwrap();

    assert_eq!(jointrecon(&["evaluate", "--run", p(&run), "--out", p(&a)]).code, 2);
    ok(&jointrecon(&["evaluate", "--run", p(&run), "--out", p(&a), "--force"]));
    let missing = jointrecon(&["evaluate", "--run", p(&t.path().join("nope")), "--out", p(&t.path().join("e"))]);
    assert_eq!(missing.code, 3);
    assert_eq!(jointrecon(&["evaluate", "--out", p(&t.path().join("e"))]).code, 2);
}

#[test]
fn tampered_outputs_fail_verification() {
    let t = TempDir::new().unwrap();
    let d = t.path().join("d");
    tiny_dataset(&d);
    verify(&d).unwrap();
    let target = d.join("test/0000/mask.json");
    let mut bytes = fs::read(&target).unwrap();
    bytes.push(b' ');
    fs::write(&target, bytes).unwrap();
    assert!(verify(&d).is_err());
}
