use std::path::{Path, PathBuf};

use jointrecon_core::eval::{
    collect_metrics, make_report, montage_size, nrmse, psnr, ssim, ssim_with_range, MontageSidecar, PSNR_CAP_DB,
    SSIM_WINDOW,
};
use jointrecon_core::io::{read_json, save_complex, save_real};
use jointrecon_core::sampler::Modality;
use jointrecon_core::{ComplexGrid, RandomStream, RealGrid, Shape};
use num_complex::Complex64;
use proptest::prelude::*;

fn random_image(shape: Shape, s: &mut RandomStream) -> RealGrid {
    RealGrid::from_fn(shape, |_, _| s.uniform_range(0.0, 1.0))
}

#[test]
fn psnr_formula_points() {
    let shape = Shape::square(8);
    let r = random_image(shape, &mut RandomStream::new(0, "p"));
    assert_eq!(psnr(&r, &r, 1.0).unwrap(), PSNR_CAP_DB);
    // MSE = peak² with a constant offset of peak.
    assert!((psnr(&r.map(|v| v + 2.0), &r, 2.0).unwrap()).abs() < 1e-12);
    // MSE = 0.01 with peak 1.
    assert!((psnr(&r.map(|v| v + 0.1), &r, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&r, &r, 0.0).is_err());
    assert!(psnr(&RealGrid::zeros(Shape::square(4)), &r, 1.0).is_err());
}

#[test]
fn nrmse_formula_points() {
    let r = random_image(Shape::square(8), &mut RandomStream::new(1, "n"));
    assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
    assert!((nrmse(&RealGrid::zeros(r.shape()), &r).unwrap() - 1.0).abs() < 1e-15);
    assert!((nrmse(&r.scaled(2.0), &r).unwrap() - 1.0).abs() < 1e-15);
    assert!(nrmse(&r, &RealGrid::zeros(r.shape())).is_err());
}

#[test]
fn ssim_formula_points() {
    let shape = Shape::square(12);
    let r = random_image(shape, &mut RandomStream::new(2, "s"));
    assert_eq!(ssim(&r, &r).unwrap(), 1.0);
    // On flat windows the structure term is 1 and the luminance term of −ref
    // is negative; on textured windows both flip sign and cancel. A
    // piecewise-flat reference is mostly flat windows.
    let flat = RealGrid::from_fn(Shape::square(32), |_, c| if c < 16 { 1.0 } else { 2.0 });
    assert!(ssim(&flat.scaled(-1.0), &flat).unwrap() < 0.0);
    assert!(ssim(&RealGrid::zeros(Shape::square(6)), &RealGrid::zeros(Shape::square(6))).is_err());

    // A constant offset leaves variances and covariance unchanged, so only
    // the luminance term (2μxμy + C1)/(μx² + μy² + C1) remains per window.
    let c = 0.3;
    let l = r.max() - r.min();
    let c1 = (0.01 * l).powi(2);
    let k = SSIM_WINDOW;
    let mut expect = 0.0;
    let mut count = 0.0;
    for i in 0..=shape.height - k {
        for j in 0..=shape.width - k {
            let mut my = 0.0;
            for a in i..i + k {
                for b in j..j + k {
                    my += r.get(a, b);
                }
            }
            my /= (k * k) as f64;
            let mx = my + c;
            expect += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            count += 1.0;
        }
    }
    expect /= count;
    let got = ssim(&r.map(|v| v + c), &r).unwrap();
    assert!(got < 1.0);
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn psnr_is_shift_invariant(seed in 0u64..10_000, c in -5.0f64..5.0) {
        let mut s = RandomStream::new(seed, "shift");
        let x = random_image(Shape::square(9), &mut s);
        let r = random_image(Shape::square(9), &mut s);
        let a = psnr(&x, &r, 1.0).unwrap();
        let b = psnr(&x.map(|v| v + c), &r.map(|v| v + c), 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn nrmse_is_scale_covariant(seed in 0u64..10_000, alpha in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
        let mut s = RandomStream::new(seed, "scale");
        let x = random_image(Shape::square(9), &mut s);
        let r = random_image(Shape::square(9), &mut s);
        let a = nrmse(&x, &r).unwrap();
        let b = nrmse(&x.scaled(alpha), &r.scaled(alpha)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..10_000) {
        let mut s = RandomStream::new(seed, "sym");
        let x = random_image(Shape::square(10), &mut s);
        let r = random_image(Shape::square(10), &mut s);
        let a = ssim_with_range(&x, &r, 1.0).unwrap();
        let b = ssim_with_range(&r, &x, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }
}

/// Writes `<run>/samples/<sample>/<method>/{pet,mri}.jrg` for a few samples.
fn fake_run(root: &Path, methods: &[&str], samples: usize, seed: u64) -> PathBuf {
    let shape = Shape::square(16);
    let mut s = RandomStream::new(seed, "run");
    for i in 0..samples {
        let dir = root.join("samples").join(format!("{i:04}"));
        let pet = random_image(shape, &mut s);
        let mri = ComplexGrid::from_fn(shape, |_, _| Complex64::new(s.uniform(), 0.1 * s.normal()));
        let t = dir.join("truth");
        std::fs::create_dir_all(&t).unwrap();
        save_real(&pet, &t.join("pet.jrg")).unwrap();
        save_complex(&mri, &t.join("mri.jrg")).unwrap();
        for m in methods {
            let d = dir.join(m);
            std::fs::create_dir_all(&d).unwrap();
            save_real(&RealGrid::from_fn(shape, |r, c| (pet.get(r, c) + 0.05 * s.normal()).max(0.0)), &d.join("pet.jrg")).unwrap();
            let noisy = ComplexGrid::from_fn(shape, |r, c| mri.get(r, c) + Complex64::new(0.05 * s.normal(), 0.0));
            save_complex(&noisy, &d.join("mri.jrg")).unwrap();
        }
    }
    root.to_path_buf()
}

#[test]
fn report_counts_rows_and_writes_montages() {
    let dir = tempfile::tempdir().unwrap();
    let run = fake_run(&dir.path().join("run"), &["joint", "mlem"], 3, 0);
    let out = dir.path().join("report");
    let report = make_report(&[run], &out).unwrap();
    assert_eq!(report.metrics.len(), 12);
    assert_eq!(report.summary.len(), 2 * 2 * 3);

    let keys: Vec<_> = report.metrics.iter().map(|r| (r.sample.clone(), r.method.clone(), r.modality)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(report.metrics.iter().all(|r| r.psnr_db.is_finite() && r.ssim.is_finite() && r.nrmse >= 0.0));

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sample,method,modality,psnr_db,ssim,nrmse");
    assert_eq!(csv.lines().count(), 13);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "method,modality,metric,mean,std,n");

    for modality in ["pet", "mri"] {
        let img = image::open(out.join(format!("montage_{modality}.png"))).unwrap().to_luma8();
        // truth + 2 methods + 2 error rows, 3 sample columns.
        let (h, w) = montage_size(5, 3, 16);
        assert_eq!((img.height() as usize, img.width() as usize), (h, w));
        let side: MontageSidecar = read_json(&out.join(format!("montage_{modality}.json"))).unwrap();
        assert_eq!(side.panels.len(), 15);
        assert_eq!(side.rows, vec!["truth", "joint", "mlem", "error:joint", "error:mlem"]);
    }
}

#[test]
fn montage_layout_arithmetic() {
    assert_eq!(montage_size(1, 1, 10), (14, 14));
    assert_eq!(montage_size(3, 2, 8), (3 * 8 + 4 * 2, 2 * 8 + 3 * 2));
}

#[test]
fn report_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = fake_run(&dir.path().join("run"), &["joint", "zerofill"], 2, 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    make_report(std::slice::from_ref(&run), &a).unwrap();
    make_report(&[run], &b).unwrap();
    for name in ["metrics.csv", "summary.csv", "montage_pet.png", "montage_mri.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn report_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(make_report(&[empty], &dir.path().join("r1")).is_err());
    assert!(make_report(&[], &dir.path().join("r2")).is_err());
    assert!(matches!(
        collect_metrics(&[dir.path().join("absent")]),
        Err(jointrecon_core::Error::MissingInput(_))
    ));

    let run = fake_run(&dir.path().join("run"), &["joint"], 2, 2);
    std::fs::remove_file(run.join("samples/0001/truth/pet.jrg")).unwrap();
    match collect_metrics(&[run]) {
        Err(jointrecon_core::Error::Report(msg)) => assert!(msg.contains("0001/truth/pet.jrg"), "{msg}"),
        other => panic!("expected a report error, got {other:?}"),
    }
}

#[test]
fn mri_is_scored_on_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let shape = Shape::square(16);
    let mut s = RandomStream::new(3, "phase");
    let truth = ComplexGrid::from_fn(shape, |_, _| Complex64::new(s.uniform_range(0.2, 1.0), 0.0));
    // A pure global phase rotation has the same magnitude.
    let rotated = ComplexGrid::from_fn(shape, |r, c| truth.get(r, c) * Complex64::from_polar(1.0, 0.7));
    for (m, g) in [("truth", &truth), ("rot", &rotated)] {
        let d = root.join("samples/0000").join(m);
        std::fs::create_dir_all(&d).unwrap();
        save_complex(g, &d.join("mri.jrg")).unwrap();
    }
    let rows = collect_metrics(&[root]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].modality, Modality::Mri);
    assert!(rows[0].nrmse < 1e-6, "{}", rows[0].nrmse);
}
