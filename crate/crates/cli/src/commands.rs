use std::path::{Path, PathBuf};

use jointrecon_core::acquisition::{
    acquire, build_dataset, prepare_output_dir, AcquisitionConfig, DatasetConfig, DatasetManifest, PhantomSpec, Sample,
    Split,
};
use jointrecon_core::baselines::{mlem, tv_cs, zero_filled, MlemConfig, TvConfig};
use jointrecon_core::eval::make_report;
use jointrecon_core::io::{save_complex, save_real, write_json};
use jointrecon_core::operators::RadonGeometry;
use jointrecon_core::prior::{
    load_checkpoint, save_checkpoint, train_on_dataset, write_log_csv, Channels, GmPrior, ScoreNet, ScoreSource,
    TrainConfig,
};
use jointrecon_core::sampler::{
    reconstruct_joint, reconstruct_single, write_trace_csv, Measurements, Modality, NoiseSchedule, SamplerConfig,
    SingleImage,
};
use jointrecon_core::{Error, RandomStream, Result};
use rayon::prelude::*;

use crate::args::{EvaluateArgs, Method, PhantomArgs, ReconstructArgs, TrainArgs, TrainModality};
use crate::manifest::{RunRecord, MANIFEST_FILE};
use crate::presets::default_raster;

pub fn phantom(a: &PhantomArgs, argv: &[String]) -> Result<()> {
    let phantom = PhantomSpec::with_size(a.size);
    phantom.validate()?;
    let (d, n) = a.preset.map_or(default_raster(a.size), |p| p.raster(a.size));
    let cfg = DatasetConfig {
        n_train: a.train,
        n_test: a.test,
        master_seed: a.seed,
        geometry: RadonGeometry::uniform(a.size, a.detectors.unwrap_or(d), a.angles.unwrap_or(n))?,
        acquisition: AcquisitionConfig {
            counts_target: a.counts,
            mri_noise_std: a.mri_noise,
            accel: a.accel.or(a.preset.map(|p| p.accel())).unwrap_or(4.0),
            center_fraction: a.center_fraction,
        },
        phantom,
    };
    let record = RunRecord::new(argv, a, a.seed);
    let m = build_dataset(&cfg, &a.out, a.force)?;
    let run = record.write(&a.out)?;
    eprintln!(
        "wrote {} samples ({} train, {} test); content hash {}",
        m.samples.len(),
        a.train,
        a.test,
        run.content_hash
    );
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    DatasetManifest::load(&a.data)?;
    let schedule = NoiseSchedule::new(a.sigma_min, a.sigma_max, a.levels)?;
    let widths: [usize; 3] = a
        .widths
        .as_slice()
        .try_into()
        .map_err(|_| Error::Parameter("--widths takes three values".into()))?;
    let configs: Vec<TrainConfig> = a
        .modality
        .channels()
        .into_iter()
        .map(|channels| TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch,
            learning_rate: a.lr,
            momentum: a.momentum,
            clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
            schedule,
            seed: a.seed,
            channels,
            widths,
            crop: a.crop,
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut record = RunRecord::new(argv, a, a.seed);
    record.input("dataset", &a.data.join("manifest.json"))?;
    prepare_output_dir(&a.out, a.force)?;
    for cfg in &configs {
        let dir = if a.modality == TrainModality::All {
            a.out.join(cfg.channels.as_str())
        } else {
            a.out.clone()
        };
        let name = cfg.channels.as_str();
        let outcome = train_on_dataset(&a.data, cfg, |e| {
            eprintln!(
                "[{name}] epoch {:>3}  train {:.4}  held-out {:.4}  {:.1}s",
                e.epoch, e.train_loss, e.heldout_loss, e.wall_seconds
            )
        })?;
        save_checkpoint(&outcome.params, &schedule, a.seed, &dir)?;
        write_log_csv(&outcome.log, &dir.join("loss.csv"))?;
    }
    let run = record.write(&a.out)?;
    eprintln!("content hash {}", run.content_hash);
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

/// A score source for one channel set and the noise ladder it expects.
struct Prior {
    channels: Channels,
    source: Box<dyn ScoreSource>,
    schedule: NoiseSchedule,
}

/// The checkpoint for `channels` under `root`: `root` itself if it holds
/// that network, else `root/<channels>`.
fn checkpoint_dir(root: &Path, channels: Channels) -> Result<PathBuf> {
    if !root.exists() {
        return Err(Error::MissingInput(format!("checkpoint {} not found", root.display())));
    }
    if root.join("params.json").exists() {
        let (_, desc) = load_checkpoint(root)?;
        if desc.channels == channels {
            return Ok(root.to_path_buf());
        }
    }
    let sub = root.join(channels.as_str());
    if sub.join("params.json").exists() {
        return Ok(sub);
    }
    Err(Error::MissingInput(format!(
        "no {} checkpoint in {}",
        channels.as_str(),
        root.display()
    )))
}

fn load_priors(a: &ReconstructArgs, methods: &[Method], record: &mut RunRecord) -> Result<Vec<Prior>> {
    let needed: Vec<Channels> = methods.iter().filter_map(|m| m.channels()).collect();
    if needed.is_empty() {
        return Ok(Vec::new());
    }
    let mut priors = Vec::new();
    if let Some(path) = &a.oracle_gm {
        if !path.exists() {
            return Err(Error::MissingInput(format!("oracle prior {} not found", path.display())));
        }
        record.input("oracle_gm", path)?;
        let gm = GmPrior::load(path)?;
        for ch in needed {
            priors.push(Prior {
                channels: ch,
                source: Box::new(gm.marginal(ch)?),
                schedule: NoiseSchedule::default(),
            });
        }
    } else if let Some(root) = &a.checkpoint {
        for ch in needed {
            let dir = checkpoint_dir(root, ch)?;
            let (params, desc) = load_checkpoint(&dir)?;
            record.input(format!("checkpoint_{}", ch.as_str()), &dir.join("params.bin"))?;
            priors.push(Prior {
                channels: ch,
                source: Box::new(ScoreNet::new(params)?),
                schedule: desc.schedule,
            });
        }
    } else {
        return Err(Error::MissingInput(
            "diffusion methods need --checkpoint or --oracle-gm".into(),
        ));
    }
    Ok(priors)
}

fn sampler_config(a: &ReconstructArgs, prior: &Prior, seed: u64) -> Result<SamplerConfig> {
    let cfg = SamplerConfig {
        schedule: NoiseSchedule::new(
            a.sigma_min.unwrap_or(prior.schedule.sigma_min),
            a.sigma_max.unwrap_or(prior.schedule.sigma_max),
            a.levels.unwrap_or(prior.schedule.n_steps),
        )?,
        steps_per_level: a.steps,
        step_scale: a.step_scale,
        dc_weight_pet: a.lambda_pet,
        dc_weight_mri: a.lambda_mri,
        update: a.update,
        eta: a.eta,
        seed,
        ..SamplerConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

struct Job {
    id: String,
    index: usize,
    sample: Sample,
}

fn load_jobs(a: &ReconstructArgs, record: &mut RunRecord) -> Result<Vec<Job>> {
    if let Some(dir) = &a.sample_dir {
        let sample = Sample::load(dir)?;
        record.input("sample", &dir.join("acq.json"))?;
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sample".into());
        return Ok(vec![Job { id, index: 0, sample }]);
    }
    let root = a.data.as_ref().expect("clap requires --data or --sample-dir");
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(Error::Parameter(format!("unknown split '{other}'"))),
    };
    let manifest = DatasetManifest::load(root)?;
    record.input("dataset", &root.join("manifest.json"))?;
    let jobs = manifest
        .split(split)
        .take(a.limit.unwrap_or(usize::MAX))
        .map(|e| {
            Ok(Job {
                id: format!("{:04}", e.index),
                index: e.index,
                sample: Sample::load(&root.join(&e.dir))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if jobs.is_empty() {
        return Err(Error::MissingInput(format!("no {} samples in {}", a.split, root.display())));
    }
    Ok(jobs)
}

/// Re-simulates a sample's measurements when the acquisition is overridden,
/// drawing from the sample's own stream.
fn reacquire(a: &ReconstructArgs, sample: &mut Sample) -> Result<()> {
    if a.preset.is_none() && a.counts.is_none() && a.mri_noise.is_none() && a.accel.is_none() {
        return Ok(());
    }
    let base = &sample.record.config;
    let acq = AcquisitionConfig {
        counts_target: a.counts.unwrap_or(base.counts_target),
        mri_noise_std: a.mri_noise.unwrap_or(base.mri_noise_std),
        accel: a.accel.or(a.preset.map(|p| p.accel())).unwrap_or(base.accel),
        center_fraction: base.center_fraction,
    };
    let size = sample.truth.shape().height;
    let geometry = match a.preset {
        Some(p) => p.geometry(size)?,
        None => sample.sinogram.geometry.clone(),
    };
    let stream = RandomStream::new(sample.record.master_seed, sample.record.stream_label.as_str());
    let (f, g) = acquire(&sample.truth, &geometry, &acq, &stream)?;
    sample.record.config = acq;
    sample.record.count_scale = f.count_scale;
    sample.sinogram = f;
    sample.kspace = g;
    Ok(())
}

fn write_objective(values: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,objective\n");
    for (k, v) in values.iter().enumerate() {
        s.push_str(&format!("{k},{v:.9e}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run_job(a: &ReconstructArgs, job: &Job, methods: &[Method], priors: &[Prior], out: &Path) -> Result<()> {
    let s = &job.sample;
    let sdir = out.join("samples").join(&job.id);
    let truth = sdir.join("truth");
    create_dir(&truth)?;
    save_real(s.truth.pet(), &truth.join("pet.jrg"))?;
    save_complex(s.truth.mri(), &truth.join("mri.jrg"))?;
    write_json(&s.record, &sdir.join("acq.json"))?;
    s.kspace.mask().save(&sdir.join("mask.json"))?;
    let data = Measurements::joint(&s.sinogram, &s.kspace);
    let seed = a.seed.wrapping_add(job.index as u64);
    let prior = |ch: Channels| priors.iter().find(|p| p.channels == ch).expect("prior loaded for every method");
    for &method in methods {
        let dir = sdir.join(method.name());
        create_dir(&dir)?;
        match method {
            Method::Joint => {
                let p = prior(Channels::Joint);
                let (pair, trace) = reconstruct_joint(&s.sinogram, &s.kspace, p.source.as_ref(), &sampler_config(a, p, seed)?)?;
                save_real(pair.pet(), &dir.join("pet.jrg"))?;
                save_complex(pair.mri(), &dir.join("mri.jrg"))?;
                write_trace_csv(&trace, &dir.join("trace.csv"))?;
            }
            Method::SinglePet | Method::SingleMri => {
                let (modality, ch) = if method == Method::SinglePet {
                    (Modality::Pet, Channels::Pet)
                } else {
                    (Modality::Mri, Channels::Mri)
                };
                let p = prior(ch);
                let (image, trace) = reconstruct_single(modality, &data, p.source.as_ref(), &sampler_config(a, p, seed)?)?;
                match image {
                    SingleImage::Pet(u) => save_real(&u, &dir.join("pet.jrg"))?,
                    SingleImage::Mri(v) => save_complex(&v, &dir.join("mri.jrg"))?,
                }
                write_trace_csv(&trace, &dir.join("trace.csv"))?;
            }
            Method::Mlem => {
                let cfg = MlemConfig {
                    iterations: a.mlem_iters,
                    ..MlemConfig::default()
                };
                let it = mlem(&s.sinogram, &cfg)?;
                save_real(&it.image, &dir.join("pet.jrg"))?;
                write_objective(&it.objective, &dir.join("objective.csv"))?;
            }
            Method::Tvcs => {
                let cfg = TvConfig {
                    iterations: a.tv_iters,
                    step_size: a.tv_step,
                    tv_weight: a.tv_weight,
                };
                let it = tv_cs(&s.kspace, &cfg)?;
                save_complex(&it.image, &dir.join("mri.jrg"))?;
                write_objective(&it.objective, &dir.join("objective.csv"))?;
            }
            Method::Zerofill => save_complex(&zero_filled(&s.kspace)?, &dir.join("mri.jrg"))?,
            Method::All => unreachable!("expanded before running"),
        }
    }
    eprintln!("sample {} done", job.id);
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs, argv: &[String]) -> Result<()> {
    let mut methods: Vec<Method> = if a.method.contains(&Method::All) {
        Method::EACH.to_vec()
    } else {
        a.method.clone()
    };
    methods.sort();
    methods.dedup();
    if a.jobs == 0 {
        return Err(Error::Parameter("--jobs must be at least 1".into()));
    }
    let mut record = RunRecord::new(argv, a, a.seed);
    let mut jobs = load_jobs(a, &mut record)?;
    let priors = load_priors(a, &methods, &mut record)?;
    for p in &priors {
        sampler_config(a, p, 0)?;
    }
    for job in &mut jobs {
        reacquire(a, &mut job.sample)?;
    }
    prepare_output_dir(&a.out, a.force)?;
    if a.jobs == 1 {
        for job in &jobs {
            run_job(a, job, &methods, &priors, &a.out)?;
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(a.jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {} workers: {e}", a.jobs)))?;
        pool.install(|| jobs.par_iter().try_for_each(|job| run_job(a, job, &methods, &priors, &a.out)))?;
    }
    let run = record.write(&a.out)?;
    eprintln!("content hash {}", run.content_hash);
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new(argv, a, 0);
    for run in &a.runs {
        if !run.is_dir() {
            return Err(Error::MissingInput(format!("run directory {} not found", run.display())));
        }
        let m = run.join(MANIFEST_FILE);
        if m.exists() {
            record.input(format!("run:{}", run.display()), &m)?;
        }
    }
    prepare_output_dir(&a.out, a.force)?;
    let report = make_report(&a.runs, &a.out)?;
    println!("{:<12} {:<4} {:<6} {:>10} {:>10} {:>4}", "method", "mod", "metric", "mean", "std", "n");
    for r in &report.summary {
        println!(
            "{:<12} {:<4} {:<6} {:>10.4} {:>10.4} {:>4}",
            r.method,
            r.modality.as_str(),
            r.metric,
            r.mean,
            r.std,
            r.n
        );
    }
    record.write(&a.out)?;
    Ok(())
}
