use std::fs;
use std::path::{Path, PathBuf};

use fbhdr::autodiff::GradFault;
use fbhdr::codec::{load_hdr, load_ldr, save_hdr, save_ldr};
use fbhdr::exposure::bracket as make_stack;
use fbhdr::gradcheck::{check_network_gradients, GradCheckConfig};
use fbhdr::network::NetConfig;
use fbhdr::tonemap::{reinhard, ReinhardParams};
use fbhdr::trainer::{
    self, loss_log_csv, prepare_pairs, scan_pairs, split_dataset, synth_pair, Split, TrainConfig,
    Trainer, TrainingPair,
};
use fbhdr::{HdrImage, LdrImage};

use crate::{
    AblateArgs, BracketArgs, ConvertArgs, EvalArgs, Failure, GradcheckArgs, InferArgs, SynthArgs,
    TonemapArgs, TrainArgs, SEED_ENV,
};

type Outcome = Result<(), Failure>;

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

/// Reads a config file. `FBHDR_SEED` supplies the seed when the file does
/// not set one.
fn load_config(path: &Path, subcommand: &str) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::usage(format!(
            "cannot read config {}: {e}\n\nsee `fbhdr {subcommand} --help`",
            path.display()
        ))
    })?;
    let mut cfg = TrainConfig::parse(&text)?;
    let sets_seed = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .any(|(k, _)| k.trim() == "seed" && !k.trim_start().starts_with('#'));
    if !sets_seed {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    Ok(cfg)
}

/// Scene `i` uses `seed + i + 1`.
fn synth_images(n: usize, side: usize, seed: u64) -> fbhdr::Result<Vec<(LdrImage, HdrImage)>> {
    (0..n as u64)
        .map(|i| synth_pair(seed.wrapping_add(i + 1), side, side))
        .collect()
}

fn load_split(dir: &Path, seed: u64, split: Option<Split>) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    let pairs = scan_pairs(dir)?;
    if pairs.is_empty() {
        return Err(Failure::data(format!("no <stem>.ppm/<stem>.hdr pairs in {}", dir.display())));
    }
    Ok(match split {
        None => pairs,
        Some(s) => split_dataset(&pairs, seed)?
            .of(s)
            .map(|e| (e.ldr.clone(), e.hdr.clone()))
            .collect(),
    })
}

pub fn train(a: TrainArgs) -> Outcome {
    let cfg = load_config(&a.config, "train")?;
    let images = match (a.synth, &a.data) {
        (Some(0), _) => return Err(Failure::usage("--synth needs at least one scene")),
        (Some(n), _) => synth_images(n, cfg.resize, cfg.seed)?,
        (None, Some(dir)) => load_split(dir, cfg.seed, Some(Split::Train))?
            .iter()
            .map(|(l, h)| Ok((load_ldr(l)?, load_hdr(h)?)))
            .collect::<fbhdr::Result<_>>()?,
        (None, None) => unreachable!("clap requires a data source"),
    };
    let (pairs, peak) = prepare_pairs(&images, &cfg)?;

    let trainer = match &a.resume {
        None => Trainer::new(cfg, peak)?,
        Some(path) => {
            let mut t = Trainer::load(path)?;
            t.cfg.epochs = cfg.epochs;
            t.cfg.checkpoint_every = cfg.checkpoint_every;
            if t.cfg != cfg {
                return Err(Failure::usage(format!(
                    "{} was trained with a different configuration; only epochs and checkpoint_every may change on resume",
                    path.display()
                )));
            }
            if t.hdr_peak != peak {
                return Err(Failure::data(format!(
                    "training data peak {peak} differs from the checkpoint's {}",
                    t.hdr_peak
                )));
            }
            t
        }
    };
    let start_epoch = trainer.epoch;
    let outcome = trainer::train(trainer, &pairs, Some(&a.out))?;
    for row in &outcome.log {
        println!("epoch {:>4}  loss {:.6}  lr {:e}", row.epoch, row.mean_loss, row.lr);
    }

    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let csv = loss_log_csv(&outcome.log);
    let text = if start_epoch > 0 && log_path.is_file() {
        // append to the interrupted run's log, without a second header
        let mut old = fs::read_to_string(&log_path).map_err(|e| fbhdr::Error::Io { path: log_path.clone(), source: e })?;
        old.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        old
    } else {
        csv
    };
    fs::write(&log_path, text).map_err(|e| fbhdr::Error::Io { path: log_path.clone(), source: e })?;
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

pub fn infer(a: InferArgs) -> Outcome {
    let model = Trainer::load(&a.ckpt)?.model();
    let ldr = load_ldr(&a.input)?;
    let outputs = model.infer_all(&ldr)?;
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir).map_err(|e| fbhdr::Error::Io { path: dir.clone(), source: e })?;
        for (t, img) in outputs.iter().enumerate() {
            save_hdr(dir.join(format!("iter{}.hdr", t + 1)), img)?;
        }
    }
    save_hdr(&a.out, outputs.last().expect("at least one iteration"))?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let trainer = Trainer::load(&a.ckpt)?;
    let split = if a.all { None } else { Some(Split::Test) };
    let pairs = load_split(&a.data, trainer.cfg.seed, split)?;
    let result = trainer::evaluate(&trainer.model(), &pairs);
    fs::write(&a.report, result.report.to_csv())
        .map_err(|e| fbhdr::Error::Io { path: a.report.clone(), source: e })?;
    println!(
        "{} images  mean PSNR {:.3} dB  mean SSIM {:.4}",
        result.report.rows.len(),
        result.report.mean_psnr_db,
        result.report.mean_ssim
    );
    if result.skipped.is_empty() {
        return Ok(());
    }
    for s in &result.skipped {
        eprintln!("skipped {}: {}", s.name, s.error);
    }
    Err(Failure::data(format!(
        "skipped {} of {} pairs",
        result.skipped.len(),
        pairs.len()
    )))
}

pub fn bracket(a: BracketArgs) -> Outcome {
    let stack = make_stack(&load_ldr(&a.input)?, a.gamma)?;
    for (suffix, img) in ["m2", "0", "p2"].iter().zip(stack.images()) {
        save_ldr(format!("{}{suffix}.ppm", a.prefix), img)?;
    }
    Ok(())
}

pub fn tonemap(a: TonemapArgs) -> Outcome {
    let p = ReinhardParams { key: a.key, white: a.white, ..ReinhardParams::default() };
    save_ldr(&a.output, &reinhard(&load_hdr(&a.input)?, &p)?)?;
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Outcome {
    save_hdr(&a.output, &load_hdr(&a.input)?)?;
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("--size expects HxW, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let (height, width) = parse_size(&a.size)?;
    let defaults = GradCheckConfig::default();
    let cfg = GradCheckConfig {
        width,
        height,
        net: NetConfig {
            channels: a.channels,
            iterations: a.iters,
            growth: a.growth,
            ..defaults.net
        },
        seed: env_seed()?.unwrap_or(defaults.seed),
        fault: a.inject_fault.then_some(GradFault::ScaleConvWeights(1.01)),
        ..defaults
    };
    cfg.net.validate()?;
    let report = check_network_gradients(&cfg)?;
    println!("{:<36} {:>7}  {:<9}  {:>4}", "parameter", "numel", "max_rel", "kinks");
    for p in &report.params {
        println!("{:<36} {:>7}  {:.3e}  {:>4}", p.name, p.numel, p.max_rel_err, p.kinks);
    }
    let verdict = if report.passed() { "pass" } else { "FAIL" };
    println!(
        "max relative error {:.3e} over {} parameters (tolerance {:e}): {verdict}",
        report.max_rel_err,
        report.params.len(),
        report.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "gradient check failed: {:.3e} >= {:e}",
            report.max_rel_err, report.tolerance
        )))
    }
}

pub fn ablate(a: AblateArgs) -> Outcome {
    if a.no_l1 && a.no_lper {
        return Err(Failure::usage("--no-l1 and --no-lper together leave no loss to train"));
    }
    if a.steps == 0 {
        return Err(Failure::usage("--steps must be at least 1"));
    }
    let mut cfg = match &a.config {
        Some(p) => load_config(p, "ablate")?,
        None => TrainConfig { seed: env_seed()?.unwrap_or(0), ..TrainConfig::default() },
    };
    cfg.net.skip1 &= !a.no_skip1;
    cfg.net.skip2 &= !a.no_skip2;
    if a.no_l1 {
        cfg.loss.lambda1 = 0.0;
    }
    if a.no_lper {
        cfg.loss.lambda2 = 0.0;
    }
    cfg.validate()?;

    let images = synth_images(1, cfg.resize, cfg.seed)?;
    let (pairs, peak) = prepare_pairs(&images, &cfg)?;
    let batch: Vec<&TrainingPair> = pairs.iter().collect();
    let mut t = Trainer::new(cfg.clone(), peak)?;
    let mut reports = Vec::with_capacity(a.steps);
    for i in 0..a.steps {
        reports.push(t.step(&batch, cfg.learning_rate, i)?);
    }

    let on_off = |b: bool| if b { "on" } else { "off" };
    let term = |v: Option<f64>| v.map_or("off".to_string(), |x| x.to_string());
    let mut m = String::from("# fbhdr ablation manifest\n");
    m.push_str(&format!("skip1={}\nskip2={}\n", on_off(cfg.net.skip1), on_off(cfg.net.skip2)));
    m.push_str(&format!(
        "loss_l1={}\nloss_per={}\n",
        on_off(cfg.loss.lambda1 > 0.0),
        on_off(cfg.loss.lambda2 > 0.0)
    ));
    m.push_str("\n[config]\n");
    m.push_str(&cfg.to_text());
    m.push_str("\n[steps]\nstep,loss,l1,per\n");
    for (i, r) in reports.iter().enumerate() {
        m.push_str(&format!("{i},{},{},{}\n", r.loss, term(r.l1), term(r.per)));
    }
    fs::write(&a.manifest, &m).map_err(|e| fbhdr::Error::Io { path: a.manifest.clone(), source: e })?;
    print!("{m}");
    Ok(())
}

pub fn synth(a: SynthArgs) -> Outcome {
    fs::create_dir_all(&a.out).map_err(|e| fbhdr::Error::Io { path: a.out.clone(), source: e })?;
    let seed = env_seed()?.unwrap_or(0);
    for (i, (ldr, hdr)) in synth_images(a.count, a.size, seed)?.iter().enumerate() {
        save_ldr(a.out.join(format!("scene{i:03}.ppm")), ldr)?;
        save_hdr(a.out.join(format!("scene{i:03}.hdr")), hdr)?;
    }
    Ok(())
}
