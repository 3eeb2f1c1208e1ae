use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use fbhdr::codec::{load_hdr, load_ldr, read_rgbe, save_hdr, save_ldr};
use fbhdr::trainer::{scan_pairs, split_dataset, synth_pair, Split};
use fbhdr::HdrImage;
use fbhdr_cli::Cli;

const TINY: &str = "channels=4\ngrowth=4\niterations=2\nresize=16\nepochs=2\n";

fn fbhdr(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fbhdr"));
    cmd.current_dir(dir).args(args).env_remove("FBHDR_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pairs(dir: &Path, n: u64, side: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for s in 0..n {
        let (ldr, hdr) = synth_pair(50 + s, side, side).unwrap();
        save_ldr(dir.join(format!("p{s:02}.ppm")), &ldr).unwrap();
        save_hdr(dir.join(format!("p{s:02}.hdr")), &hdr).unwrap();
    }
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn help_lists_exactly_the_declared_flags() {
    let mut root = Cli::command();
    root.build();
    for sub in root.get_subcommands() {
        let mut sub = sub.clone();
        let help = sub.render_long_help().to_string();
        let declared: BTreeSet<String> = sub
            .get_arguments()
            .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
            .collect();
        let shown: BTreeSet<String> = help
            .split(|c: char| c.is_whitespace() || c == ',' || c == '[' || c == ']' || c == '<' || c == '|')
            .filter(|w| w.starts_with("--") && w.len() > 2)
            .map(|w| w.trim_end_matches(['.', ')', '>']).split('=').next().unwrap().to_string())
            .collect();
        assert_eq!(declared, shown, "subcommand {}", sub.get_name());
        for a in sub.get_arguments() {
            assert!(a.get_long_help().or(a.get_help()).is_some(), "{} --{:?} lacks help", sub.get_name(), a.get_long());
        }
    }
    // the binary prints the same text
    let dir = setup();
    let out = fbhdr(dir.path(), &["ablate", "--help"], &[]);
    assert_eq!(code(&out), 0);
    for flag in ["--no-skip1", "--no-skip2", "--no-l1", "--no-lper", "--manifest", "--config", "--steps"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = setup();
    let d = dir.path();
    let o = fbhdr(d, &["train", "--synth", "2", "--out", "m.ahdr"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    let o = fbhdr(d, &["train", "--config", "missing.cfg", "--synth", "2", "--out", "m.ahdr"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("fbhdr train --help"));

    std::fs::write(d.join("bad.cfg"), "epochs=two\n").unwrap();
    assert_eq!(code(&fbhdr(d, &["train", "--config", "bad.cfg", "--synth", "2", "--out", "m"], &[])), 1);
    assert_eq!(code(&fbhdr(d, &["frobnicate"], &[])), 1);
    assert_eq!(code(&fbhdr(d, &["gradcheck", "--size", "8by8"], &[])), 1);
    let o = fbhdr(d, &["train", "--config", "tiny.cfg", "--synth", "2", "--out", "m"], &[("FBHDR_SEED", "-4")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_writes_checkpoint_and_log_and_resumes() {
    let dir = setup();
    let d = dir.path();
    let o = fbhdr(d, &["train", "--synth", "8", "--config", "tiny.cfg", "--out", "m.ahdr"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("m.ahdr").is_file());
    let log = std::fs::read_to_string(d.join("m.loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert_eq!(log.lines().next(), Some("epoch,mean_loss,lr"));

    // two more epochs from the checkpoint equal four uninterrupted ones
    std::fs::write(d.join("four.cfg"), TINY.replace("epochs=2", "epochs=4")).unwrap();
    let o = fbhdr(d, &["train", "--synth", "8", "--config", "four.cfg", "--out", "m.ahdr", "--resume", "m.ahdr"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = fbhdr(d, &["train", "--synth", "8", "--config", "four.cfg", "--out", "full.ahdr", "--log", "full.csv"], &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("m.ahdr")).unwrap(), std::fs::read(d.join("full.ahdr")).unwrap());
    assert_eq!(
        std::fs::read_to_string(d.join("m.loss.csv")).unwrap(),
        std::fs::read_to_string(d.join("full.csv")).unwrap()
    );

    std::fs::write(d.join("wide.cfg"), TINY.replace("channels=4", "channels=6")).unwrap();
    let o = fbhdr(d, &["train", "--synth", "8", "--config", "wide.cfg", "--out", "x.ahdr", "--resume", "m.ahdr"], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn equal_seeds_give_identical_checkpoints() {
    let dir = setup();
    let d = dir.path();
    let run = |out: &str, env: &[(&str, &str)]| {
        let o = fbhdr(d, &["train", "--synth", "8", "--config", "tiny.cfg", "--out", out], env);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(d.join(out)).unwrap()
    };
    let a = run("a.ahdr", &[]);
    assert_eq!(a, run("b.ahdr", &[]));
    let c = run("c.ahdr", &[("FBHDR_SEED", "5")]);
    assert_ne!(a, c);
    assert_eq!(c, run("d.ahdr", &[("FBHDR_SEED", "5")]));
    // a seed in the file wins over the environment
    std::fs::write(d.join("seeded.cfg"), format!("{TINY}seed=0\n")).unwrap();
    let o = fbhdr(d, &["train", "--synth", "8", "--config", "seeded.cfg", "--out", "e.ahdr"], &[("FBHDR_SEED", "5")]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("e.ahdr")).unwrap(), a);
}

#[test]
fn diverging_training_exits_3_with_location() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("hot.cfg"), format!("{TINY}learning_rate=1e30\nepochs=6\n")).unwrap();
    let o = fbhdr(d, &["train", "--synth", "2", "--config", "hot.cfg", "--out", "m.ahdr"], &[]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("epoch") && err.contains("batch"), "{err}");
}

#[test]
fn infer_writes_output_and_trace() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&fbhdr(d, &["train", "--synth", "2", "--config", "tiny.cfg", "--out", "m.ahdr"], &[])), 0);
    write_pairs(&d.join("data"), 1, 20);
    let o = fbhdr(
        d,
        &["infer", "--ckpt", "m.ahdr", "--in", "data/p00.ppm", "--out", "o.hdr", "--trace-dir", "trace"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = read_rgbe(&std::fs::read(d.join("o.hdr")).unwrap()).unwrap();
    assert_eq!((out.width(), out.height()), (20, 20));
    let mut traced: Vec<_> = std::fs::read_dir(d.join("trace")).unwrap().map(|e| e.unwrap().file_name()).collect();
    traced.sort();
    assert_eq!(traced, ["iter1.hdr", "iter2.hdr"]);
    assert_eq!(std::fs::read(d.join("trace/iter2.hdr")).unwrap(), std::fs::read(d.join("o.hdr")).unwrap());

    std::fs::write(d.join("junk.ppm"), b"P6\n2 2\n255\n\x00").unwrap();
    assert_eq!(code(&fbhdr(d, &["infer", "--ckpt", "m.ahdr", "--in", "junk.ppm", "--out", "x.hdr"], &[])), 2);
    std::fs::write(d.join("junk.ahdr"), b"AHDR").unwrap();
    assert_eq!(code(&fbhdr(d, &["infer", "--ckpt", "junk.ahdr", "--in", "data/p00.ppm", "--out", "x.hdr"], &[])), 2);
}

#[test]
fn eval_scores_the_test_split_and_reports_skips() {
    let dir = setup();
    let d = dir.path();
    write_pairs(&d.join("data"), 10, 16);
    let o = fbhdr(d, &["train", "--data", "data", "--config", "tiny.cfg", "--out", "m.ahdr"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = fbhdr(d, &["eval", "--ckpt", "m.ahdr", "--data", "data", "--report", "r.csv"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).filter(|l| !l.starts_with("mean,")).collect();
    let test: Vec<String> = split_dataset(&scan_pairs(&d.join("data")).unwrap(), 0)
        .unwrap()
        .of(Split::Test)
        .map(|e| e.ldr.strip_prefix(d).unwrap().display().to_string())
        .collect();
    assert_eq!(rows.len(), test.len());
    for (row, want) in rows.iter().zip(&test) {
        assert_eq!(row.split(',').next().unwrap(), want);
    }

    let o = fbhdr(d, &["eval", "--ckpt", "m.ahdr", "--data", "data", "--report", "all.csv", "--all"], &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(d.join("all.csv")).unwrap().lines().count(), 12);

    std::fs::write(d.join("data/p03.hdr"), b"#?RADIANCE\nnot really").unwrap();
    let o = fbhdr(d, &["eval", "--ckpt", "m.ahdr", "--data", "data", "--report", "bad.csv", "--all"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("p03"), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped 1 of 10"));
    assert_eq!(std::fs::read_to_string(d.join("bad.csv")).unwrap().lines().count(), 11);
}

#[test]
fn bracket_tonemap_convert() {
    let dir = setup();
    let d = dir.path();
    write_pairs(d, 1, 12);
    assert_eq!(code(&fbhdr(d, &["bracket", "p00.ppm", "out_"], &[])), 0);
    let stack: Vec<_> = ["out_m2.ppm", "out_0.ppm", "out_p2.ppm"].iter().map(|f| load_ldr(d.join(f)).unwrap()).collect();
    assert_eq!(stack[1], load_ldr(d.join("p00.ppm")).unwrap());
    for i in 0..stack[0].pixels().len() {
        assert!(stack[0].pixels()[i] <= stack[1].pixels()[i] && stack[1].pixels()[i] <= stack[2].pixels()[i]);
    }

    let o = fbhdr(d, &["tonemap", "p00.hdr", "tm.ppm"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for &v in load_ldr(d.join("tm.ppm")).unwrap().pixels() {
        assert!((0.0..=1.0).contains(&v) && ((v * 255.0) - (v * 255.0).round()).abs() < 1e-4);
    }

    let src = HdrImage::new(2, 2, vec![0.5, 1e-3, 7.0, 250.0, 0.0, 1.0, 3e4, 2.5, 0.125, 1e-6, 9.0, 0.75]).unwrap();
    save_hdr(d.join("src.pfm"), &src).unwrap();
    assert_eq!(code(&fbhdr(d, &["convert", "src.pfm", "mid.hdr"], &[])), 0);
    assert_eq!(code(&fbhdr(d, &["convert", "mid.hdr", "back.pfm"], &[])), 0);
    let back = load_hdr(d.join("back.pfm")).unwrap();
    for (a, b) in src.pixels().chunks(3).zip(back.pixels().chunks(3)) {
        let max = a.iter().fold(0f32, |m, &v| m.max(v));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= max / 128.0, "{x} vs {y}");
        }
    }

    assert_eq!(code(&fbhdr(d, &["convert", "src.pfm", "x.exr"], &[])), 1);
    std::fs::write(d.join("broken.pfm"), b"PF\n3 2\n-1.0\n").unwrap();
    assert_eq!(code(&fbhdr(d, &["convert", "broken.pfm", "x.hdr"], &[])), 2);
    assert_eq!(code(&fbhdr(d, &["tonemap", "nope.hdr", "x.ppm"], &[])), 2);

    // re-running produces identical bytes
    let first = std::fs::read(d.join("tm.ppm")).unwrap();
    assert_eq!(code(&fbhdr(d, &["tonemap", "p00.hdr", "tm.ppm"], &[])), 0);
    assert_eq!(std::fs::read(d.join("tm.ppm")).unwrap(), first);
}

#[test]
fn gradcheck_reports_every_parameter_and_catches_faults() {
    let dir = setup();
    let d = dir.path();
    let args = ["gradcheck", "--channels", "2", "--iters", "1", "--growth", "2"];
    let o = fbhdr(d, &args, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let cfg = fbhdr::network::NetConfig { channels: 2, growth: 2, iterations: 1, ..Default::default() };
    for (name, _) in fbhdr::network::param_shapes(&cfg) {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name.as_str())), "{name}");
    }
    assert!(text.lines().last().unwrap().starts_with("max relative error"));

    let mut faulty = args.to_vec();
    faulty.push("--inject-fault");
    assert_eq!(code(&fbhdr(d, &faulty, &[])), 3);
}

#[test]
fn ablation_variants_have_distinct_manifests() {
    let dir = setup();
    let d = dir.path();
    let variants: [&[&str]; 7] = [
        &[],
        &["--no-skip1"],
        &["--no-skip2"],
        &["--no-skip1", "--no-skip2"],
        &["--no-lper"],
        &["--no-l1"],
        &["--no-skip1", "--no-skip2", "--no-lper"],
    ];
    let mut manifests = BTreeSet::new();
    for (i, flags) in variants.iter().enumerate() {
        let path = format!("m{i}.txt");
        let mut args = vec!["ablate", "--config", "tiny.cfg", "--manifest", &path];
        args.extend_from_slice(flags);
        let o = fbhdr(d, &args, &[]);
        assert_eq!(code(&o), 0, "{flags:?}: {}", stderr(&o));
        let m = std::fs::read_to_string(d.join(&path)).unwrap();
        let has = |line: &str| m.lines().any(|l| l == line);
        assert_eq!(has("skip1=false"), flags.contains(&"--no-skip1"));
        assert_eq!(has("skip2=false"), flags.contains(&"--no-skip2"));
        assert_eq!(has("lambda2=0"), flags.contains(&"--no-lper"));
        assert_eq!(has("lambda1=0"), flags.contains(&"--no-l1"));
        let step = m.lines().skip_while(|l| *l != "step,loss,l1,per").nth(1).unwrap();
        let cols: Vec<&str> = step.split(',').collect();
        assert!(cols[1].parse::<f64>().unwrap().is_finite());
        assert_eq!(cols[2] == "off", flags.contains(&"--no-l1"));
        assert_eq!(cols[3] == "off", flags.contains(&"--no-lper"));
        let config: String = m.lines().skip_while(|l| *l != "[config]").take_while(|l| !l.is_empty()).collect();
        manifests.insert(config);
    }
    assert_eq!(manifests.len(), variants.len());

    let o = fbhdr(d, &["ablate", "--no-l1", "--no-lper", "--manifest", "x.txt"], &[]);
    assert_eq!(code(&o), 1);
    assert!(!d.join("x.txt").exists());
}
