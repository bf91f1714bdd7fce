use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stlth_cli::config::{Mode, StrategyArg};
use stlth_cli::error::{CliError, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC};
use stlth_cli::ExperimentConfig;
use stlth_core::lottery::Checkpoint;
use stlth_core::pruning::PruningMask;
use tempfile::TempDir;

const TINY: [&str; 10] =
    ["--iters", "6", "--image-size", "16", "--width-divisor", "8", "--pretrain-iters", "4", "--test-pairs", "3"];

fn stlth(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stlth"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let i = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn config_rejects_unknown_keys() {
    let err = ExperimentConfig::from_toml("iters = 5\nlearning_rate = 0.1\n").unwrap_err();
    assert_eq!(err.code, EXIT_CONFIG);
    assert!(err.message.contains("learning_rate"), "{}", err.message);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig {
        mode: Mode::Frozen,
        strategies: vec![StrategyArg::Rt],
        rounds: vec![4, 6],
        ..ExperimentConfig::default()
    };
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut ExperimentConfig)| {
        let mut c = ExperimentConfig::default();
        f(&mut c);
        c.validate().unwrap_err().code
    };
    assert_eq!(bad(|c| c.rewind_frac = 1.0), EXIT_CONFIG);
    assert_eq!(bad(|c| c.image_size = 20), EXIT_CONFIG);
    assert_eq!(bad(|c| c.trials = 0), EXIT_CONFIG);
    assert_eq!(bad(|c| c.target_sparsity = 1.0), EXIT_CONFIG);
    assert_eq!(bad(|c| c.rounds = vec![0]), EXIT_CONFIG);
    ExperimentConfig::default().validate().unwrap();
}

#[test]
fn core_errors_map_to_exit_codes() {
    let code = |e: stlth_core::Error| CliError::from(e).code;
    assert_eq!(code(stlth_core::Error::NonFinite("x".into())), EXIT_NUMERIC);
    assert_eq!(code(stlth_core::Error::EmptyFolder("d".into())), EXIT_IO);
    assert_eq!(code(stlth_core::Error::InvalidArgument("x".into())), EXIT_CONFIG);
}

#[test]
fn unknown_config_key_exits_with_config_status() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "iters = 3\nbogus = 1\n").unwrap();
    let o = stlth(&["train", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn missing_data_path_exits_with_io_status() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["train", "--data", "/definitely/not/here"];
    args.extend(TINY);
    let o = stlth(&args, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(EXIT_IO));
}

#[test]
fn train_rows_for_both_modes_and_rerun_is_identical() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut plus = vec!["train"];
    plus.extend(TINY);
    ok(&stlth(&plus, &out));
    let first = read(&out.join("train.csv"));
    ok(&stlth(&plus, &out));
    assert_eq!(read(&out.join("train.csv")), first);
    let mut frozen = plus.clone();
    frozen.extend(["--mode", "frozen"]);
    ok(&stlth(&frozen, &out));
    let both = read(&out.join("train.csv"));
    assert_eq!(column(&both, "mode"), ["frozen", "plus"]);
    assert!(both.contains(first.lines().nth(1).unwrap()));
    for f in
        ["config-plus.toml", "config-frozen.toml", "seeds.csv", "trial0/dense-plus.ckpt", "trial0/dense-frozen.ckpt"]
    {
        assert!(out.join(f).exists(), "{f}");
    }
    let ck = Checkpoint::load(&out.join("trial0/dense-plus.ckpt")).unwrap();
    assert_eq!(ck.iteration, 6);
}

#[test]
fn imp_sparsity_column_follows_the_grid_for_each_trial() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["imp", "--trials", "3", "--svg"];
    args.extend(TINY);
    ok(&stlth(&args, &out));
    let csv = read(&out.join("imp.csv"));
    assert_eq!(csv.lines().next().unwrap(), "trial,round,sparsity,content_error,style_error,total,matching_verdict");
    let grid = ["20.0", "36.0", "48.8", "59.0", "67.2", "73.8", "79.0", "83.2", "86.6", "89.3"];
    let sp = column(&csv, "sparsity");
    assert_eq!(sp.len(), 30);
    for t in 0..3 {
        // 73.79% and 89.26% round up at one decimal
        assert_eq!(sp[10 * t..10 * t + 10], grid);
    }
    let mean = read(&out.join("imp_mean.csv"));
    assert_eq!(mean.lines().count(), 11);
    let summary = read(&out.join("summary.txt"));
    assert!(summary.contains("E_Best(Sparsity): ") && summary.contains("%)"), "{summary}");
    let verdicts = column(&mean, "matching_verdict");
    let sps = column(&mean, "sparsity");
    let extreme = verdicts.iter().zip(&sps).filter(|(v, _)| *v == "matching").map(|(_, s)| s.clone()).next_back();
    assert!(summary.contains(&format!("S_Extreme: {}%", extreme.unwrap_or_else(|| "0.0".into()))), "{summary}");
    for f in
        ["config.toml", "seeds.csv", "timings.csv", "dense.csv", "imp.svg", "trial2/round10.mask", "trial0/rewind.ckpt"]
    {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(read(&out.join("seeds.csv")).lines().count(), 4);
    let m = PruningMask::load(&out.join("trial1/round04.mask")).unwrap();
    assert_eq!(m.round, 4);
}

#[test]
fn compare_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["compare", "--strategy", "imp,rt,fp", "--rounds", "1,2", "--rewind-frac", "0.5"];
    args.extend(TINY);
    ok(&stlth(&args, &out));
    let rt = read(&out.join("compare_rt.csv"));
    assert_eq!(column(&rt, "strategy"), ["RT", "RT"]);
    assert_eq!(column(&rt, "rewind"), ["reinit", "reinit"]);
    let seeds = read(&out.join("seeds.csv"));
    let reinit = column(&seeds, "reinit")[0].clone();
    assert_eq!(column(&rt, "seed"), [reinit.clone(), reinit]);
    assert_eq!(column(&read(&out.join("compare_fp.csv")), "rewind"), ["n/a", "n/a"]);
    assert_eq!(column(&read(&out.join("compare_imp.csv")), "rewind"), ["3", "3"]);
    assert!(!out.join("compare_omp.csv").exists());
    let merged = read(&out.join("compare.csv"));
    assert_eq!(column(&merged, "strategy")[0], "full");
    assert_eq!(column(&merged, "sparsity")[0], "0.0");
    assert_eq!(merged.lines().count(), 1 + 1 + 3 * 2);
    assert_eq!(read(&out.join("compare_table.csv")).lines().count(), 4);
}

#[test]
fn rewind_sweep_ratio_zero_matches_imp() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["rewind-sweep", "--iters", "10", "--target-sparsity", "0.3"];
    args.extend(&TINY[2..]);
    ok(&stlth(&args, &dir.path().join("sweep")));
    args[0] = "imp";
    ok(&stlth(&args, &dir.path().join("imp")));
    let sweep = read(&dir.path().join("sweep/rewind_sweep.csv"));
    assert_eq!(column(&sweep, "ratio"), ["0.0", "0.0", "0.1", "0.1", "0.2", "0.2", "0.3", "0.3", "0.4", "0.4"]);
    assert_eq!(column(&sweep, "rewind"), ["0", "0", "1", "1", "2", "2", "3", "3", "4", "4"]);
    let imp = read(&dir.path().join("imp/imp.csv"));
    let ratio0: Vec<String> =
        sweep.lines().skip(1).take(2).map(|l| l.splitn(3, ',').nth(2).unwrap().to_string()).collect();
    let imp_rows: Vec<String> = imp.lines().skip(1).map(str::to_string).collect();
    assert_eq!(ratio0, imp_rows);
    assert_eq!(read(&dir.path().join("sweep/rewind_table.csv")).lines().count(), 6);
}

fn write_ppm(path: &Path, w: usize, h: usize, seed: u8) {
    let mut bytes = format!("P6 {w} {h} 255\n").into_bytes();
    bytes.extend((0..w * h * 3).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)));
    fs::write(path, bytes).unwrap();
}

#[test]
fn stylize_keeps_content_size_and_all_ones_mask_is_identity() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["train"];
    args.extend(TINY);
    ok(&stlth(&args, &out));
    let ck_path = out.join("trial0/dense-plus.ckpt");
    let ck = Checkpoint::load(&ck_path).unwrap();
    let ones = dir.path().join("ones.mask");
    PruningMask::ones(&ck.params).save(&ones).unwrap();
    let (c, s) = (dir.path().join("c.ppm"), dir.path().join("s.ppm"));
    write_ppm(&c, 24, 16, 1);
    write_ppm(&s, 16, 32, 2);
    let run = |mask: Option<&Path>, output: &Path| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stlth"));
        cmd.arg("stylize").arg("--checkpoint").arg(&ck_path).arg("--content").arg(&c).arg("--style").arg(&s);
        cmd.arg("--output").arg(output);
        if let Some(m) = mask {
            cmd.arg("--mask").arg(m);
        }
        cmd.output().unwrap()
    };
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    ok(&run(None, &a));
    ok(&run(Some(&ones), &b));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let png = fs::read(&a).unwrap();
    let dims =
        (u32::from_be_bytes(png[16..20].try_into().unwrap()), u32::from_be_bytes(png[20..24].try_into().unwrap()));
    assert_eq!(dims, (24, 16));

    let missing = Command::new(env!("CARGO_BIN_EXE_stlth"))
        .args(["stylize", "--checkpoint", "/no/such.ckpt", "--output", "/tmp/x.png", "--content"])
        .arg(&c)
        .arg("--style")
        .arg(&s)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_IO));
}
