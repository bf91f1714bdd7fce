//! One function per subcommand. Each writes its artifacts under
//! `cfg.out` and returns what it wrote so callers can inspect results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use stlth_core::data::{decode_image_native, write_image};
use stlth_core::lottery::{
    compare_strategies, imp_from_dense, imp_run, rewind_grid, train_dense, Checkpoint, ImpConfig, Strategy,
    TicketRecord,
};
use stlth_core::metrics::ErrorReport;
use stlth_core::models::stylize;
use stlth_core::pruning::PruningMask;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::lab::{for_each_trial, setup, worker_count};
use crate::report::{
    curve_rows, e_best, mean_curve, mean_report, num, pct, s_extreme, seed_rows, svg_chart, ticket_row, verdict,
    write_csv, write_text, CurvePoint, CURVE_COLUMNS, TICKET_COLUMNS,
};

pub const TRAIN_COLUMNS: [&str; 8] =
    ["mode", "trial", "sparsity", "content_error", "style_error", "total", "seed", "strategy"];
pub const TIMING_COLUMNS: [&str; 3] = ["trial", "stage", "seconds"];

fn mkdir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn trial_dir(out: &Path, trial: u32) -> CliResult<PathBuf> {
    let dir = out.join(format!("trial{trial}"));
    mkdir(&dir)?;
    Ok(dir)
}

/// Creates the output directory and writes the resolved config and seed
/// manifest. `tag` distinguishes commands sharing one directory.
fn provenance(cfg: &ExperimentConfig, tag: Option<&str>) -> CliResult<()> {
    mkdir(&cfg.out)?;
    let name = tag.map_or_else(|| "config.toml".to_string(), |t| format!("config-{t}.toml"));
    write_text(&cfg.out.join(name), &cfg.to_toml())?;
    let seeds = seed_rows(cfg.trials, |t| cfg.imp_config(t).seeds);
    write_csv(&cfg.out.join("seeds.csv"), &["trial", "init", "data", "prune", "reinit"], &seeds)
}

fn report_cells(r: &ErrorReport) -> [String; 3] {
    [num(r.content_error), num(r.style_error), num(r.total)]
}

fn save_mask(mask: &PruningMask, path: &Path) -> CliResult<()> {
    Ok(mask.save(path)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub reports: Vec<ErrorReport>,
    pub csv: PathBuf,
}

/// Dense training. Rows are merged into `train.csv` keyed by mode, so
/// running `plus` and `frozen` into one directory yields both rows.
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<TrainSummary> {
    let exp = setup(cfg)?;
    let mode = format!("{:?}", cfg.mode).to_lowercase();
    provenance(cfg, Some(&mode))?;
    let runs = for_each_trial(cfg.trials, worker_count(), |t| {
        let ic = cfg.imp_config(t);
        let dense = train_dense(&ic, &exp, &[cfg.iters as u64])?;
        dense.checkpoint(cfg.iters)?.save(&trial_dir(&cfg.out, t)?.join(format!("dense-{mode}.ckpt")))?;
        log::info!("trial {t}: {mode} dense total error {:.4}", dense.report.total);
        Ok((dense.report, dense.seconds, ic.seeds.init))
    })?;
    let csv = cfg.out.join("train.csv");
    let mut rows: Vec<Vec<String>> = read_rows(&csv)?.into_iter().filter(|r| r.first() != Some(&mode)).collect();
    for (t, (r, _, seed)) in runs.iter().enumerate() {
        let [c, s, tot] = report_cells(r);
        rows.push(vec![mode.clone(), t.to_string(), pct(0.0), c, s, tot, seed.to_string(), "full".into()]);
    }
    rows.sort();
    write_csv(&csv, &TRAIN_COLUMNS, &rows)?;
    let timings: Vec<Vec<String>> =
        runs.iter().enumerate().map(|(t, r)| vec![t.to_string(), "dense".into(), format!("{:.3}", r.1)]).collect();
    write_csv(&cfg.out.join(format!("timings-{mode}.csv")), &TIMING_COLUMNS, &timings)?;
    Ok(TrainSummary { reports: runs.into_iter().map(|r| r.0).collect(), csv })
}

fn read_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    rd.records().map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| CliError::io(path, e))).collect()
}

/// One trial's dense report and IMP tickets.
#[derive(Debug, Clone)]
pub struct TrialTickets {
    pub dense: ErrorReport,
    pub tickets: Vec<TicketRecord>,
}

#[derive(Debug, Clone)]
pub struct ImpSummary {
    pub trials: Vec<TrialTickets>,
    pub full: ErrorReport,
    pub curve: Vec<CurvePoint>,
    pub e_best: String,
    pub s_extreme: f64,
}

fn summarize(trials: Vec<TrialTickets>) -> ImpSummary {
    let full = mean_report(&trials.iter().map(|t| t.dense).collect::<Vec<_>>());
    let curve = mean_curve(trials.iter().flat_map(|t| &t.tickets));
    ImpSummary { e_best: e_best(&curve), s_extreme: s_extreme(&curve, full.total), full, curve, trials }
}

fn timing_rows(trials: &[TrialTickets], dense_seconds: &[f64]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (t, (tr, secs)) in trials.iter().zip(dense_seconds).enumerate() {
        rows.push(vec![t.to_string(), "dense".into(), format!("{secs:.3}")]);
        for k in &tr.tickets {
            rows.push(vec![
                t.to_string(),
                format!("{}-round{}", k.strategy.label(), k.round),
                format!("{:.3}", k.seconds),
            ]);
        }
    }
    rows
}

/// Iterative magnitude pruning with rewinding across all trials.
pub fn cmd_imp(cfg: &ExperimentConfig) -> CliResult<ImpSummary> {
    let exp = setup(cfg)?;
    provenance(cfg, None)?;
    let runs = for_each_trial(cfg.trials, worker_count(), |t| {
        let ic = cfg.imp_config(t);
        let out = imp_run(&ic, &exp)?;
        let dir = trial_dir(&cfg.out, t)?;
        out.dense.checkpoint(ic.rewind_iteration)?.save(&dir.join("rewind.ckpt"))?;
        for k in &out.tickets {
            save_mask(&k.mask, &dir.join(format!("round{:02}.mask", k.round)))?;
        }
        Ok((TrialTickets { dense: out.dense.report, tickets: out.tickets }, out.dense.seconds))
    })?;
    let (trials, secs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    write_csv(&cfg.out.join("timings.csv"), &TIMING_COLUMNS, &timing_rows(&trials, &secs))?;
    let summary = summarize(trials);
    write_imp_outputs(cfg, &cfg.out, "imp", &summary)?;
    Ok(summary)
}

fn write_imp_outputs(cfg: &ExperimentConfig, dir: &Path, stem: &str, s: &ImpSummary) -> CliResult<()> {
    let rows: Vec<Vec<String>> = s
        .trials
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| tr.tickets.iter().map(move |k| ticket_row(t as u32, k, &tr.dense)))
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), &TICKET_COLUMNS, &rows)?;
    let dense: Vec<Vec<String>> = s
        .trials
        .iter()
        .enumerate()
        .map(|(t, tr)| {
            let [c, st, tot] = report_cells(&tr.dense);
            vec![t.to_string(), c, st, tot]
        })
        .collect();
    write_csv(&dir.join("dense.csv"), &["trial", "content_error", "style_error", "total"], &dense)?;
    write_csv(&dir.join(format!("{stem}_mean.csv")), &CURVE_COLUMNS, &curve_rows(&s.curve, s.full.total))?;
    let mut text = format!("full model total error: {:.3}\n", s.full.total);
    text += &format!("E_Best(Sparsity): {}\nS_Extreme: {}%\n", s.e_best, pct(s.s_extreme));
    write_text(&dir.join("summary.txt"), &text)?;
    if cfg.svg {
        let chart = svg_chart(
            &format!("{} {stem}", cfg.model_label()),
            &[(stem.to_uppercase(), s.curve.clone())],
            s.full.total,
        );
        write_text(&dir.join(format!("{stem}.svg")), &chart)?;
    }
    Ok(())
}

/// Per-strategy tables from one shared dense run per trial.
#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub full: ErrorReport,
    /// Strategy -> trial-averaged curve.
    pub curves: BTreeMap<Strategy, Vec<CurvePoint>>,
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> CliResult<CompareSummary> {
    let exp = setup(cfg)?;
    provenance(cfg, None)?;
    let strategies: Vec<Strategy> = cfg.strategies.iter().map(|&s| s.into()).collect();
    let rounds = (!cfg.rounds.is_empty()).then_some(cfg.rounds.as_slice());
    let runs = for_each_trial(cfg.trials, worker_count(), |t| {
        let ic = cfg.imp_config(t);
        let cmp = compare_strategies(&ic, &exp, &strategies, rounds)?;
        let dir = trial_dir(&cfg.out, t)?;
        for k in &cmp.rows {
            save_mask(&k.mask, &dir.join(format!("{}-round{:02}.mask", k.strategy.label().to_lowercase(), k.round)))?;
        }
        Ok((TrialTickets { dense: cmp.dense.report, tickets: cmp.rows }, cmp.dense.seconds))
    })?;
    let (trials, secs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    write_csv(&cfg.out.join("timings.csv"), &TIMING_COLUMNS, &timing_rows(&trials, &secs))?;
    let full = mean_report(&trials.iter().map(|t| t.dense).collect::<Vec<_>>());
    let rewind = cfg.rewind_iteration().to_string();

    let mut columns: Vec<&str> = TICKET_COLUMNS.to_vec();
    columns.extend(["strategy", "rewind", "seed"]);
    let mut curves = BTreeMap::new();
    for &st in &strategies {
        let mut rows = Vec::new();
        for (t, tr) in trials.iter().enumerate() {
            for k in tr.tickets.iter().filter(|k| k.strategy == st) {
                let mut row = ticket_row(t as u32, k, &tr.dense);
                let rw = match st {
                    Strategy::Fp => "n/a".to_string(),
                    Strategy::Rt => "reinit".to_string(),
                    _ => rewind.clone(),
                };
                row.extend([st.label().to_string(), rw, k.mask.seed.to_string()]);
                rows.push(row);
            }
        }
        write_csv(&cfg.out.join(format!("compare_{}.csv", st.label().to_lowercase())), &columns, &rows)?;
        curves.insert(st, mean_curve(trials.iter().flat_map(|t| t.tickets.iter().filter(|k| k.strategy == st))));
    }

    let [c, s, tot] = report_cells(&full);
    let mut merged = vec![vec!["full".to_string(), pct(0.0), c, s, tot, verdict(true).into()]];
    for (st, curve) in &curves {
        for p in curve {
            merged.push(vec![
                st.label().into(),
                pct(p.sparsity),
                num(p.content_error),
                num(p.style_error),
                num(p.total),
                verdict(p.total <= full.total).into(),
            ]);
        }
    }
    write_csv(
        &cfg.out.join("compare.csv"),
        &["strategy", "sparsity", "content_error", "style_error", "total", "matching_verdict"],
        &merged,
    )?;
    let table: Vec<Vec<String>> = curves
        .iter()
        .map(|(st, curve)| vec![st.label().into(), e_best(curve), pct(s_extreme(curve, full.total))])
        .collect();
    write_csv(&cfg.out.join("compare_table.csv"), &["strategy", "e_best", "s_extreme"], &table)?;
    if cfg.svg {
        let series: Vec<(String, Vec<CurvePoint>)> =
            curves.iter().map(|(s, c)| (s.label().to_string(), c.clone())).collect();
        write_text(
            &cfg.out.join("compare.svg"),
            &svg_chart(&format!("{} strategies", cfg.model_label()), &series, full.total),
        )?;
    }
    Ok(CompareSummary { full, curves })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: f64,
    pub rewind_iteration: u64,
    pub summary: ImpSummary,
}

/// IMP at rewind points {0, 0.1, 0.2, 0.3, 0.4}·N, all from one dense
/// run per trial.
pub fn cmd_rewind_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<SweepRow>> {
    let exp = setup(cfg)?;
    provenance(cfg, None)?;
    let grid = rewind_grid(cfg.iters);
    let runs = for_each_trial(cfg.trials, worker_count(), |t| {
        let ic = cfg.imp_config(t);
        let dense = train_dense(&ic, &exp, &grid)?;
        let mut per_ratio = Vec::new();
        for &r in &grid {
            let rc = ImpConfig { rewind_iteration: r as usize, ..ic.clone() };
            let tickets = imp_from_dense(&rc, &exp, &dense)?;
            per_ratio.push(TrialTickets { dense: dense.report, tickets });
        }
        Ok(per_ratio)
    })?;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for (k, &r) in grid.iter().enumerate() {
        let trials: Vec<TrialTickets> = runs.iter().map(|pr| pr[k].clone()).collect();
        let ratio = k as f64 / 10.0;
        for (t, tr) in trials.iter().enumerate() {
            for tk in &tr.tickets {
                let mut row = vec![format!("{ratio:.1}"), r.to_string()];
                row.extend(ticket_row(t as u32, tk, &tr.dense));
                rows.push(row);
            }
        }
        out.push(SweepRow { ratio, rewind_iteration: r, summary: summarize(trials) });
    }
    let mut columns = vec!["ratio", "rewind"];
    columns.extend(TICKET_COLUMNS);
    write_csv(&cfg.out.join("rewind_sweep.csv"), &columns, &rows)?;
    let table: Vec<Vec<String>> = out
        .iter()
        .map(|s| {
            vec![
                format!("{:.1}", s.ratio),
                s.rewind_iteration.to_string(),
                s.summary.e_best.clone(),
                pct(s.summary.s_extreme),
            ]
        })
        .collect();
    write_csv(&cfg.out.join("rewind_table.csv"), &["ratio", "rewind", "e_best", "s_extreme"], &table)?;
    let ext: Vec<f64> = out.iter().map(|s| s.summary.s_extreme).collect();
    let spread =
        ext.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ext.iter().cloned().fold(f64::INFINITY, f64::min);
    write_text(
        &cfg.out.join("summary.txt"),
        &format!("S_Extreme spread across rewind ratios: {} points\n", pct(spread)),
    )?;
    if cfg.svg {
        let series: Vec<(String, Vec<CurvePoint>)> =
            out.iter().map(|s| (format!("rewind {:.0}%", 100.0 * s.ratio), s.summary.curve.clone())).collect();
        let full = out.first().map_or(0.0, |s| s.summary.full.total);
        write_text(
            &cfg.out.join("rewind_sweep.svg"),
            &svg_chart(&format!("{} rewind sweep", cfg.model_label()), &series, full),
        )?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StylizeArgs {
    pub checkpoint: PathBuf,
    pub mask: Option<PathBuf>,
    pub content: PathBuf,
    pub style: PathBuf,
    pub output: PathBuf,
}

/// Stylizes one pair at the content image's own resolution.
pub fn cmd_stylize(args: &StylizeArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mask = args.mask.as_deref().map(PruningMask::load).transpose()?;
    let batch = |p: &Path| -> CliResult<_> {
        let t = decode_image_native(p)?;
        let shape = [1, 3, t.shape()[1], t.shape()[2]];
        Ok(t.reshape(shape)?)
    };
    let (c, s) = (batch(&args.content)?, batch(&args.style)?);
    let y = stylize(&c, &s, &ck.params, mask.as_ref())?;
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    Ok(write_image(&args.output, &y)?)
}
