//! End-to-end procedures behind the command-line verbs: train one run,
//! count parameters, analyze a checkpoint, run a base-vs-SoLU study.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::blocks::BlockKind;
use crate::checkpoint::load_model;
use crate::config::{CellSpec, RunConfig, StudyConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interference::{analyze_model, compare, comparison_csv, export_report, InterferenceReport, EVAL_BATCH};
use crate::nn::NormKind;
use crate::params::Init;
use crate::train::{train_observed, Artifacts, EpochRecord, RunLog};
use crate::vessel::{build_vessel, Model, VesselConfig};

pub const ANALYSIS_CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub vessel: VesselConfig,
    pub params: usize,
    pub log: RunLog,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
}

pub fn build_model(vessel: &VesselConfig, seed: u64) -> Result<Model<f32>> {
    build_vessel(vessel, &mut Init::seeded(seed))
}

/// Train per `cfg` into `cfg.out`: `config.toml` (resolved), `runlog.csv`,
/// `last.blab`, `best.blab`.
pub fn run_train(
    cfg: &RunConfig,
    data: &(Dataset, Dataset),
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunSummary> {
    let resolved = cfg.resolved()?;
    let vessel = resolved.model.vessel()?;
    let tc = resolved.train.train_config();
    let mut model = build_model(&vessel, tc.seed)?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.toml"), resolved.to_toml()?)?;
    let artifacts = Artifacts { dir: cfg.out.clone() };
    let log = train_observed(&mut model, &data.0, &data.1, &tc, Some(&artifacts), observer)?;
    log.write_csv(&artifacts.runlog())?;
    Ok(RunSummary {
        dir: cfg.out.clone(),
        params: model.param_count(),
        final_test_acc: log.last().map_or(0.0, |r| r.test_acc),
        best_test_acc: log.best_test_acc().unwrap_or(0.0),
        vessel,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCount {
    pub downsample: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub stem: usize,
    pub stages: Vec<StageCount>,
    pub head: usize,
    pub total: usize,
}

pub fn param_counts(model: &Model<f32>) -> ParamCounts {
    let s = &model.store;
    let count = |ids: Vec<crate::params::ParamId>| s.count_of(&ids);
    let stem = count([model.stem_conv.params(), model.stem_norm.params()].concat());
    let stages = model
        .stages
        .iter()
        .map(|st| StageCount {
            downsample: st
                .downsample
                .as_ref()
                .map_or(0, |d| count([d.norm.params(), d.conv.params()].concat())),
            blocks: st.blocks.iter().map(|b| b.param_count(s)).sum(),
        })
        .collect();
    let head = count(vec![
        model.head.norm.gamma,
        model.head.norm.beta,
        model.head.weight,
        model.head.bias,
    ]);
    ParamCounts {
        stem,
        stages,
        head,
        total: s.total(),
    }
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

pub fn count_table(vessel: &VesselConfig, counts: &ParamCounts) -> String {
    let mut out = String::new();
    let w = vessel.effective_widths();
    let _ = writeln!(
        out,
        "block {} (norm {}, solu {}), multiplier {}, widths {:?}",
        vessel.block.kind, vessel.block.norm, vessel.block.solu, vessel.width_multiplier, w
    );
    let _ = writeln!(out, "{:<22}{:>12}{:>10}", "section", "params", "millions");
    let mut row = |name: &str, n: usize| {
        let _ = writeln!(out, "{name:<22}{n:>12}{:>10}", millions(n));
    };
    row("stem", counts.stem);
    for (i, st) in counts.stages.iter().enumerate() {
        if i > 0 {
            row(&format!("stage {i} downsample"), st.downsample);
        }
        row(&format!("stage {i} blocks"), st.blocks);
    }
    row("head", counts.head);
    row("total", counts.total);
    out
}

/// Load `checkpoint` into the model described by `cfg` and export the
/// interference report for the fixed evaluation batch into `out`.
pub fn run_analyze(cfg: &RunConfig, checkpoint: &Path, test: &Dataset, out: &Path) -> Result<InterferenceReport> {
    let vessel = cfg.model.vessel()?;
    let mut model = build_model(&vessel, 0)?;
    load_model(&mut model, checkpoint)?;
    let (report, _) = analyze_model(&mut model, test, EVAL_BATCH, ANALYSIS_CHUNK)?;
    export_report(&report, out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: CellSpec,
    pub norm: Option<NormKind>,
    pub solu: bool,
    pub seed: u64,
    pub outcome: std::result::Result<CellResult, String>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub params: usize,
    pub width_multiplier: f64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub interference: Option<InterferenceReport>,
}

#[derive(Debug, Clone)]
pub struct GapRow {
    pub block: BlockKind,
    pub norm: NormKind,
    pub seeds: usize,
    /// Percent.
    pub base_acc_mean: f64,
    pub solu_acc_mean: f64,
    /// Accuracy points, base − solu.
    pub gap_mean: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    /// Mean over seeds of (base − solu) / base.
    pub relative_drop_mean: f64,
}

#[derive(Debug, Clone)]
pub struct InterferencePair {
    pub block: BlockKind,
    pub norm: NormKind,
    pub seed: u64,
    pub base_mean_abs: f64,
    pub solu_mean_abs: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub runs: Vec<CellRun>,
    pub gaps: Vec<GapRow>,
    pub interference: Vec<InterferencePair>,
    /// `(max − min) / min` of parameter counts over successful runs.
    pub param_spread: f64,
}

fn cell_tag(block: BlockKind, norm: NormKind, solu: bool, seed: u64) -> String {
    format!("{block}-{norm}-{}-s{seed}", if solu { "solu" } else { "base" })
}

fn run_cell(
    study: &StudyConfig,
    cell: CellSpec,
    solu: bool,
    seed: u64,
    data: &(Dataset, Dataset),
    observer: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(NormKind, CellResult)> {
    let model = study.model_for(cell, solu);
    let norm = model.vessel_unscaled()?.block.norm;
    let tag = cell_tag(cell.block, norm, solu, seed);
    let mut train = study.train.clone();
    train.seed = Some(seed);
    let cfg = RunConfig {
        out: study.out.join("runs").join(&tag),
        model,
        train,
        data: study.data.clone(),
    };
    let summary = run_train(&cfg, data, &mut |r| observer(&tag, r))?;
    let interference = if study.analyze {
        let mut m = build_model(&summary.vessel, 0)?;
        load_model(&mut m, &summary.dir.join("last.blab"))?;
        let (report, _) = analyze_model(&mut m, &data.1, EVAL_BATCH, ANALYSIS_CHUNK)?;
        export_report(&report, &summary.dir.join("report"))?;
        Some(report)
    } else {
        None
    };
    Ok((
        norm,
        CellResult {
            params: summary.params,
            width_multiplier: summary.vessel.width_multiplier,
            final_test_acc: summary.final_test_acc,
            best_test_acc: summary.best_test_acc,
            interference,
        },
    ))
}

/// Train every (cell, solu, seed) combination, continuing past failures,
/// then write `cells.csv`, `gaps.csv` and `interference.csv` into
/// `study.out`.
pub fn run_study(
    study: &StudyConfig,
    data: &(Dataset, Dataset),
    observer: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<StudyOutcome> {
    if study.seeds.is_empty() {
        return Err(Error::config("study needs at least one seed"));
    }
    let cells = study.cell_list();
    if cells.is_empty() {
        return Err(Error::config("study lists no cells"));
    }
    std::fs::create_dir_all(&study.out)?;
    let mut runs = Vec::new();
    for &cell in &cells {
        for solu in [false, true] {
            for &seed in &study.seeds {
                let outcome = run_cell(study, cell, solu, seed, data, observer);
                let (norm, outcome) = match outcome {
                    Ok((n, r)) => (Some(n), Ok(r)),
                    Err(e) => (cell.norm, Err(e.to_string())),
                };
                runs.push(CellRun {
                    cell,
                    norm,
                    solu,
                    seed,
                    outcome,
                });
            }
        }
    }

    let mut gaps = Vec::new();
    let mut interference = Vec::new();
    for &cell in &cells {
        let find = |solu: bool, seed: u64| {
            runs.iter()
                .find(|r| r.cell == cell && r.solu == solu && r.seed == seed)
                .and_then(|r| r.outcome.as_ref().ok().map(|o| (r.norm, o)))
        };
        let mut pts = Vec::new();
        let mut rel = Vec::new();
        let (mut base_sum, mut solu_sum) = (0.0, 0.0);
        let mut norm = None;
        for &seed in &study.seeds {
            let (Some((n, b)), Some((_, s))) = (find(false, seed), find(true, seed)) else {
                continue;
            };
            norm = n;
            let (ba, sa) = (100.0 * b.final_test_acc, 100.0 * s.final_test_acc);
            base_sum += ba;
            solu_sum += sa;
            pts.push(ba - sa);
            rel.push(if ba > 0.0 { (ba - sa) / ba } else { 0.0 });
            if let (Some(ib), Some(is)) = (&b.interference, &s.interference) {
                interference.push(InterferencePair {
                    block: cell.block,
                    norm: n.unwrap_or(cell.block.default_norm()),
                    seed,
                    base_mean_abs: ib.mean_abs_offdiag(),
                    solu_mean_abs: is.mean_abs_offdiag(),
                });
                if let Ok(c) = compare(ib, is) {
                    let dir = study.out.join("runs").join(cell_tag(
                        cell.block,
                        n.unwrap_or(cell.block.default_norm()),
                        true,
                        seed,
                    ));
                    std::fs::write(dir.join("report").join("comparison_vs_base.csv"), comparison_csv(&c))?;
                }
            }
        }
        if pts.is_empty() {
            continue;
        }
        let k = pts.len() as f64;
        gaps.push(GapRow {
            block: cell.block,
            norm: norm.unwrap_or(cell.block.default_norm()),
            seeds: pts.len(),
            base_acc_mean: base_sum / k,
            solu_acc_mean: solu_sum / k,
            gap_mean: pts.iter().sum::<f64>() / k,
            gap_min: pts.iter().copied().fold(f64::INFINITY, f64::min),
            gap_max: pts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            relative_drop_mean: rel.iter().sum::<f64>() / k,
        });
    }

    let counts: Vec<usize> = runs
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.params))
        .collect();
    let param_spread = match (counts.iter().min(), counts.iter().max()) {
        (Some(&lo), Some(&hi)) if lo > 0 => (hi - lo) as f64 / lo as f64,
        _ => 0.0,
    };
    let outcome = StudyOutcome {
        runs,
        gaps,
        interference,
        param_spread,
    };
    write_study(&study.out, &outcome)?;
    Ok(outcome)
}

pub const CELLS_HEADER: &str = "block,norm,solu,seed,params,width_multiplier,final_test_acc,best_test_acc,status";
pub const GAPS_HEADER: &str =
    "block,norm,seeds,base_acc,solu_acc,gap_points_mean,gap_points_min,gap_points_max,relative_drop_mean";
pub const INTERFERENCE_HEADER: &str = "block,norm,seed,base_mean_abs_offdiag,solu_mean_abs_offdiag,delta,verdict";

pub fn write_study(dir: &Path, s: &StudyOutcome) -> Result<()> {
    let mut cells = format!("{CELLS_HEADER}\n");
    for r in &s.runs {
        let norm = r
            .norm
            .map_or_else(|| r.cell.block.default_norm().to_string(), |n| n.to_string());
        match &r.outcome {
            Ok(o) => {
                let _ = writeln!(
                    cells,
                    "{},{norm},{},{},{},{},{:.6},{:.6},ok",
                    r.cell.block, r.solu, r.seed, o.params, o.width_multiplier, o.final_test_acc, o.best_test_acc
                );
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let _ = writeln!(cells, "{},{norm},{},{},,,,,failed: {msg}", r.cell.block, r.solu, r.seed);
            }
        }
    }
    std::fs::write(dir.join("cells.csv"), cells)?;

    let mut gaps = format!("{GAPS_HEADER}\n");
    for g in &s.gaps {
        let _ = writeln!(
            gaps,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            g.block,
            g.norm,
            g.seeds,
            g.base_acc_mean,
            g.solu_acc_mean,
            g.gap_mean,
            g.gap_min,
            g.gap_max,
            g.relative_drop_mean
        );
    }
    std::fs::write(dir.join("gaps.csv"), gaps)?;

    let mut inter = format!("{INTERFERENCE_HEADER}\n");
    for p in &s.interference {
        let d = p.solu_mean_abs - p.base_mean_abs;
        let verdict = if d > 0.0 {
            "solu more aligned"
        } else if d < 0.0 {
            "base more aligned"
        } else {
            "equal"
        };
        let _ = writeln!(
            inter,
            "{},{},{},{:.6},{:.6},{d:.6},{verdict}",
            p.block, p.norm, p.seed, p.base_mean_abs, p.solu_mean_abs
        );
    }
    std::fs::write(dir.join("interference.csv"), inter)?;
    Ok(())
}
