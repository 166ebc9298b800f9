//! The experiment runner behind the `ckasr` binary.
//!
//! Every command writes into its own run directory named
//! `<command>-<config-hash-8>-seed<seed>` and leaves `resolved-config.txt`
//! beside its outputs so the run can be repeated from its artifacts alone.

mod config;

pub use config::{ConfigError, ExperimentConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::diagnostics::{cka_mi_association, rho_grid_family, weight_histogram};
use crate::error::Error;
use crate::linalg::{format_g17, Matrix, Rng};
use crate::model::{accuracy, init_params, Checkpoint, ModelSpec, Params, SparseMask};
use crate::similarity::pairwise_cka;
use crate::sparsify::{
    epsilon_sparsity, epsilon_zeroing_deviation, knapsack_prune_hidden, l1_filter_prune_hidden, magnitude_prune_masked,
    random_prune, random_sparse_mask, random_sparse_mask_layerwise, PruneMethod, PruneResult,
};
use crate::train::{probe_heatmap_maps, train_from, train_observed, RunRecord};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    /// Work ran but part of it did not succeed.
    #[error("{0}")]
    Failed(String),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Failed(_) | CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T, E: Into<Error>> Context<T> for Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime {
            context: what(),
            source: e.into(),
        })
    }
}

/// Settings shared by every command.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub config: ExperimentConfig,
    /// Parent of the run directory.
    pub out_dir: PathBuf,
    pub force: bool,
    pub workers: usize,
}

impl Invocation {
    pub fn new(config: ExperimentConfig) -> Self {
        let out_dir = config.output_dir();
        Invocation {
            config,
            out_dir,
            force: false,
            workers: 1,
        }
    }

    fn run_dir(&self, command: &str) -> Result<PathBuf, CliError> {
        let dir = self
            .out_dir
            .join(format!("{command}-{}-seed{}", self.config.hash8(), self.config.seed()));
        prepare_dir(&dir, self.force)?;
        fs::write(dir.join("resolved-config.txt"), self.config.resolved_text()).context(|| dir_context(&dir))?;
        Ok(dir)
    }
}

fn dir_context(dir: &Path) -> String {
    format!("writing {}", dir.display())
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !force {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).context(|| dir_context(dir))?;
    }
    fs::create_dir_all(dir).context(|| dir_context(dir))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).context(|| format!("writing {}", path.display()))
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    cfg.build_data().context(|| "preparing data".into())
}

fn probe(cfg: &ExperimentConfig, eval: &Dataset) -> Matrix {
    let n = cfg.train_config("").batch_size.min(eval.len());
    eval.features.slice_rows(0, n)
}

/// `records.csv` contents. Every number is printed to round-trip exactly.
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_id,epoch,train_loss,cka_loss,eval_accuracy,mean_pairwise_cka");
    if let Some(first) = records.first() {
        for (e, _) in &first.epsilon_sparsity {
            write!(out, ",s_eps_{}", format_g17(*e)).unwrap();
        }
    }
    out.push_str(",mask_sparsity\n");
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            r.epoch,
            format_g17(r.train_loss),
            format_g17(r.cka_loss),
            format_g17(r.eval_accuracy),
            format_g17(r.mean_pairwise_cka)
        )
        .unwrap();
        for (_, s) in &r.epsilon_sparsity {
            write!(out, ",{}", format_g17(*s)).unwrap();
        }
        writeln!(out, ",{}", format_g17(r.mask_sparsity)).unwrap();
    }
    out
}

fn heatmap_block(out: &mut String, label: &str, params: &Params, mask: Option<&SparseMask>, probe: &Matrix, include_input: bool) -> crate::Result<()> {
    let Some(maps) = probe_heatmap_maps(params, mask, probe, include_input)? else {
        return Ok(());
    };
    let csv = pairwise_cka(&maps)?.to_csv();
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if out.is_empty() {
        writeln!(out, "epoch,{header}").unwrap();
    }
    for row in lines {
        writeln!(out, "{label},{row}").unwrap();
    }
    Ok(())
}

fn training_mask(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<Option<SparseMask>, CliError> {
    let mut rng = Rng::new(cfg.seed()).fork(0x6d61_736b);
    let (kind, ratio) = cfg.train_mask();
    let mask = match kind {
        "random" => random_sparse_mask(spec, ratio, &mut rng),
        "random_layerwise" => random_sparse_mask_layerwise(spec, ratio, &mut rng),
        _ => return Ok(None),
    };
    mask.map(Some).context(|| "building the training mask".into())
}

/// Outcome of one `train` run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

/// Trains and writes `records.csv`, `timings.csv`, `checkpoint.json`,
/// `resolved-config.txt`, `cka_heatmap.csv` and `weight_histogram.csv`.
pub fn cmd_train(inv: &Invocation) -> Result<TrainRun, CliError> {
    let cfg = &inv.config;
    let dir = inv.run_dir("train")?;
    let (train, eval) = load_data(cfg)?;
    let spec = cfg.model_spec(train.dim(), train.num_classes);
    let run_id = format!("{}-seed{}", cfg.hash8(), cfg.seed());
    let mut tcfg = cfg.train_config(run_id);
    tcfg.mask = training_mask(cfg, &spec)?;
    let probe = probe(cfg, &eval);
    let include_input = tcfg.cka_sr.include_input_layer;
    let epochs = tcfg.epochs;
    let mask = tcfg.mask.clone();
    let mut heatmap = String::new();

    let init = init_params(&spec, &mut Rng::new(spec.seed)).context(|| "initialising parameters".into())?;
    let outcome = train_observed(init, &train, &eval, &tcfg, |epoch, params| {
        if epoch == 1 || epoch == epochs {
            heatmap_block(&mut heatmap, &epoch.to_string(), params, mask.as_ref(), &probe, include_input)?;
        }
        Ok(())
    })
    .context(|| format!("training run {}", dir.display()))?;

    write(&dir, "records.csv", records_csv(&outcome.records))?;
    let mut timings = String::from("epoch,wall_time\n");
    for r in &outcome.records {
        writeln!(timings, "{},{}", r.epoch, format_g17(r.wall_time)).unwrap();
    }
    write(&dir, "timings.csv", timings)?;
    write(&dir, "cka_heatmap.csv", heatmap)?;
    let (bins, bound) = cfg.histogram();
    let hist = weight_histogram(&outcome.params, bins, bound).context(|| "weight histogram".into())?;
    write(&dir, "weight_histogram.csv", hist.to_csv())?;
    Checkpoint::new(spec, outcome.params, tcfg.mask, cfg.hash8())
        .save(dir.join("checkpoint.json"))
        .context(|| "saving checkpoint".into())?;
    Ok(TrainRun {
        dir,
        records: outcome.records,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Seed,
    Beta,
    Sparsity,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "seed" => Ok(SweepAxis::Seed),
            "beta" => Ok(SweepAxis::Beta),
            "sparsity" => Ok(SweepAxis::Sparsity),
            other => Err(CliError::Usage(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::Seed => "seed",
            SweepAxis::Beta => "beta",
            SweepAxis::Sparsity => "sparsity",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<(), ConfigError> {
        match self {
            SweepAxis::Seed => cfg.set("train.seed", value),
            SweepAxis::Beta => cfg.set("cka_sr.beta", value),
            SweepAxis::Sparsity => {
                cfg.set("sparsify.train_mask", "random")?;
                cfg.set("sparsify.train_mask_ratio", value)
            }
        }
    }
}

/// One row of the sweep summary: final-epoch metrics averaged over the
/// successful sub-runs sharing a value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub failed: usize,
    pub train_loss: f64,
    pub cka_loss: f64,
    pub eval_accuracy: f64,
    pub mean_pairwise_cka: f64,
    pub epsilon_sparsity: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<String>,
}

fn average(value: String, finals: &[&RunRecord], failed: usize, eps_count: usize) -> SweepRow {
    let n = finals.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RunRecord) -> f64| finals.iter().map(|r| f(r)).sum::<f64>() / n;
    SweepRow {
        value,
        runs: finals.len(),
        failed,
        train_loss: mean(&|r| r.train_loss),
        cka_loss: mean(&|r| r.cka_loss),
        eval_accuracy: mean(&|r| r.eval_accuracy),
        mean_pairwise_cka: mean(&|r| r.mean_pairwise_cka),
        epsilon_sparsity: (0..eps_count).map(|k| mean(&|r| r.epsilon_sparsity[k].1)).collect(),
    }
}

fn summary_csv(axis: SweepAxis, eps: &[f64], rows: &[SweepRow]) -> String {
    let mut out = format!("{},runs,failed,train_loss,cka_loss,eval_accuracy,mean_pairwise_cka", axis.name());
    for e in eps {
        write!(out, ",s_eps_{}", format_g17(*e)).unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.value,
            r.runs,
            r.failed,
            format_g17(r.train_loss),
            format_g17(r.cka_loss),
            format_g17(r.eval_accuracy),
            format_g17(r.mean_pairwise_cka)
        )
        .unwrap();
        for s in &r.epsilon_sparsity {
            write!(out, ",{}", format_g17(*s)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One training sub-run per (value, seed). Failures are recorded and the
/// sweep carries on; the summary lists values in the order given.
///
/// `seeds` repeats every value over several seeds (ignored on the seed
/// axis). A seed sweep appends a `mean` row over all sub-runs.
pub fn cmd_sweep(inv: &Invocation, axis: SweepAxis, values: &[String], seeds: &[u64]) -> Result<SweepOutcome, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("a sweep needs at least one value".into()));
    }
    let mut jobs = Vec::new();
    for v in values {
        let mut base = inv.config.clone();
        axis.apply(&mut base, v)?;
        let job_seeds = if axis == SweepAxis::Seed || seeds.is_empty() {
            vec![base.seed()]
        } else {
            seeds.to_vec()
        };
        for s in job_seeds {
            let mut c = base.clone();
            c.set("train.seed", &s.to_string())?;
            jobs.push((v.clone(), c));
        }
    }

    let mut sweep_cfg = inv.config.clone();
    if axis == SweepAxis::Seed {
        sweep_cfg.set("train.seed", &values[0])?;
    }
    let dir = Invocation {
        config: sweep_cfg,
        ..inv.clone()
    }
    .run_dir("sweep")?;
    let mut axis_note = format!("axis = {}\nvalues = {}\n", axis.name(), values.join(","));
    if !seeds.is_empty() {
        let s: Vec<String> = seeds.iter().map(u64::to_string).collect();
        writeln!(axis_note, "seeds = {}", s.join(",")).unwrap();
    }
    write(&dir, "sweep.txt", axis_note)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inv.workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", inv.workers)))?;
    let results: Vec<Result<TrainRun, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(_, c)| {
                cmd_train(&Invocation {
                    config: c.clone(),
                    out_dir: dir.clone(),
                    force: true,
                    workers: 1,
                })
            })
            .collect()
    });

    let eps = inv.config.reals("train.epsilons");
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut all_finals = Vec::new();
    for v in values {
        let mut finals = Vec::new();
        let mut failed = 0;
        for ((jv, c), res) in jobs.iter().zip(&results) {
            if jv != v {
                continue;
            }
            match res {
                Ok(run) => finals.extend(run.records.last()),
                Err(e) => {
                    failed += 1;
                    failures.push(format!("{}={v} seed {}: {e}", axis.name(), c.seed()));
                }
            }
        }
        all_finals.extend(finals.iter().copied());
        rows.push(average(v.clone(), &finals, failed, eps.len()));
    }
    if axis == SweepAxis::Seed {
        rows.push(average("mean".into(), &all_finals, failures.len(), eps.len()));
    }
    write(&dir, "summary.csv", summary_csv(axis, &eps, &rows))?;
    write(&dir, "failures.txt", failures.iter().map(|f| format!("{f}\n")).collect::<String>())?;
    Ok(SweepOutcome { dir, rows, failures })
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneEntry {
    #[serde(flatten)]
    pub result: PruneResult,
    pub accuracy_after: f64,
    pub accuracy_finetuned: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneReport {
    pub checkpoint: String,
    pub accuracy_before: f64,
    pub results: Vec<PruneEntry>,
    #[serde(skip)]
    pub dir: PathBuf,
}

fn prune_once(method: PruneMethod, ck: &Checkpoint, ratio: f64, seed: u64) -> crate::Result<PruneResult> {
    let existing = ck.mask.clone().unwrap_or_else(|| SparseMask::dense_for(&ck.params));
    let mut result = match method {
        PruneMethod::Magnitude => return magnitude_prune_masked(&ck.params, &existing, ratio),
        PruneMethod::L1Filter => l1_filter_prune_hidden(&ck.params, ratio)?,
        PruneMethod::Knapsack => knapsack_prune_hidden(&ck.params, ratio)?,
        PruneMethod::Random => random_prune(&ck.spec, ratio, &mut Rng::new(seed).fork(0x7072_756e))?,
        PruneMethod::IterativeMagnitude => {
            return Err(Error::invalid("iterative pruning runs through sparsify::imp_lth, not prune"))
        }
    };
    let mask = result.mask().intersect(&existing)?;
    result.achieved_sparsity = mask.sparsity();
    result.removed_per_layer = mask.newly_masked(&existing);
    result.mask = Some(mask);
    Ok(result)
}

/// Prunes a checkpoint at every configured ratio and evaluates it, with an
/// optional masked finetune. Writes `prune_result.json`, and
/// `accuracy_vs_ratio.csv` when `sparsify.ratios` lists several ratios.
pub fn cmd_prune(inv: &Invocation, checkpoint: &Path) -> Result<PruneReport, CliError> {
    let cfg = &inv.config;
    let ck = Checkpoint::load(checkpoint).context(|| format!("loading {}", checkpoint.display()))?;
    let dir = inv.run_dir("prune")?;
    let (train, eval) = load_data(cfg)?;
    let eval_acc = |p: &Params, m: Option<&SparseMask>| {
        accuracy(p, m, &eval.features, &eval.labels).context(|| "evaluating".into())
    };
    let accuracy_before = eval_acc(&ck.params, ck.mask.as_ref())?;
    let method = cfg.prune_method();
    let ratios = cfg.prune_ratios();
    let mut results = Vec::new();
    for &ratio in &ratios {
        let mut result = prune_once(method, &ck, ratio, cfg.seed()).context(|| format!("{method} pruning at {ratio}"))?;
        result.config_hash = cfg.hash8();
        let mask = result.mask().clone();
        let accuracy_after = eval_acc(&ck.params, Some(&mask))?;
        let mut accuracy_finetuned = None;
        if cfg.finetune_epochs() > 0 {
            let mut tcfg = cfg.train_config(format!("{}-finetune-{ratio}", cfg.hash8()));
            tcfg.epochs = cfg.finetune_epochs();
            tcfg.mask = Some(mask.clone());
            let tuned = train_from(ck.params.clone(), &train, &eval, &tcfg).context(|| format!("finetuning at {ratio}"))?;
            accuracy_finetuned = Some(eval_acc(&tuned.params, Some(&mask))?);
            if ratios.len() == 1 {
                Checkpoint::new(ck.spec.clone(), tuned.params, Some(mask.clone()), cfg.hash8())
                    .save(dir.join("finetuned_checkpoint.json"))
                    .context(|| "saving finetuned checkpoint".into())?;
            }
        }
        if ratios.len() == 1 {
            let mut pruned = ck.params.clone();
            mask.apply(&mut pruned);
            Checkpoint::new(ck.spec.clone(), pruned, Some(mask), cfg.hash8())
                .save(dir.join("pruned_checkpoint.json"))
                .context(|| "saving pruned checkpoint".into())?;
        }
        results.push(PruneEntry {
            result,
            accuracy_after,
            accuracy_finetuned,
        });
    }
    let report = PruneReport {
        checkpoint: checkpoint.display().to_string(),
        accuracy_before,
        results,
        dir,
    };
    write(&report.dir, "prune_result.json", serde_json::to_string_pretty(&report).context(|| "serialising".into())?)?;
    if ratios.len() > 1 {
        let mut csv = String::from("ratio,achieved_sparsity,accuracy_before,accuracy_after,accuracy_finetuned\n");
        for e in &report.results {
            writeln!(
                csv,
                "{},{},{},{},{}",
                format_g17(e.result.requested_ratio),
                format_g17(e.result.achieved_sparsity),
                format_g17(accuracy_before),
                format_g17(e.accuracy_after),
                e.accuracy_finetuned.map(format_g17).unwrap_or_default()
            )
            .unwrap();
        }
        write(&report.dir, "accuracy_vs_ratio.csv", csv)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Heatmap,
    Histogram,
    MiAssociation,
    EpsilonCurve,
    Theorem1,
}

impl std::str::FromStr for Diagnostic {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "heatmap" => Diagnostic::Heatmap,
            "histogram" => Diagnostic::Histogram,
            "mi_association" => Diagnostic::MiAssociation,
            "epsilon_curve" => Diagnostic::EpsilonCurve,
            "theorem1" => Diagnostic::Theorem1,
            other => return Err(CliError::Usage(format!("unknown diagnostic {other:?}"))),
        })
    }
}

/// Where model-bound diagnostics get their network from.
#[derive(Clone, Debug)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    /// Fresh parameters from the configured spec and seed.
    Synthetic,
    None,
}

#[derive(Clone, Debug)]
pub struct DiagnoseOutcome {
    pub dir: PathBuf,
    /// Spearman correlation, when `mi_association` ran.
    pub spearman: Option<f64>,
    /// `(ε, max logit deviation)`, when `theorem1` ran.
    pub theorem1: Vec<(f64, f64)>,
}

pub fn cmd_diagnose(inv: &Invocation, which: &[Diagnostic], source: &ModelSource) -> Result<DiagnoseOutcome, CliError> {
    let cfg = &inv.config;
    let needs_model = which.iter().any(|d| *d != Diagnostic::MiAssociation);
    let model = match (needs_model, source) {
        (false, _) => None,
        (true, ModelSource::Checkpoint(p)) => {
            Some(Checkpoint::load(p).context(|| format!("loading {}", p.display()))?)
        }
        (true, ModelSource::Synthetic) => {
            let (train, _) = load_data(cfg)?;
            let spec = cfg.model_spec(train.dim(), train.num_classes);
            let params = init_params(&spec, &mut Rng::new(spec.seed)).context(|| "initialising parameters".into())?;
            Some(Checkpoint::new(spec, params, None, cfg.hash8()))
        }
        (true, ModelSource::None) => {
            return Err(CliError::Usage(
                "this diagnostic needs a model: pass --checkpoint or --synthetic".into(),
            ))
        }
    };
    let dir = inv.run_dir("diagnose")?;
    let mut outcome = DiagnoseOutcome {
        dir: dir.clone(),
        spearman: None,
        theorem1: Vec::new(),
    };
    let data = if which.iter().any(|d| matches!(d, Diagnostic::Heatmap | Diagnostic::Theorem1)) {
        Some(load_data(cfg)?.1)
    } else {
        None
    };

    for d in which {
        match d {
            Diagnostic::Heatmap => {
                let ck = model.as_ref().expect("model loaded");
                let probe = probe(cfg, data.as_ref().expect("data loaded"));
                let mut csv = String::new();
                heatmap_block(&mut csv, "final", &ck.params, ck.mask.as_ref(), &probe, cfg.cka_sr().include_input_layer)
                    .context(|| "heatmap".into())?;
                write(&dir, "cka_heatmap.csv", csv)?;
            }
            Diagnostic::Histogram => {
                let ck = model.as_ref().expect("model loaded");
                let (bins, bound) = cfg.histogram();
                let h = weight_histogram(&ck.params, bins, bound).context(|| "histogram".into())?;
                write(&dir, "weight_histogram.csv", h.to_csv())?;
            }
            Diagnostic::MiAssociation => {
                let mut rng = Rng::new(cfg.seed()).fork(0x6d69);
                let family = rho_grid_family(cfg.mi_samples(), &mut rng).context(|| "sampling the ρ grid".into())?;
                let a = cka_mi_association(&family, cfg.mi_convention()).context(|| "CKA/MI association".into())?;
                write(&dir, "mi_pairs.csv", a.to_csv())?;
                write(&dir, "mi_association.txt", format!("spearman = {}\n", format_g17(a.spearman)))?;
                outcome.spearman = Some(a.spearman);
            }
            Diagnostic::EpsilonCurve => {
                let ck = model.as_ref().expect("model loaded");
                let mut csv = String::from("epsilon,small_params,total_params,s_epsilon\n");
                for e in cfg.reals("diagnose.epsilons") {
                    let r = epsilon_sparsity(&ck.params, e);
                    writeln!(csv, "{},{},{},{}", format_g17(e), r.small_params, r.total_params, format_g17(r.s_epsilon)).unwrap();
                }
                write(&dir, "epsilon_curve.csv", csv)?;
            }
            Diagnostic::Theorem1 => {
                let ck = model.as_ref().expect("model loaded");
                let probe = probe(cfg, data.as_ref().expect("data loaded"));
                let mut csv = String::from("epsilon,s_epsilon,max_logit_deviation\n");
                for e in cfg.reals("diagnose.theorem1_epsilons") {
                    let dev = epsilon_zeroing_deviation(&ck.params, ck.mask.as_ref(), &probe, e)
                        .context(|| "ε-zeroing sweep".into())?;
                    let s = epsilon_sparsity(&ck.params, e).s_epsilon;
                    writeln!(csv, "{},{},{}", format_g17(e), format_g17(s), format_g17(dev)).unwrap();
                    outcome.theorem1.push((e, dev));
                }
                write(&dir, "theorem1.csv", csv)?;
            }
        }
    }
    Ok(outcome)
}

/// Base configuration for commands that start from a checkpoint: the
/// `resolved-config.txt` next to it when present, else the defaults.
pub fn config_beside(checkpoint: &Path) -> Result<ExperimentConfig, CliError> {
    let resolved = checkpoint.with_file_name("resolved-config.txt");
    if resolved.exists() {
        Ok(ExperimentConfig::load(resolved)?)
    } else {
        Ok(ExperimentConfig::default())
    }
}
