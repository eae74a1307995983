//! Command implementations. Each returns the process exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cal_core::diagnostics::{preflight, Verdict};
use cal_core::eval::PairScorer;
use cal_core::multi_seed::{MultiSeedSummary, SeedOutcome};
use cal_core::synth::{generate, Scenario, ScenarioKind, ScenarioSpec, SYNTH_CHANNEL, SYNTH_SCORE};
use cal_core::types::Role;
use cal_core::CalModel;
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::ablation::{run_ablation, AblationKind};
use crate::cli::{Cli, Command, DistanceFormat, Global, SweepAxis, SynthArgs};
use crate::config::RunConfig;
use crate::error::{exit, CliError, Result};
use crate::formats;
use crate::manifest::{write_json, RunDir, RunManifest, TOOL_VERSION};
use crate::pipeline::{
    ensure_exists, evaluate_model, load_dataset, load_dataset_with, load_embeddings, run_parallel, train_model,
    transductive_eval_sets, Dataset, IngestSummary,
};
use crate::report;

pub fn run(cli: Cli) -> Result<i32> {
    if let Command::Synth(args) = &cli.command {
        return synth(&cli.global, args);
    }
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Ingest => ingest(ctx),
        Command::Train { multi_seed: false } => train(ctx),
        Command::Train { multi_seed: true } => train_multi(ctx),
        Command::Eval { checkpoint } => eval(ctx, checkpoint),
        Command::Ablate { which } => ablate(ctx, which),
        Command::Diagnose { skip_shuffled } => diagnose(ctx, skip_shuffled),
        Command::Sweep { axis, checkpoint } => sweep(ctx, axis, checkpoint),
        Command::Export { checkpoint, distance } => export(ctx, checkpoint, distance),
        Command::Synth(_) => unreachable!("handled above"),
    }
}

/// Resolved config, run directory and bookkeeping for one command.
struct Ctx {
    cfg: RunConfig,
    dir: RunDir,
    jobs: usize,
    start: Instant,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn new(global: &Global) -> Result<Self> {
        let path = global
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = global.seed {
            cfg.train.seed = seed;
        }
        if global.header {
            cfg.data.header = true;
        }
        cfg.validate()?;
        println!("# config {}\n{}", cfg.hash(), cfg.to_pretty_json());
        let dir = RunDir::for_config(&global.out, &cfg, global.force)?;
        info!("run directory {}", dir.path.display());
        Ok(Self {
            cfg,
            dir,
            jobs: global.jobs.max(1),
            start: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn claim(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.claim(name)?;
        self.outputs.push(PathBuf::from(name));
        Ok(p)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.claim(name)?;
        write_json(&p, value)
    }

    fn finish(mut self, command: &str, seeds: Vec<u64>) -> Result<i32> {
        let name = format!("manifest-{command}.json");
        let path = self.dir.claim(&name)?;
        let mut m = RunManifest::new(command, &self.cfg, seeds)?;
        m.wall_time_secs = self.start.elapsed().as_secs_f64();
        m.outputs = std::mem::take(&mut self.outputs);
        write_json(&path, &m)?;
        println!("wrote {}", self.dir.path.display());
        Ok(exit::OK)
    }

    /// `explicit`, else the run directory's `model.ckpt`.
    fn checkpoint_path(&self, explicit: Option<PathBuf>) -> PathBuf {
        explicit.unwrap_or_else(|| self.dir.file("model.ckpt"))
    }
}

fn ingest(mut ctx: Ctx) -> Result<i32> {
    let ds = load_dataset(&ctx.cfg.data)?;
    let summary = IngestSummary::of(&ds);
    print!("{}", report::ingest_table(&summary));
    let p = ctx.claim("embeddings.calemb")?;
    formats::write_embedding_bin(&p, ds.set())?;
    let p = ctx.claim("positives.tsv")?;
    formats::write_pairs(&p, &ds.positives, ds.set())?;
    ctx.write_json("ingest_summary.json", &summary)?;
    if ctx.cfg.data.mapping_file.is_some() {
        let p = ctx.claim("unmapped_ids.txt")?;
        let mut text = ds.embeddings.unmapped.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    }
    ctx.finish("ingest", Vec::new())
}

fn train(mut ctx: Ctx) -> Result<i32> {
    let ds = load_dataset(&ctx.cfg.data)?;
    let model_path = ctx.claim("model.ckpt")?;
    let log_path = ctx.claim("train_log.tsv")?;
    info!(
        "training on {} pairs, {} entities, dim {}",
        ds.positives.len(),
        ds.set().len(),
        ds.set().dim()
    );
    let (model, log) = match train_model(&ds.positives, ds.set(), &ctx.cfg.train) {
        Ok(v) => v,
        Err(CliError::Core(cal_core::Error::Divergence { epoch, loss, last_good })) => {
            let message = format!("training diverged at epoch {epoch} (loss {loss})");
            let checkpoint = match last_good {
                Some(m) => {
                    let p = ctx.dir.claim("model.last_good.ckpt")?;
                    formats::write_checkpoint(&p, &m)?;
                    Some(p)
                }
                None => None,
            };
            return Err(CliError::Diverged { message, checkpoint });
        }
        Err(e) => return Err(e),
    };
    formats::write_checkpoint(&model_path, &model)?;
    formats::write_train_log(&log_path, &log)?;
    println!(
        "final loss {:.4}  alpha {:.4}  steps {}  ({:.1}s)",
        log.final_loss().unwrap_or(f64::NAN),
        log.final_alpha,
        log.steps,
        log.wall_time_secs.unwrap_or(0.0)
    );
    let seed = ctx.cfg.train.seed;
    ctx.finish("train", vec![seed])
}

fn train_multi(mut ctx: Ctx) -> Result<i32> {
    if ctx.cfg.seeds.len() < 2 {
        return Err(CliError::Config("multi-seed runs need at least two seeds".into()));
    }
    let ds = load_dataset(&ctx.cfg.data)?;
    let out = ctx.claim("multi_seed.json")?;
    let sets = transductive_eval_sets(&ds, &ctx.cfg.negatives)?;
    let cfg = &ctx.cfg;
    let runs = run_parallel(&cfg.seeds, ctx.jobs, |&seed| {
        let mut t = cfg.train.clone();
        t.seed = seed;
        let result = train_model(&ds.positives, ds.set(), &t)
            .and_then(|(m, _)| evaluate_model(Some(&m), ds.set(), &sets, Some(ds.degrees()), &cfg.eval));
        match result {
            Ok(r) => SeedOutcome {
                seed,
                overall_auc: Some(r.overall_auc),
                cb_auc: r.cb_auc,
                error: None,
            },
            Err(e) => {
                warn!("seed {seed}: {e}");
                SeedOutcome {
                    seed,
                    overall_auc: None,
                    cb_auc: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })?;
    let summary = MultiSeedSummary::from_runs(runs);
    print!("{}", report::multi_seed_table(&summary));
    write_json(&out, &summary)?;
    let seeds = ctx.cfg.seeds.clone();
    ctx.finish("train-multi-seed", seeds)
}

fn load_model(path: &Path) -> Result<CalModel<f32>> {
    ensure_exists(path)?;
    formats::read_checkpoint(path)
}

fn eval(mut ctx: Ctx, checkpoint: Option<PathBuf>) -> Result<i32> {
    let model = load_model(&ctx.checkpoint_path(checkpoint))?;
    let ds = load_dataset(&ctx.cfg.data)?;
    let out = ctx.claim("eval_report.json")?;
    let sets = transductive_eval_sets(&ds, &ctx.cfg.negatives)?;
    let mut r = evaluate_model(Some(&model), ds.set(), &sets, Some(ds.degrees()), &ctx.cfg.eval)?;
    r.config_hash = Some(ctx.cfg.hash());
    r.seeds = vec![ctx.cfg.train.seed];
    print!("{}", report::eval_table(&r));
    write_json(&out, &r)?;
    let seed = ctx.cfg.train.seed;
    ctx.finish("eval", vec![seed])
}

fn ablate(mut ctx: Ctx, which: AblationKind) -> Result<i32> {
    let ds = load_dataset(&ctx.cfg.data)?;
    let out = ctx.claim(&format!("ablation_{}.json", which.as_str()))?;
    let r = run_ablation(&ds, &ctx.cfg, which, ctx.jobs)?;
    print!("{}", report::comparison_table((&r.reference_label, &r.ablation_label), &r.reference, &r.ablation));
    if let Some(s) = &r.shuffled {
        println!("\nverdict: {} ({})", s.verdict.as_str(), s.explanation);
    }
    if !r.degree_quantiles.is_empty() {
        print!("\n{}", report::quantile_table(&r.degree_quantiles));
    }
    for s in &r.ablation.subsets {
        println!("{:<24} {:.4} (cosine {:.4}, {} pos / {} neg)", s.name, s.cal_auc, s.cosine_auc, s.n_pos, s.n_neg);
    }
    if let Some(h) = r.held_out_entities {
        println!("held-out entities {h}");
    }
    write_json(&out, &r)?;
    let seeds = vec![ctx.cfg.train.seed, ctx.cfg.ablation.shuffle_seed, ctx.cfg.ablation.split_seed];
    ctx.finish(&format!("ablate-{}", which.as_str()), seeds)
}

fn diagnose(mut ctx: Ctx, skip_shuffled: bool) -> Result<i32> {
    let ds = load_dataset(&ctx.cfg.data)?;
    let out = ctx.claim("diagnostics.json")?;
    let mut r = preflight(ds.set(), &ds.positives, &ds.graph, &ctx.cfg.diagnostics, ctx.cfg.negatives.seed)?;
    if skip_shuffled {
        info!("shuffled ablation skipped");
    } else {
        let abl = run_ablation(&ds, &ctx.cfg, AblationKind::Shuffled, ctx.jobs)?;
        if let Some(s) = &abl.shuffled {
            r.record_shuffled(s);
        }
    }
    print!("{}", report::diagnostics_table(&r));
    write_json(&out, &r)?;
    let worst = r.worst();
    let seed = ctx.cfg.train.seed;
    ctx.finish("diagnose", vec![seed])?;
    if worst == Verdict::Fail {
        eprintln!("diagnostics failed");
        return Ok(exit::DIAGNOSTIC_FAIL);
    }
    Ok(exit::OK)
}

/// Loads `checkpoint` (or the run directory's model) if present, else trains.
fn model_or_train(ctx: &Ctx, ds: &Dataset, checkpoint: Option<PathBuf>) -> Result<CalModel<f32>> {
    let explicit = checkpoint.is_some();
    let path = ctx.checkpoint_path(checkpoint);
    if explicit || path.exists() {
        info!("using model {}", path.display());
        return load_model(&path);
    }
    info!("no checkpoint; training a model");
    train_model(&ds.positives, ds.set(), &ctx.cfg.train).map(|(m, _)| m)
}

#[derive(Debug, Serialize)]
struct ConfidenceRow {
    confidence_min: u16,
    n_pairs: Option<usize>,
    overall_auc: Option<f64>,
    cosine_auc: Option<f64>,
    cb_auc: Option<f64>,
    error: Option<String>,
}

fn sweep(mut ctx: Ctx, axis: SweepAxis, checkpoint: Option<PathBuf>) -> Result<i32> {
    let out = ctx.claim(&format!("sweep_{}.json", axis.as_str()))?;
    let value = match axis {
        SweepAxis::Confidence => {
            let embeddings = load_embeddings(&ctx.cfg.data)?;
            let cfg = &ctx.cfg;
            let rows = run_parallel(&cfg.sweep.confidence, ctx.jobs, |&t| {
                let mut data = cfg.data.clone();
                data.confidence_min = t;
                let run = || -> Result<ConfidenceRow> {
                    let ds = load_dataset_with(&data, embeddings.clone())?;
                    let (m, _) = train_model(&ds.positives, ds.set(), &cfg.train)?;
                    let sets = transductive_eval_sets(&ds, &cfg.negatives)?;
                    let r = evaluate_model(Some(&m), ds.set(), &sets, Some(ds.degrees()), &cfg.eval)?;
                    Ok(ConfidenceRow {
                        confidence_min: t,
                        n_pairs: Some(ds.positives.len()),
                        overall_auc: Some(r.overall_auc),
                        cosine_auc: Some(r.cosine_auc),
                        cb_auc: r.cb_auc,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| ConfidenceRow {
                    confidence_min: t,
                    n_pairs: None,
                    overall_auc: None,
                    cosine_auc: None,
                    cb_auc: None,
                    error: Some(e.to_string()),
                })
            })?;
            println!(" min score    pairs  overall   cosine       CB");
            let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            for r in &rows {
                match &r.error {
                    None => println!(
                        " {:>9} {:>8}  {:>7}  {:>7}  {:>7}",
                        r.confidence_min,
                        r.n_pairs.unwrap_or(0),
                        f(r.overall_auc),
                        f(r.cosine_auc),
                        f(r.cb_auc)
                    ),
                    Some(e) => println!(" {:>9}  failed: {e}", r.confidence_min),
                }
            }
            json!({ "axis": axis.as_str(), "rows": rows })
        }
        SweepAxis::Lambda | SweepAxis::CbThreshold => {
            let ds = load_dataset(&ctx.cfg.data)?;
            let model = model_or_train(&ctx, &ds, checkpoint)?;
            let sets = transductive_eval_sets(&ds, &ctx.cfg.negatives)?;
            let r = evaluate_model(Some(&model), ds.set(), &sets, Some(ds.degrees()), &ctx.cfg.eval)?;
            print!("{}", report::eval_table(&r));
            if axis == SweepAxis::Lambda {
                json!({ "axis": axis.as_str(), "rows": r.lambda_sweep })
            } else {
                json!({ "axis": axis.as_str(), "rows": r.cb_sweep })
            }
        }
    };
    write_json(&out, &value)?;
    let seed = ctx.cfg.train.seed;
    ctx.finish(&format!("sweep-{}", axis.as_str()), vec![seed])
}

fn export(mut ctx: Ctx, checkpoint: Option<PathBuf>, distance: Option<DistanceFormat>) -> Result<i32> {
    let model = load_model(&ctx.checkpoint_path(checkpoint))?;
    let embeddings = load_embeddings(&ctx.cfg.data)?;
    let set = &embeddings.set;
    let scorer = PairScorer::new(&model, set)?;
    let p = ctx.claim("transformed.tsv")?;
    formats::write_vectors_tsv(&p, set.ids(), scorer.transformed())?;
    match distance {
        Some(DistanceFormat::Tsv) => {
            let p = ctx.claim("distance.tsv")?;
            formats::write_distance_tsv(&p, set.ids(), scorer.transformed())?;
        }
        Some(DistanceFormat::Bin) => {
            let p = ctx.claim("distance.caldst")?;
            formats::write_distance_bin(&p, scorer.transformed())?;
        }
        None => {}
    }
    let seed = ctx.cfg.train.seed;
    ctx.finish("export", vec![seed])
}

fn parse_kind(s: &str) -> Result<ScenarioKind> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        CliError::Config(format!(
            "unknown scenario kind {s:?} (latent_signal, clustered_positives, degree_confound, no_signal)"
        ))
    })
}

fn synth(global: &Global, args: &SynthArgs) -> Result<i32> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<ScenarioSpec>(&text).map_err(|e| CliError::ConfigFile {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => {
            let need = |name: &str| CliError::Config(format!("synth needs --{name} (or --spec)"));
            let kind = parse_kind(args.kind.as_deref().ok_or_else(|| need("kind"))?)?;
            ScenarioSpec::new(
                kind,
                args.entities.ok_or_else(|| need("entities"))?,
                args.dim.ok_or_else(|| need("dim"))?,
                args.pairs.ok_or_else(|| need("pairs"))?,
                0,
            )
        }
    };
    if let Some(k) = &args.kind {
        spec.kind = parse_kind(k)?;
    }
    if let Some(v) = args.entities {
        spec.n_entities = v;
    }
    if let Some(v) = args.dim {
        spec.dim = v;
    }
    if let Some(v) = args.pairs {
        spec.n_pairs = v;
    }
    if let Some(v) = args.noise {
        spec.noise_level = v;
    }
    if let Some(s) = global.seed {
        spec.seed = s;
    }
    println!("{}", serde_json::to_string_pretty(&spec).expect("spec serializes"));
    let scenario = generate(&spec)?;
    let dir = RunDir::at(global.out.clone(), global.force)?;
    write_scenario(&dir, &scenario)?;
    println!(
        "wrote {} entities and {} pairs to {}",
        scenario.embeddings.len(),
        scenario.positives.len(),
        dir.path.display()
    );
    Ok(exit::OK)
}

/// Writes a scenario as `embeddings.tsv`, `associations.txt`, a manifest of
/// what was planted and a ready-to-use `config.json`.
pub fn write_scenario(dir: &RunDir, scenario: &Scenario) -> Result<()> {
    let set = &scenario.embeddings;
    let p = dir.claim("embeddings.tsv")?;
    formats::write_vectors_tsv(&p, set.ids(), set.vectors())?;

    let p = dir.claim("associations.txt")?;
    let mut text = format!("protein1 protein2 {SYNTH_CHANNEL}\n");
    for (a, b) in scenario.positives.iter() {
        text.push_str(&format!("{} {} {SYNTH_SCORE}\n", set.id(a), set.id(b)));
    }
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;

    dir.write_json(
        "synth_manifest.json",
        &json!({
            "tool_version": TOOL_VERSION,
            "spec": scenario.spec,
            "n_pairs": scenario.positives.len(),
            "role": Role::TrainPositive.as_str(),
            "planted": scenario.planted,
        }),
    )?;
    dir.write_json(
        "config.json",
        &json!({
            "data": {
                "embeddings": "embeddings.tsv",
                "associations": "associations.txt",
                "pca_components": null,
                "confidence_channel": SYNTH_CHANNEL,
            }
        }),
    )?;
    Ok(())
}
