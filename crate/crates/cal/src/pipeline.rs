//! Loading, training and evaluation steps shared by the commands.

use std::path::Path;
use std::time::Instant;

use cal_core::eval::{evaluate_scores, EvalConfig, EvalReport, PairScorer, PairScores, SubsetAuc};
use cal_core::ingest::{dataset_stats, filter_edges, DatasetStats, FilterCounts};
use cal_core::pca::fit_pca;
use cal_core::rng::SeededRng;
use cal_core::sampler::{sample_degree_matched_negatives, sample_eval_negatives_where};
use cal_core::trainer::{fit, TrainConfig, TrainLog};
use cal_core::types::{AssociationGraph, EmbeddingSet, PairIndex, PairSet, Role};
use cal_core::CalModel;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, NegativeConfig};
use crate::error::{CliError, Result};
use crate::formats;

/// Embeddings after reduction and id mapping.
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub set: EmbeddingSet,
    pub variance_explained: Option<f64>,
    pub mapping_coverage: f64,
    pub unmapped: Vec<String>,
}

pub fn load_embeddings(cfg: &DataConfig) -> Result<LoadedEmbeddings> {
    let path = &cfg.embeddings;
    let set = if formats::is_embedding_bin(path)? {
        formats::read_embedding_bin(path)?
    } else {
        let raw = formats::read_embedding_tsv(path, cfg.header)?;
        match cfg.pca_components {
            Some(k) => {
                let (n, dim) = (raw.matrix.rows(), raw.matrix.cols());
                if k > n.min(dim) {
                    return Err(cal_core::Error::Config(format!(
                        "pca_components = {k} exceeds min(rows = {n}, columns = {dim}) in {}",
                        path.display()
                    ))
                    .into());
                }
                let pca = fit_pca(&raw.matrix, k)?;
                let projected = pca.project_all(&raw.matrix)?.cast::<f32>();
                EmbeddingSet::from_raw(raw.ids, projected)?.with_projection(pca)
            }
            None => EmbeddingSet::from_raw(raw.ids, raw.matrix)?,
        }
    };
    let variance_explained = set.projection().map(|p| p.explained_variance_ratio());
    let Some(mapping_path) = &cfg.mapping_file else {
        return Ok(LoadedEmbeddings {
            set,
            variance_explained,
            mapping_coverage: 1.0,
            unmapped: Vec::new(),
        });
    };
    let mapping = formats::read_mapping(mapping_path)?;
    let mapped = mapping.apply(set.ids());
    if !mapped.unmapped.is_empty() {
        warn!(
            "{} of {} embedding ids have no mapping entry (first: {:?})",
            mapped.unmapped.len(),
            set.len(),
            &mapped.unmapped[..mapped.unmapped.len().min(5)]
        );
    }
    if mapped.kept.is_empty() {
        return Err(cal_core::Error::EmptyData(format!(
            "no embedding id is mapped by {}",
            mapping_path.display()
        ))
        .into());
    }
    let vectors = set.vectors().select_rows(&mapped.kept);
    let mut out = EmbeddingSet::new(mapped.ids, vectors)?;
    if let Some(p) = set.projection() {
        out = out.with_projection(p.clone());
    }
    Ok(LoadedEmbeddings {
        set: out,
        variance_explained,
        mapping_coverage: mapped.coverage,
        unmapped: mapped.unmapped,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub embeddings: LoadedEmbeddings,
    pub graph: AssociationGraph,
    pub positives: PairSet,
    pub counts: FilterCounts,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn set(&self) -> &EmbeddingSet {
        &self.embeddings.set
    }

    pub fn degrees(&self) -> &[u32] {
        self.graph.degrees()
    }
}

pub fn load_dataset(cfg: &DataConfig) -> Result<Dataset> {
    let embeddings = load_embeddings(cfg)?;
    load_dataset_with(cfg, embeddings)
}

/// Filters associations against already-loaded embeddings.
pub fn load_dataset_with(cfg: &DataConfig, embeddings: LoadedEmbeddings) -> Result<Dataset> {
    let set = &embeddings.set;
    let table = formats::read_associations(&cfg.associations, &cfg.confidence_channel, cfg.confidence_min, &|id| {
        set.index_of(id)
    })?;
    let (graph, positives, mut counts) =
        filter_edges(set.len(), table.channels, table.records, &cfg.confidence_channel, cfg.confidence_min)
            .map_err(|e| match e {
                cal_core::Error::EmptyData(m) => cal_core::Error::EmptyData(format!("{}: {m}", cfg.associations.display())),
                other => other,
            })?;
    counts.records = table.total_records;
    counts.below_threshold += table.below_threshold;
    let mut stats = dataset_stats(set, &positives, cfg.cb_threshold)?;
    stats.mapping_coverage = embeddings.mapping_coverage;
    Ok(Dataset {
        embeddings,
        graph,
        positives,
        counts,
        stats,
    })
}

/// Evaluation positives and negatives.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub positives: PairSet,
    pub negatives: PairSet,
    pub degree_matched: Option<PairSet>,
}

/// Negatives for `positives`, excluding every known positive and restricted
/// by `accept`.
pub fn eval_sets_where(
    n_entities: usize,
    known: &PairSet,
    positives: &PairSet,
    degrees: &[u32],
    cfg: &NegativeConfig,
    accept: &dyn Fn(usize, usize) -> bool,
) -> Result<EvalSets> {
    let index = PairIndex::new(n_entities, known.iter());
    let positives = positives.clone().with_role(Role::EvalPositive);
    let mut rng = SeededRng::new(cfg.seed);
    let negatives = sample_eval_negatives_where(&positives, &index, n_entities, cfg.multiplier, cfg.cap, accept, &mut rng)?;
    let degree_matched = if cfg.degree_matched {
        let mut rng = SeededRng::new(SeededRng::child_seed(cfg.seed, 1));
        match sample_degree_matched_negatives(&positives, degrees, &index, &mut rng) {
            Ok(m) => {
                if m.fallbacks > 0 {
                    info!("degree-matched negatives: {} drawn from widened bins", m.fallbacks);
                }
                Some(m.pairs)
            }
            Err(e) => {
                warn!("skipping degree-matched negatives: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(EvalSets {
        positives,
        negatives,
        degree_matched,
    })
}

/// Transductive sets: every training positive against uniform negatives.
pub fn transductive_eval_sets(ds: &Dataset, cfg: &NegativeConfig) -> Result<EvalSets> {
    eval_sets_where(ds.set().len(), &ds.positives, &ds.positives, ds.degrees(), cfg, &|_, _| true)
}

/// Scores of every evaluation pair under one model.
#[derive(Debug, Clone)]
pub struct SetScores {
    pub positives: PairScores,
    pub negatives: PairScores,
    pub degree_matched: Option<PairScores>,
}

/// `None` scores with plain cosine.
pub fn score_sets(model: Option<&CalModel<f32>>, embeddings: &EmbeddingSet, sets: &EvalSets) -> Result<SetScores> {
    let scorer = match model {
        Some(m) => PairScorer::new(m, embeddings)?,
        None => PairScorer::identity(embeddings),
    };
    Ok(SetScores {
        positives: scorer.score_pairs(&sets.positives),
        negatives: scorer.score_pairs(&sets.negatives),
        degree_matched: sets.degree_matched.as_ref().map(|dm| scorer.score_pairs(dm)),
    })
}

pub fn report_from_scores(
    sets: &EvalSets,
    scores: &SetScores,
    degrees: Option<&[u32]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut report = evaluate_scores(&sets.positives, &scores.positives, &sets.negatives, &scores.negatives, degrees, cfg)?;
    if let Some(dm) = &scores.degree_matched {
        report.subsets.push(SubsetAuc::compute("degree_matched_negatives", &scores.positives, dm)?);
    }
    Ok(report)
}

/// Scores and evaluates one model.
pub fn evaluate_model(
    model: Option<&CalModel<f32>>,
    embeddings: &EmbeddingSet,
    sets: &EvalSets,
    degrees: Option<&[u32]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let scores = score_sets(model, embeddings, sets)?;
    report_from_scores(sets, &scores, degrees, cfg)
}

/// Training outcome with wall time filled in.
pub fn train_model(positives: &PairSet, embeddings: &EmbeddingSet, cfg: &TrainConfig) -> Result<(CalModel<f32>, TrainLog)> {
    let start = Instant::now();
    let every = (cfg.epochs / 10).max(1);
    let (model, mut log) = fit(positives, embeddings, cfg, &mut |e| {
        if (e.epoch + 1) % every == 0 {
            info!("epoch {:>4}  loss {:.4}  acc {:.4}  lr {:.2e}", e.epoch + 1, e.loss, e.accuracy, e.lr);
        }
    })?;
    log.wall_time_secs = Some(start.elapsed().as_secs_f64());
    Ok((model, log))
}

/// Dataset summary as written by `ingest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n_entities: usize,
    pub dim: usize,
    pub variance_explained: Option<f64>,
    pub mapping_coverage: f64,
    pub n_unmapped: usize,
    pub filter: FilterCounts,
    pub stats: DatasetStats,
}

impl IngestSummary {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            n_entities: ds.set().len(),
            dim: ds.set().dim(),
            variance_explained: ds.embeddings.variance_explained,
            mapping_coverage: ds.embeddings.mapping_coverage,
            n_unmapped: ds.embeddings.unmapped.len(),
            filter: ds.counts,
            stats: ds.stats,
        }
    }
}

/// Runs `f` over `items` on `jobs` threads, keeping input order.
pub fn run_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

pub fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}
