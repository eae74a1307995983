//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a criterion fails that is not listed in `KNOWN_UNMET`.
//! Scenario groups run on separate threads; on one core the suite takes
//! about 13 minutes.
//!
//! `CAL_ACCEPTANCE_ONLY=5,6` runs a subset.

use std::path::Path;
use std::time::Instant;

use cal::ablation::{run_ablation, AblationKind, AblationResult};
use cal::commands::write_scenario;
use cal::config::RunConfig;
use cal::formats::write_checkpoint;
use cal::manifest::RunDir;
use cal::pipeline::{load_dataset, score_sets, train_model, transductive_eval_sets, report_from_scores, Dataset, EvalSets};
use cal_core::diagnostics::{shuffled_verdict, Verdict};
use cal_core::eval::{auc, cross_boundary_eval, EvalReport};
use cal_core::linalg::Matrix;
use cal_core::model::CalModel;
use cal_core::multi_seed::MeanSd;
use cal_core::sampler::{shuffle_ablation, NegativeMode};
use cal_core::synth::{generate, ScenarioKind, ScenarioSpec};
use cal_core::trainer::{init_for, step_loss, StepInputs, TrainConfig};
use cal_core::SeededRng;

/// Criteria this implementation does not reach; see the README.
const KNOWN_UNMET: &[u8] = &[8];

const PARAMS_D50_H1024: usize = 2_208_919;
const GRAD_REL_TOL: f64 = 1e-4;
const AUC_EXACT_TOL: f64 = 1e-12;
const SEED_SD_MAX: f64 = 0.02;
const LATENT_COSINE_MAX: f64 = 0.60;
const LATENT_CAL_MIN: f64 = 0.85;
const LATENT_CB_MIN: f64 = 0.80;
const LATENT_TRAIN_SECS_MAX: f64 = 180.0;
const SHUFFLED_MARGIN: f64 = 0.05;
const NO_SIGNAL_GAP_MAX: f64 = 0.05;
const NODE_SPLIT_GAP_MIN: f64 = 0.05;

struct Line {
    id: u8,
    pass: bool,
    text: String,
}

fn line(id: u8, pass: bool, text: String) -> Line {
    Line { id, pass, text }
}

fn main() {
    let only: Option<Vec<u8>> = std::env::var("CAL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().map_or(true, |o| o.contains(&id));
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();

    // The latent reference trains alone so its runtime is measured without
    // contention; the remaining scenarios then train on their own threads.
    let latent = [4, 5, 6, 10, 11].iter().any(|&i| wanted(i)).then(|| Latent::new(root));
    let mut lines: Vec<Line> = std::thread::scope(|s| {
        let latent = s.spawn(|| latent.as_ref().map(|l| l.criteria(&wanted)).unwrap_or_default());
        let clustered = s.spawn(|| if wanted(7) { vec![clustered(root)] } else { vec![] });
        let degree = s.spawn(|| if wanted(8) { vec![degree_confound(root)] } else { vec![] });
        let no_signal = s.spawn(|| if wanted(9) { vec![no_signal(root)] } else { vec![] });
        let mut quick = Vec::new();
        if wanted(1) {
            quick.push(parameter_count());
        }
        if wanted(2) {
            quick.push(gradient_check());
        }
        if wanted(3) {
            quick.push(auc_oracle());
        }
        for h in [latent, clustered, degree, no_signal] {
            quick.extend(h.join().expect("criterion thread"));
        }
        quick
    });
    lines.sort_by_key(|l| l.id);

    for l in &lines {
        let tag = match (l.pass, KNOWN_UNMET.contains(&l.id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2}: {tag:<12} {}", l.id, l.text);
    }
    let unexpected: Vec<u8> = lines.iter().filter(|l| !l.pass && !KNOWN_UNMET.contains(&l.id)).map(|l| l.id).collect();
    let met = lines.iter().filter(|l| l.pass).count();
    println!(
        "acceptance: {met}/{} criteria met in {:.0}s; known unmet {:?}",
        lines.len(),
        start.elapsed().as_secs_f64(),
        KNOWN_UNMET
    );
    if !unexpected.is_empty() {
        println!("acceptance: unexpected failures {unexpected:?}");
        std::process::exit(1);
    }
}

/// The latent-signal scenario and its reference model, shared by criteria
/// 4, 5, 6, 10 and 11.
struct Latent {
    sc: Scenario,
    model: CalModel<f32>,
    train_secs: f64,
    sets: EvalSets,
    reference: EvalReport,
}

impl Latent {
    fn new(root: &Path) -> Self {
        let sc = Scenario::new(root, ScenarioKind::LatentSignal, 2000, 20_000, |t| {
            t.hidden = 64;
            t.epochs = 100;
        });
        let t = Instant::now();
        let (model, _) = train_model(&sc.ds.positives, sc.ds.set(), &sc.cfg.train).expect("train");
        let train_secs = t.elapsed().as_secs_f64();
        let sets = transductive_eval_sets(&sc.ds, &sc.cfg.negatives).expect("eval sets");
        let reference = sc.report(&model, &sets);
        Self {
            sc,
            model,
            train_secs,
            sets,
            reference,
        }
    }

    fn criteria(&self, wanted: &dyn Fn(u8) -> bool) -> Vec<Line> {
        let mut out = Vec::new();
        if wanted(4) {
            out.push(determinism(&self.sc, &self.model, &self.sets, &self.reference));
        }
        if wanted(5) {
            out.push(latent_recovery(&self.reference, self.train_secs));
        }
        if wanted(6) {
            out.push(shuffled_latent(&self.sc, &self.sets, &self.reference));
        }
        if wanted(10) {
            out.push(node_split(&self.sc));
        }
        if wanted(11) {
            out.push(sweep_consistency(&self.sc, &self.model, &self.sets, &self.reference));
        }
        out
    }
}

/// A synthetic scenario written in the input formats and loaded back
/// through the same path the CLI uses.
struct Scenario {
    cfg: RunConfig,
    ds: Dataset,
}

impl Scenario {
    fn new(root: &Path, kind: ScenarioKind, n: usize, pairs: usize, train: impl FnOnce(&mut TrainConfig)) -> Self {
        let spec = ScenarioSpec::new(kind, n, 50, pairs, 1);
        let scenario = generate(&spec).expect("scenario");
        let dir = RunDir::at(root.join(kind.as_str()), true).expect("dir");
        write_scenario(&dir, &scenario).expect("write scenario");
        let mut cfg = RunConfig::load(&dir.file("config.json")).expect("config");
        train(&mut cfg.train);
        cfg.train.anneal_t_max = cfg.train.epochs;
        cfg.eval.n_boot = 100;
        let ds = load_dataset(&cfg.data).expect("dataset");
        assert_eq!(ds.positives.len(), pairs, "every generated pair survives ingest");
        Self { cfg, ds }
    }

    fn report(&self, model: &CalModel<f32>, sets: &EvalSets) -> EvalReport {
        let scores = score_sets(Some(model), self.ds.set(), sets).expect("scores");
        report_from_scores(sets, &scores, Some(self.ds.degrees()), &self.cfg.eval).expect("report")
    }

    fn ablate(&self, kind: AblationKind, cfg: &RunConfig) -> AblationResult {
        run_ablation(&self.ds, cfg, kind, 1).expect("ablation")
    }
}

fn parameter_count() -> Line {
    let cfg = TrainConfig {
        hidden: 1024,
        ..Default::default()
    };
    let got = init_for(&cfg, 50).expect("init").parameter_count();
    line(1, got == PARAMS_D50_H1024, format!("parameter count d=50 h=1024: {got} (want {PARAMS_D50_H1024})"))
}

fn unit_rows(rows: usize, d: usize, rng: &mut SeededRng) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rows, d, |_, _| rng.normal());
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn nudge(model: &mut CalModel<f64>, index: usize, by: f64) {
    let mut i = index;
    for (_, t) in model.tensors_mut() {
        if i < t.len() {
            t[i] += by;
            return;
        }
        i -= t.len();
    }
    model.alpha_logit += by;
}

fn gradient_check() -> Line {
    const H: f64 = 1e-6;
    // Round-off in the central difference is ~1e-10, so the relative error
    // of gradients below this scale is measured against the scale instead.
    const FLOOR: f64 = 1e-5;
    const TAU: f64 = 0.5;
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let d = 2 + rng.index(3);
        let hidden = 2 + rng.index(5);
        let b = 2 + rng.index(3);
        let mut model = CalModel::<f32>::init(d, hidden, &mut rng).expect("init").cast::<f64>();
        for (_, t) in model.tensors_mut() {
            t.iter_mut().for_each(|x| *x += 0.3 * rng.normal());
        }
        model.alpha_logit = rng.normal();
        let step = StepInputs {
            anchors: unit_rows(b, d, &mut rng),
            partners: unit_rows(b, d, &mut rng),
            negatives: None,
        };
        let (_, _, grads) = step_loss(&model, &step, TAU).expect("loss");
        let analytic: Vec<f64> = grads
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .chain(std::iter::once(grads.alpha_logit))
            .collect();
        for (p, &a) in analytic.iter().enumerate() {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            nudge(&mut plus, p, H);
            nudge(&mut minus, p, -H);
            let lp = step_loss(&plus, &step, TAU).expect("loss").0;
            let lm = step_loss(&minus, &step, TAU).expect("loss").0;
            let numeric = (lp - lm) / (2.0 * H);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
            checked += 1;
        }
    }
    line(
        2,
        worst < GRAD_REL_TOL,
        format!("gradient check: 20 models, {checked} parameters, worst relative error {worst:.2e} (tol {GRAD_REL_TOL:e})"),
    )
}

fn auc_oracle() -> Line {
    let mut rng = SeededRng::new(99);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 1 + rng.index(200);
        let m = 1 + rng.index(200);
        // Every other case draws from a coarse grid to force ties.
        let draw = |rng: &mut SeededRng| {
            if case % 2 == 0 {
                rng.index(7) as f64
            } else {
                rng.normal()
            }
        };
        let pos: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let brute = wins / (n * m) as f64;
        worst = worst.max((auc(&pos, &neg).expect("auc") - brute).abs());
    }
    line(
        3,
        worst <= AUC_EXACT_TOL,
        format!("AUC oracle: 100 score sets, max |rank - brute force| {worst:.1e} (tol {AUC_EXACT_TOL:e})"),
    )
}

fn determinism(latent: &Scenario, model: &CalModel<f32>, sets: &EvalSets, reference: &EvalReport) -> Line {
    let dir = tempfile::tempdir().expect("temp dir");
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let (again, _) = train_model(&latent.ds.positives, latent.ds.set(), &latent.cfg.train).expect("train");
    write_checkpoint(&a, model).expect("write");
    write_checkpoint(&b, &again).expect("write");
    let same_ckpt = std::fs::read(&a).expect("read") == std::fs::read(&b).expect("read");
    let same_report = latent.report(&again, sets) == *reference;

    let mut aucs = vec![reference.overall_auc];
    for seed in [123, 456] {
        let mut t = latent.cfg.train.clone();
        t.seed = seed;
        let (m, _) = train_model(&latent.ds.positives, latent.ds.set(), &t).expect("train");
        aucs.push(latent.report(&m, sets).overall_auc);
    }
    let sd = MeanSd::of(&aucs).expect("three runs").sd;
    line(
        4,
        same_ckpt && same_report && sd < SEED_SD_MAX,
        format!(
            "determinism: identical checkpoints {same_ckpt}, identical reports {same_report}; \
             seeds 42/123/456 AUC {:.4}/{:.4}/{:.4}, SD {sd:.4} (max {SEED_SD_MAX})",
            aucs[0], aucs[1], aucs[2]
        ),
    )
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn latent_recovery(r: &EvalReport, secs: f64) -> Line {
    let cb = r.cb_auc.unwrap_or(f64::NAN);
    let pass = r.cosine_auc <= LATENT_COSINE_MAX
        && r.overall_auc >= LATENT_CAL_MIN
        && cb >= LATENT_CB_MIN
        && secs <= LATENT_TRAIN_SECS_MAX;
    line(
        5,
        pass,
        format!(
            "latent signal: cosine {:.4} (<= {LATENT_COSINE_MAX}), CAL {:.4} (>= {LATENT_CAL_MIN}), \
             CB {cb:.4} (>= {LATENT_CB_MIN}, {} pos), training {secs:.0}s (<= {LATENT_TRAIN_SECS_MAX:.0}s)",
            r.cosine_auc, r.overall_auc, r.cb_pos
        ),
    )
}

/// Trains on the shuffled pairing the way `ablate shuffled` does and
/// compares against the reference already trained.
fn shuffled_latent(latent: &Scenario, sets: &EvalSets, reference: &EvalReport) -> Line {
    let mut rng = SeededRng::new(latent.cfg.ablation.shuffle_seed);
    let shuffled_pairs = shuffle_ablation(&latent.ds.positives, &mut rng);
    let (model, _) = train_model(&shuffled_pairs, latent.ds.set(), &latent.cfg.train).expect("train");
    let shuffled = latent.report(&model, sets);
    let verdict = shuffled_verdict(reference, &shuffled, &latent.cfg.diagnostics).expect("verdict");
    let pass = shuffled.overall_auc <= reference.overall_auc - SHUFFLED_MARGIN && verdict.verdict == Verdict::Pass;
    line(
        6,
        pass,
        format!(
            "shuffled ablation: reference {:.4}, shuffled {:.4} (need <= reference - {SHUFFLED_MARGIN}), verdict {}",
            reference.overall_auc,
            shuffled.overall_auc,
            verdict.verdict.as_str()
        ),
    )
}

fn clustered(root: &Path) -> Line {
    let sc = Scenario::new(root, ScenarioKind::ClusteredPositives, 2000, 20_000, |t| {
        t.hidden = 128;
        t.epochs = 60;
        t.negative_mode = NegativeMode::InBatch;
    });
    let r = sc.ablate(AblationKind::RandomNeg, &sc.cfg);
    let (ib, rk) = (&r.reference, &r.ablation);
    line(
        7,
        ib.overall_auc < ib.cosine_auc && rk.overall_auc > rk.cosine_auc,
        format!(
            "clustered positives: cosine {:.4}; in_batch CAL {:.4} (need < cosine), random_k CAL {:.4} (need > cosine)",
            ib.cosine_auc, ib.overall_auc, rk.overall_auc
        ),
    )
}

fn degree_confound(root: &Path) -> Line {
    let sc = Scenario::new(root, ScenarioKind::DegreeConfound, 600, 57_000, |t| {
        t.hidden = 64;
        t.epochs = 20;
        t.negative_mode = NegativeMode::RandomK { k: None };
    });
    let r = sc.ablate(AblationKind::Shuffled, &sc.cfg);
    let v = shuffled_verdict(&r.reference, &r.ablation, &sc.cfg.diagnostics).expect("verdict");
    let low = &r.degree_quantiles[0];
    let low_ok = matches!((low.reference_auc, low.shuffled_auc), (Some(a), Some(b)) if a > b);
    let shuffled_wins = r.ablation.overall_auc >= r.reference.overall_auc && v.verdict == Verdict::Fail;
    line(
        8,
        shuffled_wins && low_ok,
        format!(
            "degree confound ({} entities, {} pairs): shuffled {:.4} vs reference {:.4} (need >=), verdict {}; \
             lowest-degree bucket reference {} vs shuffled {} (need >)",
            sc.ds.set().len(),
            sc.ds.positives.len(),
            r.ablation.overall_auc,
            r.reference.overall_auc,
            v.verdict.as_str(),
            opt(low.reference_auc),
            opt(low.shuffled_auc)
        ),
    )
}

fn no_signal(root: &Path) -> Line {
    let sc = Scenario::new(root, ScenarioKind::NoSignal, 2000, 20_000, |t| {
        t.hidden = 64;
        t.epochs = 100;
    });
    let r = sc.ablate(AblationKind::EdgeSplit, &sc.cfg);
    let gap = r.ablation.delta_vs_cosine();
    line(
        9,
        gap < NO_SIGNAL_GAP_MAX,
        format!(
            "no signal (held-out edges): CAL {:.4} - cosine {:.4} = {gap:+.4} (need < {NO_SIGNAL_GAP_MAX}); \
             training pairs {:+.4}",
            r.ablation.overall_auc,
            r.ablation.cosine_auc,
            r.reference.delta_vs_cosine()
        ),
    )
}

fn node_split(latent: &Scenario) -> Line {
    let r = latent.ablate(AblationKind::NodeSplit, &latent.cfg);
    let gap = r.ablation.delta_vs_cosine();
    let unseen = r.ablation.subsets.iter().find(|s| s.name == "unseen_both");
    line(
        10,
        gap >= NODE_SPLIT_GAP_MIN,
        format!(
            "node split ({} held-out entities): test CAL {:.4} - cosine {:.4} = {gap:+.4} (need >= {NODE_SPLIT_GAP_MIN}); \
             both endpoints unseen {}",
            r.held_out_entities.unwrap_or(0),
            r.ablation.overall_auc,
            r.ablation.cosine_auc,
            unseen.map(|s| format!("{:.4} vs cosine {:.4}", s.cal_auc, s.cosine_auc)).unwrap_or_else(|| "n/a".into())
        ),
    )
}

fn sweep_consistency(latent: &Scenario, model: &CalModel<f32>, sets: &EvalSets, r: &EvalReport) -> Line {
    let scores = score_sets(Some(model), latent.ds.set(), sets).expect("scores");
    let at = |lambda: f64| r.lambda_sweep.iter().find(|row| row.lambda == lambda).expect("grid point").overall_auc;
    let d0 = (at(0.0) - r.cosine_auc).abs();
    let d1 = (at(1.0) - r.overall_auc).abs();
    let inf = cross_boundary_eval(&scores.positives, &scores.negatives, &[f64::INFINITY]).expect("cb");
    let exact = inf[0].cal_auc == Some(r.overall_auc) && inf[0].pos_count == r.n_pos && inf[0].neg_count == r.n_neg;
    line(
        11,
        d0 <= AUC_EXACT_TOL && d1 <= AUC_EXACT_TOL && exact,
        format!(
            "sweep endpoints: |lambda 0 - cosine| {d0:.1e}, |lambda 1 - CAL| {d1:.1e} (tol {AUC_EXACT_TOL:e}); \
             CB at infinity equals overall exactly {exact}"
        ),
    )
}
