//! Plain-text tables for standard output.

use std::fmt::Write;

use cal_core::diagnostics::DiagnosticReport;
use cal_core::eval::{EvalReport, QuantileComparisonRow};
use cal_core::multi_seed::MultiSeedSummary;

use crate::pipeline::IngestSummary;

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn ingest_table(s: &IngestSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "entities             {}", s.n_entities);
    let _ = writeln!(out, "dimensions           {}", s.dim);
    if let Some(v) = s.variance_explained {
        let _ = writeln!(out, "variance explained   {v:.4}");
    }
    let _ = writeln!(out, "mapping coverage     {:.4} ({} unmapped)", s.mapping_coverage, s.n_unmapped);
    let f = &s.filter;
    let _ = writeln!(
        out,
        "records              {} (below threshold {}, unmapped {}, self {}, duplicate {})",
        f.records, f.below_threshold, f.unmapped, f.self_loops, f.duplicates
    );
    let st = &s.stats;
    let _ = writeln!(out, "positive pairs       {}", st.n_pairs);
    let _ = writeln!(out, "cross-boundary frac  {:.4}", st.cross_boundary_fraction);
    let _ = writeln!(out, "mean pos. cosine     {:.4}", st.mean_positive_cosine);
    let _ = writeln!(out, "frac cosine > 0.5    {:.4}", st.fraction_cosine_above_half);
    out
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pairs                {} positive / {} negative", r.n_pos, r.n_neg);
    let _ = writeln!(
        out,
        "overall AUC          {:.4}  [{:.4}, {:.4}]",
        r.overall_auc, r.auc_ci.0, r.auc_ci.1
    );
    let _ = writeln!(out, "cosine AUC           {:.4}", r.cosine_auc);
    let _ = writeln!(out, "both-transformed AUC {:.4}", r.both_transformed_auc);
    let _ = writeln!(
        out,
        "CB AUC (|cos|<{})   {}  (cosine {}, {} pos / {} neg)",
        r.cb_threshold,
        opt(r.cb_auc),
        opt(r.cb_cosine_auc),
        r.cb_pos,
        r.cb_neg
    );
    for s in &r.subsets {
        let _ = writeln!(
            out,
            "{:<20} {:.4}  (cosine {:.4}, {} pos / {} neg)",
            s.name, s.cal_auc, s.cosine_auc, s.n_pos, s.n_neg
        );
    }
    let _ = writeln!(out, "\n threshold    pos    neg  cosine     CAL");
    for row in &r.cb_sweep {
        let _ = writeln!(
            out,
            " {:>9.2} {:>6} {:>6}  {:>6}  {:>6}",
            row.threshold,
            row.pos_count,
            row.neg_count,
            opt(row.cosine_auc),
            opt(row.cal_auc)
        );
    }
    let _ = writeln!(out, "\n lambda  overall       CB");
    for row in &r.lambda_sweep {
        let _ = writeln!(out, " {:>6.1}  {:.4}  {:>7}", row.lambda, row.overall_auc, opt(row.cb_auc));
    }
    if let Some(d) = &r.degree {
        let _ = writeln!(
            out,
            "\ndegree Spearman      {} (mean endpoint), {} (max endpoint)",
            opt(d.spearman),
            opt(d.spearman_max)
        );
        if !d.quintiles.is_empty() {
            let _ = writeln!(out, " quintile  degree range        n  cosine   assoc   delta");
            for q in &d.quintiles {
                let _ = writeln!(
                    out,
                    " {:>8}  {:>7.1}-{:<7.1} {:>6}  {:>6.3}  {:>6.3}  {:>+6.3}",
                    q.quintile, q.degree_lo, q.degree_hi, q.n, q.mean_cosine, q.mean_association, q.delta
                );
            }
        }
    }
    out
}

pub fn comparison_table(labels: (&str, &str), reference: &EvalReport, ablation: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "                 {:>11}  {:>11}     delta", labels.0, labels.1);
    let row = |out: &mut String, label: &str, a: Option<f64>, b: Option<f64>| {
        let d = a.zip(b).map(|(a, b)| b - a);
        let _ = writeln!(out, "{label:<16} {:>11}  {:>11}  {:>8}", opt(a), opt(b), opt(d));
    };
    row(&mut out, "overall AUC", Some(reference.overall_auc), Some(ablation.overall_auc));
    row(&mut out, "cosine AUC", Some(reference.cosine_auc), Some(ablation.cosine_auc));
    row(&mut out, "CB AUC", reference.cb_auc, ablation.cb_auc);
    row(
        &mut out,
        "vs cosine",
        Some(reference.delta_vs_cosine()),
        Some(ablation.delta_vs_cosine()),
    );
    out
}

pub fn quantile_table(rows: &[QuantileComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, " bucket  degree range       pos    neg  reference  shuffled    delta");
    for r in rows {
        let _ = writeln!(
            out,
            " {:>6}  {:>7.1}-{:<7.1} {:>6} {:>6}  {:>9}  {:>8}  {:>7}",
            r.bucket,
            r.degree_lo,
            r.degree_hi,
            r.n_pos,
            r.n_neg,
            opt(r.reference_auc),
            opt(r.shuffled_auc),
            opt(r.delta)
        );
    }
    out
}

pub fn diagnostics_table(r: &DiagnosticReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cosine baseline AUC      {:.4}", r.cosine_baseline_auc);
    let _ = writeln!(out, "positives with cos > 0.5 {:.4}", r.positive_cosine_frac_above_half);
    let _ = writeln!(out, "pairs per entity         {:.1}", r.entity_to_pair_ratio);
    if let Some(d) = r.shuffled_delta {
        let _ = writeln!(out, "reference - shuffled     {d:+.4}");
    }
    let _ = writeln!(out);
    for (name, check) in &r.verdicts {
        let _ = writeln!(out, "[{:<4}] {name:<26} {}", check.verdict.as_str(), check.explanation);
    }
    out
}

pub fn multi_seed_table(s: &MultiSeedSummary) -> String {
    let mut out = String::new();
    for r in &s.runs {
        match &r.error {
            None => {
                let _ = writeln!(out, "seed {:>6}  overall {}  CB {}", r.seed, opt(r.overall_auc), opt(r.cb_auc));
            }
            Some(e) => {
                let _ = writeln!(out, "seed {:>6}  failed: {e}", r.seed);
            }
        }
    }
    let fmt = |m: Option<cal_core::multi_seed::MeanSd>| {
        m.map(|m| format!("{:.4} ± {:.4} (n={})", m.mean, m.sd, m.n)).unwrap_or_else(|| "n/a".into())
    };
    let _ = writeln!(out, "overall AUC  {}", fmt(s.overall_auc));
    let _ = writeln!(out, "CB AUC       {}", fmt(s.cb_auc));
    out
}
