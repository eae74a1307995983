use std::fs;
use std::path::Path;

use cal::error::CliError;
use cal::formats::*;
use cal_core::pca::fit_pca;
use cal_core::trainer::{init_for, TrainConfig};
use cal_core::types::{EmbeddingSet, PairSet, Role};
use cal_core::{Matrix, SeededRng};
use proptest::prelude::*;

fn model(hidden: usize, seed: u64) -> cal_core::CalModel<f32> {
    let cfg = TrainConfig {
        hidden,
        seed,
        ..Default::default()
    };
    init_for(&cfg, 6).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = SeededRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("E{i}")).collect()
}

#[test]
fn checkpoint_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let m = model(12, 3);
    write_checkpoint(&p, &m).unwrap();
    let size = fs::metadata(&p).unwrap().len() as usize;
    assert_eq!(size, 4 * m.parameter_count() + 85);
    let back = read_checkpoint(&p).unwrap();
    assert_eq!(back, m);
    // Writing the reloaded model gives the same bytes.
    let p2 = dir.path().join("m2.ckpt");
    write_checkpoint(&p2, &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn damaged_checkpoints_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    write_checkpoint(&p, &model(8, 1)).unwrap();
    let good = fs::read(&p).unwrap();
    let check = |bytes: &[u8], what: &str| {
        let q = dir.path().join("bad.ckpt");
        fs::write(&q, bytes).unwrap();
        match read_checkpoint(&q) {
            Err(CliError::Format { .. }) => {}
            other => panic!("{what}: expected a format error, got {other:?}"),
        }
    };
    let mut bad = good.clone();
    bad[0] = b'X';
    check(&bad, "magic");
    let mut bad = good.clone();
    bad[9] = 2;
    check(&bad, "version");
    check(&good[..good.len() - 3], "truncated");
    let mut bad = good.clone();
    bad.push(0);
    check(&bad, "trailing");
}

#[test]
fn embedding_bin_round_trips_with_projection() {
    let dir = tempfile::tempdir().unwrap();
    let raw = random_matrix(20, 8, 5);
    let pca = fit_pca(&raw, 3).unwrap();
    let projected = pca.project_all(&raw).unwrap().cast::<f32>();
    let set = EmbeddingSet::from_raw(ids(20), projected).unwrap().with_projection(pca);
    let p = dir.path().join("e.calemb");
    write_embedding_bin(&p, &set).unwrap();
    assert!(is_embedding_bin(&p).unwrap());
    let back = read_embedding_bin(&p).unwrap();
    assert_eq!(back.ids(), set.ids());
    assert_eq!(back.vectors(), set.vectors());
    assert_eq!(back.projection(), set.projection());

    let plain = EmbeddingSet::from_raw(ids(4), random_matrix(4, 3, 6)).unwrap();
    write_embedding_bin(&p, &plain).unwrap();
    let back = read_embedding_bin(&p).unwrap();
    assert!(back.projection().is_none());
    assert_eq!(back.vectors(), plain.vectors());
}

#[test]
fn distance_matrix_is_symmetric_with_zero_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmbeddingSet::from_raw(ids(7), random_matrix(7, 5, 8)).unwrap();
    let v = set.vectors();
    let p = dir.path().join("d.caldst");
    write_distance_bin(&p, v).unwrap();
    assert_eq!(fs::metadata(&p).unwrap().len(), 8 + 4 + 4 * 21);
    let d = read_distance_bin(&p).unwrap();
    for i in 0..7 {
        assert_eq!(d.get(i, i), 0.0);
        for j in 0..7 {
            assert_eq!(d.get(i, j), d.get(j, i));
            if i != j {
                let want = 1.0 - set.cosine(i, j);
                assert!((d.get(i, j) as f64 - want).abs() < 1e-6);
            }
        }
    }

    let t = dir.path().join("d.tsv");
    write_distance_tsv(&t, set.ids(), v).unwrap();
    let text = fs::read_to_string(&t).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0][1..], set.ids().iter().map(|s| s.as_str()).collect::<Vec<_>>()[..]);
    for i in 0..7 {
        for j in 0..7 {
            let x: f32 = rows[i + 1][j + 1].parse().unwrap();
            assert_eq!(x, d.get(i, j));
        }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn embedding_tsv_errors_name_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "e.tsv", "a\t1\t2\n\nb\t3\n");
    match read_embedding_tsv(&p, false) {
        Err(CliError::Parse { line: 3, .. }) => {}
        other => panic!("ragged row: {other:?}"),
    }
    let p = write(dir.path(), "e.tsv", "a\t1\t2\nb\t3\tx\n");
    match read_embedding_tsv(&p, false) {
        Err(CliError::Data { line: 2, column: 3, .. }) => {}
        other => panic!("bad value: {other:?}"),
    }
    let p = write(dir.path(), "e.tsv", "a\t1\tNaN\n");
    assert!(matches!(read_embedding_tsv(&p, false), Err(CliError::Data { line: 1, column: 3, .. })));
    let p = write(dir.path(), "e.tsv", "id\td1\td2\na\t1\t2\n");
    let raw = read_embedding_tsv(&p, true).unwrap();
    assert_eq!(raw.ids, vec!["a"]);
    assert_eq!(raw.matrix.row(0), &[1.0, 2.0]);
}

#[test]
fn association_table_filters_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let text = "protein1 protein2 experimental combined_score\nA B 100 950\nA C 0 400\nB Z 10 990\n\nC A 5 901\n";
    let p = write(dir.path(), "a.txt", text);
    let resolve = |id: &str| ["A", "B", "C"].iter().position(|x| *x == id);
    let t = read_associations(&p, "combined_score", 900, &resolve).unwrap();
    assert_eq!(t.channels, vec!["experimental", "combined_score"]);
    assert_eq!(t.total_records, 4);
    assert_eq!(t.below_threshold, 1);
    assert_eq!(t.records.len(), 3);
    assert_eq!(t.records[1].b, None);
    assert_eq!(t.records[2].scores, vec![5, 901]);

    let p = write(dir.path(), "a.txt", "p1 p2 combined_score\nA B 1001\n");
    assert!(matches!(
        read_associations(&p, "combined_score", 0, &resolve),
        Err(CliError::Data { line: 2, column: 3, .. })
    ));
    let p = write(dir.path(), "a.txt", "p1 p2 combined_score\nA B\n");
    assert!(matches!(read_associations(&p, "combined_score", 0, &resolve), Err(CliError::Parse { line: 2, .. })));
    let p = write(dir.path(), "a.txt", "p1 p2 combined_score\n");
    assert!(read_associations(&p, "textmining", 0, &resolve).is_err());
}

#[test]
fn pairs_round_trip_and_reject_mixed_roles() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmbeddingSet::from_raw(ids(5), random_matrix(5, 3, 2)).unwrap();
    let pairs = PairSet::new(vec![(0, 1), (2, 4), (3, 1)], Role::TrainPositive, 5).unwrap();
    let p = dir.path().join("p.tsv");
    write_pairs(&p, &pairs, &set).unwrap();
    assert_eq!(read_pairs(&p, &set).unwrap(), pairs);
    let q = write(dir.path(), "q.tsv", "E0\tE1\ttrain_positive\nE2\tE3\teval_negative\n");
    assert!(matches!(read_pairs(&q, &set), Err(CliError::Parse { line: 2, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vectors_tsv_round_trips(rows in 1usize..12, cols in 1usize..9, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let m = random_matrix(rows, cols, seed);
        let p = dir.path().join("v.tsv");
        write_vectors_tsv(&p, &ids(rows), &m).unwrap();
        let back = read_embedding_tsv(&p, false).unwrap();
        prop_assert_eq!(back.ids, ids(rows));
        prop_assert_eq!(back.matrix, m);
    }
}
