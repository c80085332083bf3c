use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::encoder::{init_params, EncoderConfig};
use crate::graph::{validate_tree, Comment};
use crate::synth::{generate_corpus, SynthConfig};

fn row(id: &str, community: &str, group: &str, e: Vec<f64>) -> EmbeddingRow {
    EmbeddingRow {
        discussion_id: id.into(),
        community_id: community.into(),
        group_id: group.into(),
        embedding: e,
    }
}

fn random_set(n: usize, d: usize, labels: usize, seed: u64) -> EmbeddingSet {
    let mut rng = RngStream::new(seed, 0);
    let rows = (0..n)
        .map(|i| {
            let g = i % labels;
            row(
                &format!("r{i:03}"),
                &format!("c{}", i % (2 * labels)),
                &format!("g{g}"),
                (0..d).map(|_| rng.normal()).collect(),
            )
        })
        .collect();
    EmbeddingSet::new(rows).unwrap()
}

fn clustered_set(per: usize, d: usize, spread: f64, seed: u64) -> EmbeddingSet {
    let mut rng = RngStream::new(seed, 1);
    let mut rows = Vec::new();
    for (g, centre) in [(0usize, 10.0), (1, -10.0)] {
        for i in 0..per {
            let mut e: Vec<f64> = (0..d).map(|_| spread * rng.normal()).collect();
            e[g] += centre;
            rows.push(row(&format!("g{g}-{i}"), &format!("c{g}"), &format!("g{g}"), e));
        }
    }
    EmbeddingSet::new(rows).unwrap()
}

#[test]
fn set_validation() {
    let ok = row("a", "c", "g", vec![1.0, 2.0]);
    assert!(matches!(
        EmbeddingSet::new(vec![ok.clone(), ok.clone()]),
        Err(AnalysisError::DuplicateId(_))
    ));
    assert!(matches!(
        EmbeddingSet::new(vec![ok.clone(), row("b", "c", "g", vec![1.0])]),
        Err(AnalysisError::Dimension { .. })
    ));
    assert!(matches!(
        EmbeddingSet::new(vec![row("b", "c", "g", vec![f64::NAN, 0.0])]),
        Err(AnalysisError::NonFinite(_))
    ));
}

#[test]
fn embed_corpus_rules() {
    let config = EncoderConfig::tiny(4);
    let params = init_params::<f64>(&config, &mut RngStream::new(0, 0)).unwrap();
    let comments = |seed| {
        let mut rng = RngStream::new(seed, 0);
        vec![
            Comment::new("a", None, (0..4).map(|_| rng.normal()).collect()),
            Comment::new("b", Some("a"), (0..4).map(|_| rng.normal()).collect()),
            Comment::new("c", Some("a"), (0..4).map(|_| rng.normal()).collect()),
        ]
    };
    let single = validate_tree("solo", "c1", comments(1)[..1].to_vec(), Some(4)).unwrap();
    let t1 = validate_tree("x", "c1", comments(2), Some(4)).unwrap();
    let t2 = validate_tree("y", "c2", comments(2), Some(4)).unwrap();
    let grouping: crate::graph::CommunityGrouping = [("c1", "g1"), ("c2", "g2")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let corpus = Corpus::new(vec![single.clone(), t1.clone(), t2], grouping, 4).unwrap();
    let set = embed_corpus(&params, &config, &corpus).unwrap();
    let h = encode_values(&TreeView::full(&single), &params.store, &config).unwrap();
    assert_eq!(set.rows()[0].embedding, h.row(0));
    assert_eq!(set.rows()[1].embedding, set.rows()[2].embedding);
    assert_eq!(set.rows()[2].group_id, "g2");
    let h1 = encode_values(&TreeView::full(&t1), &params.store, &config).unwrap();
    let manual: Vec<f64> = (0..config.d_model)
        .map(|j| (h1.get(1, j) + h1.get(2, j)) / 2.0)
        .collect();
    for (a, b) in set.rows()[1].embedding.iter().zip(&manual) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(embed_corpus(&params, &config, &corpus).unwrap(), set);
}

#[test]
fn pca_line_and_mirror() {
    let rows: Vec<EmbeddingRow> = (0..6)
        .map(|i| {
            row(
                &format!("p{i}"),
                "c",
                "g",
                vec![1.0 + i as f64, 2.0 - 2.0 * i as f64, 0.5],
            )
        })
        .collect();
    let set = EmbeddingSet::new(rows).unwrap();
    let p = pca_2d(&set).unwrap();
    assert!((p.explained[0] - 1.0).abs() < 1e-12);
    assert!(p.rows.iter().all(|r| r.y.abs() < 1e-9));
    assert!(p.components[0].iter().map(|x| x.abs()).fold(0.0, f64::max) > 0.0);
    let top = p.components[0]
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    assert!(top > 0.0);

    let set = random_set(30, 5, 2, 4);
    let p = pca_2d(&set).unwrap();
    let mean: Vec<f64> = (0..5)
        .map(|j| set.rows().iter().map(|r| r.embedding[j]).sum::<f64>() / 30.0)
        .collect();
    let mirrored = set
        .map_embeddings(|e| e.iter().zip(&mean).map(|(x, m)| 2.0 * m - x).collect())
        .unwrap();
    let q = pca_2d(&mirrored).unwrap();
    for (a, b) in p.rows.iter().zip(&q.rows) {
        assert!((a.x + b.x).abs() < 1e-9 && (a.y + b.y).abs() < 1e-9);
    }
}

#[test]
fn pca_degenerate_cases() {
    let two = EmbeddingSet::new(vec![row("a", "c", "g", vec![1.0]), row("b", "c", "g", vec![2.0])]).unwrap();
    assert!(matches!(
        pca_2d(&two),
        Err(AnalysisError::TooFewRows { needed: 3, found: 2 })
    ));
    let same: Vec<EmbeddingRow> = (0..4)
        .map(|i| row(&format!("s{i}"), "c", "g", vec![0.3, -0.7, 0.1]))
        .collect();
    let p = pca_2d(&EmbeddingSet::new(same).unwrap()).unwrap();
    assert!(p.zero_variance);
    assert!(p.rows.iter().all(|r| r.x == 0.0 && r.y == 0.0));
    let one_d: Vec<EmbeddingRow> = (0..4)
        .map(|i| row(&format!("s{i}"), "c", "g", vec![i as f64]))
        .collect();
    let p = pca_2d(&EmbeddingSet::new(one_d).unwrap()).unwrap();
    assert_eq!(p.explained, [1.0, 0.0]);
}

#[test]
fn pca_matches_best_rank_two_oracle() {
    let set = random_set(50, 16, 2, 9);
    let p = pca_2d(&set).unwrap();
    let n = 50;
    let d = 16;
    let x = nalgebra::DMatrix::from_fn(n, d, |i, j| set.rows()[i].embedding[j]);
    let mean = x.row_mean();
    let xc = nalgebra::DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = xc.transpose() * &xc / (n as f64 - 1.0);
    let eig = cov.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = nalgebra::DMatrix::from_fn(d, 2, |i, k| eig.eigenvectors[(i, order[k])]);
    let oracle_err = (&xc - &xc * &basis * basis.transpose()).norm_squared();

    let ours = nalgebra::DMatrix::from_fn(d, 2, |i, k| p.components[k][i]);
    let scores = nalgebra::DMatrix::from_fn(n, 2, |i, k| if k == 0 { p.rows[i].x } else { p.rows[i].y });
    let err = (&xc - scores * ours.transpose()).norm_squared();
    assert!((err - oracle_err).abs() < 1e-8, "{err} vs {oracle_err}");
    let total = cov.trace();
    assert!((p.explained[0] - eig.eigenvalues[order[0]] / total).abs() < 1e-10);
    assert!((p.explained[1] - eig.eigenvalues[order[1]] / total).abs() < 1e-10);
}

#[test]
fn pca_row_order_invariant() {
    let set = random_set(20, 6, 3, 5);
    let mut perm: Vec<usize> = (0..20).collect();
    RngStream::new(1, 0).shuffle(&mut perm);
    let p = pca_2d(&set).unwrap();
    let q = pca_2d(&set.select(&perm)).unwrap();
    let by_id: BTreeMap<&str, (f64, f64)> = q.rows.iter().map(|r| (r.discussion_id.as_str(), (r.x, r.y))).collect();
    for r in &p.rows {
        let (x, y) = by_id[r.discussion_id.as_str()];
        assert!((r.x - x).abs() < 1e-9 && (r.y - y).abs() < 1e-9);
    }
}

#[test]
fn knn_separated_and_chance() {
    let set = clustered_set(20, 4, 0.1, 0);
    assert_eq!(
        knn_probe(&set, LabelField::Group, 5, 4, &mut RngStream::new(0, 0)).unwrap(),
        1.0
    );
    let mut rng = RngStream::new(6, 0);
    let labels = ["a", "b", "c", "d"];
    let rows = (0..100)
        .map(|i| {
            let e: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            row(&format!("r{i}"), "c", labels[i % 4], e)
        })
        .collect();
    let noise = EmbeddingSet::new(rows).unwrap();
    let acc = knn_probe(&noise, LabelField::Group, 5, 4, &mut RngStream::new(1, 0)).unwrap();
    assert!((acc - 0.25).abs() <= 0.1, "{acc}");
}

#[test]
fn knn_argument_checks() {
    let set = clustered_set(3, 2, 0.1, 0);
    let mut rng = RngStream::new(0, 0);
    assert!(matches!(
        knn_probe(&set, LabelField::Group, 2, 2, &mut rng),
        Err(AnalysisError::BadK(2))
    ));
    assert!(matches!(
        knn_probe(&set, LabelField::Group, 1, 1, &mut rng),
        Err(AnalysisError::BadFolds(1))
    ));
    assert!(matches!(
        knn_probe(&set, LabelField::Group, 1, 4, &mut rng),
        Err(AnalysisError::LabelRarity { .. })
    ));
    assert!(matches!(
        knn_probe(&set, LabelField::Group, 5, 3, &mut rng),
        Err(AnalysisError::KTooLarge { .. })
    ));
}

/// Independent k-NN: full distance table, explicit top-k, then label tallies.
fn knn_oracle(set: &EmbeddingSet, k: usize, folds: usize, seed: u64) -> f64 {
    let rows = set.rows();
    let n = rows.len();
    let mut labels: Vec<&str> = rows.iter().map(|r| r.group_id.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut rng = RngStream::new(seed, 0);
    let mut fold = vec![usize::MAX; n];
    for l in &labels {
        let mut m: Vec<usize> = (0..n).filter(|&i| rows[i].group_id == *l).collect();
        rng.shuffle(&mut m);
        for (p, i) in m.into_iter().enumerate() {
            fold[i] = p % folds;
        }
    }
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut acc = 0.0;
    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let mut correct = 0;
        for &i in &test {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| fold[j] != f)
                .map(|j| (1.0 - cos(&rows[i].embedding, &rows[j].embedding), j))
                .collect();
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let top = &cand[..k];
            let mut best = ("", 0usize, f64::INFINITY);
            for l in &labels {
                let hits: Vec<f64> = top
                    .iter()
                    .filter(|(_, j)| rows[*j].group_id == *l)
                    .map(|(d, _)| *d)
                    .collect();
                let (c, s) = (hits.len(), hits.iter().sum::<f64>());
                if c > best.1 || (c == best.1 && c > 0 && s < best.2) {
                    best = (l, c, s);
                }
            }
            if best.0 == rows[i].group_id {
                correct += 1;
            }
        }
        acc += correct as f64 / test.len() as f64;
    }
    acc / folds as f64
}

#[test]
fn knn_matches_exhaustive_oracle() {
    for seed in 0..5 {
        let set = random_set(36, 3, 3, 20 + seed);
        for k in [1, 3, 5] {
            let got = knn_probe(&set, LabelField::Group, k, 3, &mut RngStream::new(seed, 0)).unwrap();
            assert_eq!(got, knn_oracle(&set, k, 3, seed));
        }
    }
}

#[test]
fn knn_tie_breaks_by_distance_then_label() {
    use super::metrics::knn_predict;
    let q = [1.0, 0.0];
    // one vote each: the nearest wins
    let near = [("c", &[0.9, 0.1][..]), ("a", &[0.0, 1.0][..]), ("b", &[-1.0, 0.0][..])];
    assert_eq!(knn_predict(&q, &near, 3), "c");
    // equal votes and equal summed distance: smaller label wins
    let even = [("b", &[0.0, 1.0][..]), ("a", &[0.0, -1.0][..]), ("c", &[-1.0, 0.0][..])];
    assert_eq!(knn_predict(&q, &even, 3), "a");
    // a majority beats a closer single neighbour
    let majority = [("z", &[1.0, 0.0][..]), ("y", &[0.5, 0.5][..]), ("y", &[0.4, 0.6][..])];
    assert_eq!(knn_predict(&q, &majority, 3), "y");
}

#[test]
fn silhouette_limits_and_errors() {
    let rows: Vec<EmbeddingRow> = (0..6)
        .map(|i| {
            let g = i % 2;
            row(&format!("r{i}"), "c", &format!("g{g}"), vec![100.0 * g as f64, 0.0])
        })
        .collect();
    assert_eq!(
        silhouette(&EmbeddingSet::new(rows).unwrap(), LabelField::Group).unwrap(),
        1.0
    );
    let flat: Vec<EmbeddingRow> = (0..6)
        .map(|i| row(&format!("r{i}"), "c", &format!("g{}", i % 2), vec![1.0, 1.0]))
        .collect();
    assert_eq!(
        silhouette(&EmbeddingSet::new(flat).unwrap(), LabelField::Group).unwrap(),
        0.0
    );
    let single = EmbeddingSet::new(vec![
        row("a", "c", "g1", vec![0.0]),
        row("b", "c", "g1", vec![1.0]),
        row("c", "c", "g2", vec![2.0]),
    ])
    .unwrap();
    assert!(matches!(
        silhouette(&single, LabelField::Group),
        Err(AnalysisError::LabelRarity { .. })
    ));
    let one = EmbeddingSet::new(vec![row("a", "c", "g", vec![0.0]), row("b", "c", "g", vec![1.0])]).unwrap();
    assert!(matches!(
        silhouette(&one, LabelField::Group),
        Err(AnalysisError::TooFewLabels(1))
    ));
}

#[test]
fn silhouette_matches_double_loop() {
    let set = random_set(20, 4, 3, 8);
    let rows = set.rows();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..20 {
        let mut a_sum = 0.0;
        let mut a_n = 0;
        let mut others: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for j in 0..20 {
            if i == j {
                continue;
            }
            let d = dist(&rows[i].embedding, &rows[j].embedding);
            if rows[j].group_id == rows[i].group_id {
                a_sum += d;
                a_n += 1;
            } else {
                let e = others.entry(rows[j].group_id.as_str()).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
        }
        let a = a_sum / a_n as f64;
        let b = others
            .values()
            .map(|(s, n)| s / *n as f64)
            .fold(f64::INFINITY, f64::min);
        total += if a.max(b) == 0.0 { 0.0 } else { (b - a) / a.max(b) };
    }
    let got = silhouette(&set, LabelField::Group).unwrap();
    assert!((got - total / 20.0).abs() < 1e-12);
}

fn orthogonal(d: usize, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = RngStream::new(seed, 3);
    let m = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.normal());
    m.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn rotation_invariance(seed in 0u64..1000) {
        let d = 5;
        let set = clustered_set(12, d, 4.0, seed);
        let q = orthogonal(d, seed);
        let rotated = set
            .map_embeddings(|e| (q.clone() * nalgebra::DVector::from_column_slice(e)).iter().copied().collect())
            .unwrap();
        let k1 = knn_probe(&set, LabelField::Group, 3, 3, &mut RngStream::new(seed, 0)).unwrap();
        let k2 = knn_probe(&rotated, LabelField::Group, 3, 3, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(k1, k2);
        let s1 = silhouette(&set, LabelField::Group).unwrap();
        let s2 = silhouette(&rotated, LabelField::Group).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-10);
    }

    #[test]
    fn polarization_translation_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let set = random_set(18, 4, 3, seed);
        let v: Vec<f64> = (0..4).map(|i| shift * (i as f64 + 1.0).cos()).collect();
        let moved = set.map_embeddings(|e| e.iter().zip(&v).map(|(x, s)| x + s).collect()).unwrap();
        let a = polarization_metrics(&set, LabelField::Group).unwrap();
        let b = polarization_metrics(&moved, LabelField::Group).unwrap();
        for (x, y) in a.labels.iter().zip(&b.labels) {
            prop_assert!((x.within_variance - y.within_variance).abs() < 1e-12 * (1.0 + shift * shift));
        }
        for (x, y) in a.distances.iter().zip(&b.distances) {
            prop_assert!((x.2 - y.2).abs() < 1e-12 * (1.0 + shift.abs()));
        }
    }
}

#[test]
fn polarization_matches_direct_formula() {
    let set = random_set(15, 3, 3, 2);
    let p = polarization_metrics(&set, LabelField::Group).unwrap();
    assert_eq!(p.labels.len(), 3);
    assert_eq!(p.distances.len(), 3);
    for stats in &p.labels {
        let members: Vec<&Vec<f64>> = set
            .rows()
            .iter()
            .filter(|r| r.group_id == stats.label)
            .map(|r| &r.embedding)
            .collect();
        let m = members.len() as f64;
        let c: Vec<f64> = (0..3).map(|j| members.iter().map(|e| e[j]).sum::<f64>() / m).collect();
        let var = members
            .iter()
            .map(|e| (0..3).map(|j| (e[j] - c[j]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / m;
        assert!((stats.within_variance - var).abs() < 1e-12);
        for j in 0..3 {
            assert!((stats.centroid[j] - c[j]).abs() < 1e-12);
        }
    }
    let singles = EmbeddingSet::new(vec![
        row("a", "c", "x", vec![1.0, 2.0]),
        row("b", "c", "y", vec![4.0, 6.0]),
    ])
    .unwrap();
    let p = polarization_metrics(&singles, LabelField::Group).unwrap();
    assert!(p.labels.iter().all(|l| l.within_variance == 0.0));
    assert_eq!(p.distances, vec![("x".into(), "y".into(), 5.0)]);
}

#[test]
fn prototypes_rank_by_cosine() {
    let set = random_set(25, 4, 2, 3);
    let q = set.rows()[7].embedding.clone();
    let top = nearest_prototypes(&q, &set, 3).unwrap();
    assert_eq!(top[0].0, set.rows()[7].discussion_id);
    assert!((top[0].1 - 1.0).abs() < 1e-12);
    let all = nearest_prototypes(&q, &set, 25).unwrap();
    assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));

    let mut rng = RngStream::new(0, 9);
    for _ in 0..50 {
        let query: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let got = nearest_prototypes(&query, &set, 5).unwrap();
        let mut scan: Vec<(String, f64)> = set
            .rows()
            .iter()
            .map(|r| (r.discussion_id.clone(), crate::numerics::cosine(&query, &r.embedding)))
            .collect();
        scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        assert_eq!(got, scan[..5].to_vec());
        let scaled: Vec<f64> = query.iter().map(|x| 3.5 * x).collect();
        let ids = |v: Vec<(String, f64)>| v.into_iter().map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(ids(nearest_prototypes(&scaled, &set, 5).unwrap()), ids(got));
    }
    let tie = EmbeddingSet::new(vec![
        row("b", "c", "g", vec![1.0, 0.0]),
        row("a", "c", "g", vec![2.0, 0.0]),
    ])
    .unwrap();
    let ranked = nearest_prototypes(&[1.0, 0.0], &tie, 2).unwrap();
    assert_eq!(ranked[0].0, "a");
    assert!(matches!(
        nearest_prototypes(&[1.0, 0.0], &tie, 3),
        Err(AnalysisError::KTooLarge { .. })
    ));
    assert!(matches!(
        nearest_prototypes(&[1.0], &tie, 1),
        Err(AnalysisError::QueryDimension { .. })
    ));
}

#[test]
fn csv_round_trip_and_report() {
    let set = random_set(12, 3, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    write_embeddings_csv(&set, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("discussion_id,community_id,group_id,e0,e1,e2\n"));
    let back = read_embeddings_csv(&path).unwrap();
    for (a, b) in set.rows().iter().zip(back.rows()) {
        assert_eq!(a.discussion_id, b.discussion_id);
        let bits = |e: &[f64]| e.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.embedding), bits(&b.embedding));
    }
    std::fs::write(&path, "id,x\n1,2\n").unwrap();
    assert!(matches!(read_embeddings_csv(&path), Err(AnalysisError::Csv(_))));

    let (proj, report) = analyze(
        &set,
        &AnalysisConfig {
            k: 3,
            folds: 2,
            seed: 0,
        },
    )
    .unwrap();
    let ppath = dir.path().join("proj.csv");
    write_projection_csv(&proj, &ppath).unwrap();
    let ptext = std::fs::read_to_string(&ppath).unwrap();
    assert!(ptext.starts_with("discussion_id,x,y,group_id\n"));
    assert_eq!(ptext.lines().count(), 13);
    assert!(report.group.knn_accuracy.value().is_some());
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(json["group"]["silhouette"].is_number());
}

#[test]
fn split_is_stratified() {
    let corpus = generate_corpus(&SynthConfig::tiny(1, 8)).unwrap();
    let (train, held) = stratified_split(&corpus, 0.25, &mut RngStream::new(0, 0));
    assert_eq!(train.len() + held.len(), corpus.len());
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in &held {
        *per.entry(corpus.trees[i].community_id.as_str()).or_default() += 1;
    }
    assert!(per.values().all(|&c| c == 2));
    assert_eq!(per.len(), 4);
}
