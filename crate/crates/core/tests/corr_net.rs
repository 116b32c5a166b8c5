mod common;

use common::*;
use freetree::corr_net::{
    adjacency, detect_modules, pick_soft_threshold, similarity_from_columns, similarity_matrix, tom, SymMatrix,
    TomMatrix, FALLBACK_BETA,
};
use freetree::error::Error;
use freetree::simulate::{gen_panel, Design, SimConfig};
use proptest::prelude::*;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("f{j}")).collect()
}

fn constant_tom(p: usize, w: f64) -> TomMatrix {
    let mut data = vec![w; p * p];
    for u in 0..p {
        data[u * p + u] = 1.0;
    }
    TomMatrix::from_matrix(SymMatrix::from_row_major(p, data).unwrap()).unwrap()
}

#[test]
fn duplicated_and_negated_columns_are_fully_similar() {
    let x = [0.3, -1.2, 2.0, 0.7, 1.1];
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let s = similarity_from_columns(&[&x, &x, &neg]).unwrap();
    assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
    assert!((s.get(0, 2) - 1.0).abs() < 1e-15);
    assert_eq!(s.get(2, 2), 1.0);
}

#[test]
fn similarity_matches_textbook_pearson() {
    let table = [
        [1.0, 4.0, -2.0],
        [2.5, 3.0, 0.5],
        [0.0, 7.0, 1.5],
        [3.0, -1.0, 2.0],
        [1.5, 2.0, -0.5],
    ];
    let cols: Vec<Vec<f64>> = (0..3).map(|j| table.iter().map(|r| r[j]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let s = similarity_from_columns(&refs).unwrap();
    for u in 0..3 {
        for v in 0..3 {
            let want = if u == v { 1.0 } else { pearson(&cols[u], &cols[v]).abs() };
            assert!((s.get(u, v) - want).abs() < 1e-12, "({u},{v})");
        }
    }
}

#[test]
fn constant_column_correlates_zero() {
    let s = similarity_from_columns(&[&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]]).unwrap();
    assert_eq!(s.get(0, 1), 0.0);
    assert_eq!(s.get(1, 1), 1.0);
}

#[test]
fn similarity_needs_two_rows() {
    let err = similarity_from_columns(&[&[1.0], &[2.0]]).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
}

#[test]
fn similarity_reads_dataset_columns() {
    let ds = numeric_panel(vec![0.0; 4], 2, vec![("a", vec![1.0, 2.0, 3.0, 5.0]), ("b", vec![2.0, 4.0, 6.0, 10.0])]);
    let s = similarity_matrix(&ds, &["a", "b"]).unwrap();
    assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
    assert!(matches!(similarity_matrix(&ds, &["a", "zz"]), Err(Error::Schema(_))));
}

#[test]
fn identity_similarity_falls_back() {
    let p = 6;
    let mut data = vec![0.0; p * p];
    for u in 0..p {
        data[u * p + u] = 1.0;
    }
    let s = SymMatrix::from_row_major(p, data).unwrap();
    let st = pick_soft_threshold(&s, &[1, 2, 4, 6, 8], 0.85).unwrap();
    assert!(st.fallback);
    assert_eq!(st.beta, FALLBACK_BETA);
    // Without the default power among the candidates, one of them is used.
    let st = pick_soft_threshold(&s, &[1, 2, 3, 4], 0.85).unwrap();
    assert!(st.fallback);
    assert!([1, 2, 3, 4].contains(&st.beta));
}

#[test]
fn single_candidate_is_forced() {
    let mut r = rng(3);
    let a = random_adjacency(10, &mut r);
    let s = SymMatrix::from_row_major(10, a.into_iter().flatten().collect()).unwrap();
    let st = pick_soft_threshold(&s, &[6], 0.85).unwrap();
    assert_eq!(st.beta, 6);
    assert_eq!(st.table.len(), 1);
}

#[test]
fn soft_threshold_rejects_bad_candidates() {
    let s = SymMatrix::from_row_major(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
    assert!(pick_soft_threshold(&s, &[], 0.85).is_err());
    assert!(pick_soft_threshold(&s, &[0, 2], 0.85).is_err());
}

#[test]
fn soft_threshold_is_stable_on_planted_design() {
    let mut betas = Vec::new();
    for seed in 1..=5 {
        let (ds, _) = gen_panel(&SimConfig::new(Design::Sim2, 300, seed)).unwrap();
        let s = similarity_matrix(&ds, &ds.roles().var_select).unwrap();
        let candidates: Vec<u32> = (1..=20).collect();
        betas.push(pick_soft_threshold(&s, &candidates, 0.85).unwrap().beta);
    }
    assert!(betas.windows(2).all(|w| w[0] == w[1]), "{betas:?}");
}

#[test]
fn adjacency_examples() {
    let s = SymMatrix::from_row_major(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
    assert_eq!(adjacency(&s, 2).unwrap().get(0, 1), 0.25);
    assert_eq!(adjacency(&s, 1).unwrap(), s);
    assert!(adjacency(&s, 0).is_err());

    let mut r = rng(8);
    let a = random_adjacency(6, &mut r);
    let s = SymMatrix::from_row_major(6, a.iter().flatten().copied().collect()).unwrap();
    let p7 = adjacency(&s, 7).unwrap();
    for u in 0..6 {
        for v in 0..6 {
            let want = if u == v { 1.0 } else { a[u][v].powi(7) };
            assert!((p7.get(u, v) - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn tom_hand_cases() {
    let full = tom(&SymMatrix::from_row_major(5, vec![1.0; 25]).unwrap()).unwrap();
    let mut empty = vec![0.0; 16];
    for u in 0..4 {
        empty[u * 4 + u] = 1.0;
    }
    let empty = tom(&SymMatrix::from_row_major(4, empty).unwrap()).unwrap();
    for u in 0..5 {
        for v in 0..5 {
            assert_eq!(full.get(u, v), 1.0);
        }
    }
    for u in 0..4 {
        for v in 0..4 {
            assert_eq!(empty.get(u, v), if u == v { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn tom_rejects_out_of_range_adjacency() {
    let s = SymMatrix::from_row_major(2, vec![1.0, 1.5, 1.5, 1.0]).unwrap();
    assert!(tom(&s).is_err());
}

#[test]
fn modules_all_connected_or_all_grey() {
    let one = detect_modules(&constant_tom(25, 1.0), &names(25), 20, 0.99).unwrap().0;
    assert_eq!(one.module_count, 2);
    assert!(one.labels.iter().all(|&l| l == 1));

    let none = detect_modules(&constant_tom(25, 0.0), &names(25), 20, 0.99).unwrap().0;
    assert_eq!(none.module_count, 1);
    assert!(none.labels.iter().all(|&l| l == 0));

    let small = detect_modules(&constant_tom(10, 1.0), &names(10), 20, 0.99).unwrap().0;
    assert!(small.labels.iter().all(|&l| l == 0));
}

#[test]
fn module_parameters_are_checked() {
    let w = constant_tom(4, 0.5);
    assert!(detect_modules(&w, &names(4), 1, 0.99).is_err());
    assert!(detect_modules(&w, &names(4), 2, 0.0).is_err());
    assert!(detect_modules(&w, &names(4), 2, 1.5).is_err());
    assert!(detect_modules(&w, &names(3), 2, 0.9).is_err());
}

#[test]
fn modules_are_numbered_by_decreasing_size() {
    // Blocks of sizes 3, 6 and 4, strongly connected inside, weakly across.
    let sizes = [3, 6, 4];
    let block: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
    let p = block.len();
    let mut data = vec![0.05; p * p];
    for u in 0..p {
        for v in 0..p {
            if block[u] == block[v] {
                data[u * p + v] = if u == v { 1.0 } else { 0.9 };
            }
        }
    }
    let w = TomMatrix::from_matrix(SymMatrix::from_row_major(p, data).unwrap()).unwrap();
    let m = detect_modules(&w, &names(p), 2, 0.5).unwrap().0;
    let want: Vec<usize> = block.iter().map(|&b| [3, 1, 2][b]).collect();
    assert_eq!(m.labels, want);
}

/// Block-structured overlap matrix with deterministic within-block noise.
fn block_tom(block: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let p = block.len();
    let mut data = vec![0.0; p * p];
    for u in 0..p {
        data[u * p + u] = 1.0;
        for v in u + 1..p {
            let base = if block[u] == block[v] && block[u] > 0 { 0.6 } else { 0.02 };
            let x = base + 0.3 * rng.random::<f64>();
            data[u * p + v] = x;
            data[v * p + u] = x;
        }
    }
    data
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tom_matches_brute_force(p in 3usize..=12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_adjacency(p, &mut r);
        let w = tom(&SymMatrix::from_row_major(p, a.iter().flatten().copied().collect()).unwrap()).unwrap();
        let oracle = tom_brute_force(&a);
        for u in 0..p {
            for v in 0..p {
                prop_assert!((w.get(u, v) - oracle[u][v]).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&w.get(u, v)));
                prop_assert_eq!(w.get(u, v), w.get(v, u));
            }
        }
    }

    #[test]
    fn adjacency_is_monotone_in_beta(p in 2usize..=10, beta in 1u32..=12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = SymMatrix::from_row_major(p, random_adjacency(p, &mut r).into_iter().flatten().collect()).unwrap();
        let lo = adjacency(&s, beta).unwrap();
        let hi = adjacency(&s, beta + 1).unwrap();
        for u in 0..p {
            for v in 0..p {
                if u != v {
                    prop_assert!(hi.get(u, v) <= lo.get(u, v));
                }
            }
        }
    }

    #[test]
    fn modules_are_permutation_equivariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let block: Vec<usize> = (0..30).map(|j| [1, 1, 2, 0, 3][j % 5]).collect();
        let data = block_tom(&block, &mut r);
        let p = block.len();
        let feats = names(p);
        let w = TomMatrix::from_matrix(SymMatrix::from_row_major(p, data.clone()).unwrap()).unwrap();
        let base = detect_modules(&w, &feats, 4, 0.5).unwrap().0;

        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng(perm_seed));
        let mut permuted = vec![0.0; p * p];
        for u in 0..p {
            for v in 0..p {
                permuted[u * p + v] = data[perm[u] * p + perm[v]];
            }
        }
        let pfeats: Vec<String> = perm.iter().map(|&j| feats[j].clone()).collect();
        let w2 = TomMatrix::from_matrix(SymMatrix::from_row_major(p, permuted).unwrap()).unwrap();
        let moved = detect_modules(&w2, &pfeats, 4, 0.5).unwrap().0;

        // Same partition of feature names; grey stays grey.
        prop_assert_eq!(base.module_count, moved.module_count);
        for (i, f) in pfeats.iter().enumerate() {
            let a = base.label_of(f).unwrap();
            let b = moved.labels[i];
            prop_assert_eq!(a == 0, b == 0);
            for (j, g) in pfeats.iter().enumerate() {
                let same_base = base.label_of(f) == base.label_of(g);
                prop_assert_eq!(same_base, moved.labels[i] == moved.labels[j]);
            }
        }
        prop_assert!(adjusted_rand_index(&block, &base.labels) > 0.99);
    }
}
