use rand::Rng;
use sparc_core::isoforest::{average_path_length, isolation_forest_split};
use sparc_core::rng::stream_rng;

fn cluster_with_outlier(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 1);
    let mut rows: Vec<Vec<f64>> = (0..99)
        .map(|_| vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)])
        .collect();
    rows.insert(37, vec![4.0, -3.0]);
    rows
}

#[test]
fn far_outlier_ranks_first_for_every_seed() {
    for seed in 0..20 {
        let data = cluster_with_outlier(seed);
        let split = isolation_forest_split(&data, 0.2, 100, 256, &mut stream_rng(seed, 0)).unwrap();
        assert_eq!(split.ranking()[0], 37, "seed {seed}");
        assert_eq!(split.ood.iter().filter(|&&o| o).count(), 20);
        assert!(split.ood[37]);
        assert!(split.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}

/// Cluster of 80 rows plus 20 rows far away in different directions.
fn separated(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream_rng(seed, 2);
    let mut rows: Vec<Vec<f64>> = (0..80)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5])
        .collect();
    let mut outliers = Vec::new();
    for k in 0..20 {
        let angle = k as f64 * std::f64::consts::TAU / 20.0;
        outliers.push(rows.len());
        rows.push(vec![30.0 * angle.cos(), 30.0 * angle.sin(), 0.5]);
    }
    (rows, outliers)
}

#[test]
fn duplicating_rows_keeps_the_ood_set() {
    let (rows, outliers) = separated(3);
    let split = isolation_forest_split(&rows, 0.2, 100, 256, &mut stream_rng(3, 0)).unwrap();
    let picked: Vec<usize> = (0..rows.len()).filter(|&i| split.ood[i]).collect();
    assert_eq!(picked, outliers);

    let doubled: Vec<Vec<f64>> = rows.iter().chain(rows.iter()).cloned().collect();
    let split2 = isolation_forest_split(&doubled, 0.2, 100, 256, &mut stream_rng(3, 0)).unwrap();
    let n = rows.len();
    let picked2: Vec<usize> = (0..2 * n).filter(|&i| split2.ood[i]).collect();
    let expected: Vec<usize> = outliers.iter().copied().chain(outliers.iter().map(|i| i + n)).collect();
    assert_eq!(picked2, expected);
}

/// Mean depth of the external nodes of a BST built by inserting `keys`.
fn external_depth_mean(keys: &[usize]) -> f64 {
    // nodes as (key, left, right); usize::MAX marks an empty child
    let mut nodes: Vec<(usize, usize, usize)> = Vec::new();
    for &k in keys {
        if nodes.is_empty() {
            nodes.push((k, usize::MAX, usize::MAX));
            continue;
        }
        let mut at = 0;
        loop {
            let go_left = k < nodes[at].0;
            let next = if go_left { nodes[at].1 } else { nodes[at].2 };
            if next == usize::MAX {
                nodes.push((k, usize::MAX, usize::MAX));
                let id = nodes.len() - 1;
                if go_left {
                    nodes[at].1 = id;
                } else {
                    nodes[at].2 = id;
                }
                break;
            }
            at = next;
        }
    }
    if nodes.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    let mut stack = vec![(0usize, 0usize)];
    while let Some((id, d)) = stack.pop() {
        for child in [nodes[id].1, nodes[id].2] {
            if child == usize::MAX {
                total += d + 1;
            } else {
                stack.push((child, d + 1));
            }
        }
    }
    total as f64 / (keys.len() + 1) as f64
}

/// Average over all insertion orders of `m` keys (Heap's algorithm).
fn exhaustive_unsuccessful_search(m: usize) -> f64 {
    let mut keys: Vec<usize> = (0..m).collect();
    let mut c = vec![0usize; m];
    let mut sum = external_depth_mean(&keys);
    let mut count = 1usize;
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                keys.swap(0, i);
            } else {
                keys.swap(c[i], i);
            }
            sum += external_depth_mean(&keys);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    sum / count as f64
}

#[test]
fn path_length_normalizer_matches_summation_and_bst_enumeration() {
    for n in 2..=10usize {
        let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
        let closed = 2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64;
        assert!((average_path_length(n) - closed).abs() < 1e-12, "n={n}");
        if n <= 9 {
            let enumerated = exhaustive_unsuccessful_search(n - 1);
            assert!((average_path_length(n) - enumerated).abs() < 1e-9, "n={n}: {enumerated}");
        }
    }
}
