use cltm::distances::{distance_matrix, DistanceConfig, DistanceMatrix};
use cltm::model::LatentTreeStructure;
use cltm::pipeline::{generate_synthetic, random_latent_tree, SyntheticSpec, TreeShape};
use cltm::structure::{cl_grouping, extract_clusters, robinson_foulds, to_dot, GroupingVariant, StructureConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_shape<R: Rng>(rng: &mut R, max_total: usize) -> TreeShape {
    let n_hidden = rng.random_range(0..=max_total / 3);
    let min_obs = match n_hidden {
        0 => 3,
        1 => 3,
        h => h + 2,
    };
    TreeShape {
        n_observed: rng.random_range(min_obs..=(max_total - n_hidden).max(min_obs)),
        n_hidden,
        observed_leaves_only: rng.random(),
        min_length: 0.2,
        max_length: 2.0,
    }
}

fn additive(tree: &LatentTreeStructure) -> DistanceMatrix {
    let obs = tree.observed_indices();
    let labels = obs.iter().map(|&k| tree.nodes()[k].id.clone()).collect();
    let mut d = ndarray::Array2::zeros((obs.len(), obs.len()));
    for (a, &i) in obs.iter().enumerate() {
        for (b, &j) in obs.iter().enumerate().skip(a + 1) {
            let v = tree.path_distance(i, j).unwrap();
            d[[a, b]] = v;
            d[[b, a]] = v;
        }
    }
    DistanceMatrix::new(labels, d).unwrap()
}

fn no_small_hidden_degree(tree: &LatentTreeStructure) -> bool {
    tree.hidden_indices().into_iter().all(|h| tree.degree(h) >= 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_latent_tree(&random_shape(&mut rng, 20), &mut rng).unwrap();
        let d = additive(&truth);
        let cfg = StructureConfig::default();
        let a = cl_grouping(&d, &cfg).unwrap();
        let b = cl_grouping(&d, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn additive_input_is_reproduced(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_latent_tree(&random_shape(&mut rng, 20), &mut rng).unwrap();
        let d = additive(&truth);
        let cfg = StructureConfig::default();
        let out = cl_grouping(&d, &cfg).unwrap();
        prop_assert!(no_small_hidden_degree(&out));
        for (a, la) in d.labels.iter().enumerate() {
            for (b, lb) in d.labels.iter().enumerate() {
                let got = out.path_distance_by_id(la, lb).unwrap();
                prop_assert!((got - d.get(a, b)).abs() <= cfg.eps_fit(), "{} {}: {} vs {}", la, lb, got, d.get(a, b));
            }
        }
    }

    #[test]
    fn clusters_partition_observed_nodes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_latent_tree(&random_shape(&mut rng, 16), &mut rng).unwrap();
        let observed = tree.observed_indices();
        for k in 1..=observed.len() {
            let clusters = extract_clusters(&tree, k).unwrap();
            // Components without observed nodes are absorbed, so k is an upper bound.
            prop_assert!(clusters.len() <= k);
            prop_assert_eq!(clusters.len() == 1, k == 1);
            prop_assert!(clusters.iter().all(|c| !c.is_empty()));
            let mut all: Vec<usize> = clusters.concat();
            all.sort_unstable();
            prop_assert_eq!(&all, &observed);
            prop_assert_eq!(extract_clusters(&tree, k).unwrap(), clusters);
        }
        prop_assert!(extract_clusters(&tree, observed.len() + 1).is_err());
        prop_assert!(extract_clusters(&tree, 0).is_err());
    }
}

#[test]
fn global_variant_recovers_additive_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = StructureConfig {
        variant: GroupingVariant::Global,
        ..StructureConfig::default()
    };
    for _ in 0..20 {
        let truth = random_latent_tree(&random_shape(&mut rng, 16), &mut rng).unwrap();
        let out = cl_grouping(&additive(&truth), &cfg).unwrap();
        assert_eq!(robinson_foulds(&out, &truth).unwrap(), 0);
    }
}

#[test]
fn sampled_input_keeps_canonical_form() {
    for seed in 0..10u64 {
        let data = generate_synthetic(&SyntheticSpec {
            shape: TreeShape {
                n_observed: 9,
                n_hidden: 3,
                ..TreeShape::default()
            },
            builders: vec![],
            time_steps: 500,
            seed: 40 + seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let d = distance_matrix(&data.dataset, &DistanceConfig::default()).unwrap();
        let cfg = StructureConfig {
            check_fit: false,
            ..StructureConfig::default()
        };
        let out = cl_grouping(&d, &cfg).unwrap();
        assert!(no_small_hidden_degree(&out), "seed {seed}");
        assert_eq!(out.observed_indices().len(), 9);
        assert!(cltm::model::ValidationReport { violations: out.structural_violations() }.is_empty());
    }
}

#[test]
fn dot_lists_every_node_and_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tree = random_latent_tree(&TreeShape::default(), &mut rng).unwrap();
    let dot = to_dot(&tree);
    assert!(dot.starts_with("graph"));
    for n in tree.nodes() {
        assert!(dot.contains(&format!("\"{}\"", n.id)), "{dot}");
    }
    assert_eq!(dot.matches(" -- ").count(), tree.edge_count());
}
