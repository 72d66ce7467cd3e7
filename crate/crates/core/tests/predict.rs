use cltm::model::{TimeSeriesDataset, VariableMode};
use cltm::pipeline::{generate_synthetic, CovariateBuilder, EdgeGeneratorSpec, SyntheticSpec, TreeShape};
use cltm::predict::{predict_edges, predict_series, score_nodes, stream_for, Normalization, PredictionBatch};
use cltm::Execution;
use ndarray::Array2;
use proptest::prelude::*;

fn truth_dataset(rows: &[Vec<u8>]) -> TimeSeriesDataset {
    let n = rows[0].len();
    let states = Array2::from_shape_fn((rows.len(), n), |(t, i)| f64::from(rows[t][i]));
    TimeSeriesDataset::from_states((0..n).map(|i| format!("n{i}")).collect(), VariableMode::Binary, states).unwrap()
}

fn truth_rows() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1usize..12, 1usize..6)
        .prop_flat_map(|(n, t)| proptest::collection::vec(proptest::collection::vec(0u8..2, n), t))
}

proptest! {
    #[test]
    fn perfect_prediction_splits_unit_mass(rows in truth_rows(), m in 1usize..5) {
        let truth = truth_dataset(&rows);
        let batches: Vec<PredictionBatch> = rows
            .iter()
            .enumerate()
            .map(|(t, r)| PredictionBatch::from_samples(t, vec![r.clone(); m]).unwrap())
            .collect();
        for s in score_nodes(&batches, &truth, Normalization::Total).unwrap() {
            prop_assert_eq!(s.cp + s.ca, 1.0);
        }
    }

    #[test]
    fn repeated_samples_score_like_one(rows in truth_rows(), guess_seed in any::<u64>(), m in 2usize..6) {
        let truth = truth_dataset(&rows);
        let n = rows[0].len();
        let guess = |t: usize| -> Vec<u8> { (0..n).map(|i| ((guess_seed >> ((t * 7 + i) % 64)) & 1) as u8).collect() };
        for norm in [Normalization::Total, Normalization::ActiveCount] {
            let one: Vec<_> = (0..rows.len()).map(|t| PredictionBatch::from_samples(t, vec![guess(t)]).unwrap()).collect();
            let many: Vec<_> = (0..rows.len()).map(|t| PredictionBatch::from_samples(t, vec![guess(t); m]).unwrap()).collect();
            prop_assert_eq!(score_nodes(&one, &truth, norm).unwrap(), score_nodes(&many, &truth, norm).unwrap());
        }
    }
}

#[test]
fn edges_stay_inside_predicted_node_set() {
    let data = generate_synthetic(&SyntheticSpec {
        shape: TreeShape {
            n_observed: 8,
            n_hidden: 2,
            ..TreeShape::default()
        },
        builders: vec![CovariateBuilder::Lag { k: 1 }, CovariateBuilder::PreviousEdge],
        edges: Some(EdgeGeneratorSpec::default()),
        time_steps: 60,
        seed: 31,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ds = &data.dataset;
    let edge_model = data.edge_model.as_ref().unwrap();
    let batches = predict_series(&data.model, ds, ds.burn_in..ds.len(), 5, 8, Execution::Sequential).unwrap();
    let mut seen = 0;
    for b in &batches {
        let pred = predict_edges(edge_model, &data.model, ds, b, 5, &mut stream_for(8, b.t)).unwrap();
        assert_eq!(pred.samples.len(), pred.pairs.len());
        for (p, &(u, v)) in pred.pairs.iter().enumerate() {
            assert!(b.predicted_node_set.contains(&u) && b.predicted_node_set.contains(&v));
            assert_eq!(pred.samples[p].len(), 5);
            seen += pred.samples[p].iter().filter(|&&x| x == 1).count();
        }
    }
    assert!(seen > 0, "no edges drawn at all");
}

#[test]
fn series_is_seeded_and_schedule_independent() {
    let data = generate_synthetic(&SyntheticSpec {
        time_steps: 80,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ds = &data.dataset;
    let range = ds.burn_in..ds.len();
    let a = predict_series(&data.model, ds, range.clone(), 20, 99, Execution::Sequential).unwrap();
    let b = predict_series(&data.model, ds, range.clone(), 20, 99, Execution::Parallel).unwrap();
    let c = predict_series(&data.model, ds, range, 20, 100, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
