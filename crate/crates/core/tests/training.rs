use congait_core::model::{evaluate, train, Architecture, Example, Hyper, Tensor};
use congait_core::synth::separable_examples;

/// Keeps every 10th sample so the small architecture trains quickly.
fn downsample(examples: Vec<Example>) -> Vec<Example> {
    examples
        .into_iter()
        .map(|e| {
            let data: Vec<f64> = e.input.data().iter().step_by(10).copied().collect();
            Example { input: Tensor::new(vec![18, 100], data).unwrap(), class_index: e.class_index }
        })
        .collect()
}

#[test]
fn small_cnn_separates_synthetic_walks() {
    let data = downsample(separable_examples(80, (0, 1), 11));
    let model = Architecture::small(18, 100, vec![(8, 5, 1)], 2).build(3, 0.0, 1.0).unwrap();
    let hyper = Hyper { epochs: 20, learning_rate: 0.05, batch_size: 8, seed: 3 };
    let report = train(&model, &data, &hyper).unwrap();
    assert!(report.final_accuracy >= 0.95, "accuracy {}", report.final_accuracy);
    assert!(report.epoch_loss.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{:?}", report.epoch_loss);
    let (loss, acc) = evaluate(&report.model, &data).unwrap();
    assert_eq!((loss, acc), (report.final_loss, report.final_accuracy));
}

#[test]
fn training_is_reproducible() {
    let data = downsample(separable_examples(20, (0, 1), 1));
    let model = Architecture::small(18, 100, vec![(4, 5, 2)], 2).build(1, 0.0, 1.0).unwrap();
    let hyper = Hyper { epochs: 3, learning_rate: 0.05, batch_size: 4, seed: 9 };
    let a = train(&model, &data, &hyper).unwrap();
    let b = train(&model, &data, &hyper).unwrap();
    assert_eq!(a.model.model_id(), b.model.model_id());
    assert_eq!(a.epoch_loss, b.epoch_loss);
}
