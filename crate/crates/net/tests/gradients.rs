use dins_net::gradcheck::{self, GradCheckReport};
use dins_net::ops::{self, CE_EPS};
use dins_net::{DimVariant, Model, NetConfig, Tensor};

fn micro(variant: DimVariant) -> NetConfig {
    NetConfig { in_dims: [2, 32, 32], channels: [2, 2, 2, 2, 2], dim_variant: variant, ..Default::default() }
}

#[test]
fn every_layer_type_matches_finite_differences() {
    for (name, report) in gradcheck::layer_checks(11) {
        assert!(report.passes(), "{name}: {report:?}");
    }
}

#[test]
fn every_dim_variant_backpropagates_correctly() {
    let (image, guides, target) = gradcheck::random_batch::<f32>(1, [2, 32, 32], 5);
    let mut total = GradCheckReport::default();
    for variant in DimVariant::all() {
        let model: Model = Model::new(micro(variant)).unwrap();
        let report = gradcheck::check_model(&model, &image, &guides, &target, (1.0, 3.0), 3, 1e-4);
        assert!(report.passes(), "{variant}: {report:?}");
        total.merge(&report);
    }
    assert!(total.checked > 3000);
}

#[test]
fn batch_of_two_accumulates_per_sample_gradients() {
    let model: Model = Model::new(micro(DimVariant::Full)).unwrap();
    let (image, guides, target) = gradcheck::random_batch::<f32>(2, [2, 32, 32], 9);
    let report = gradcheck::check_model(&model, &image, &guides, &target, (1.0, 3.0), 7, 1e-4);
    assert!(report.passes(), "{report:?}");
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let model: Model = Model::new(micro(DimVariant::V2)).unwrap();
    let (image, guides, _) = gradcheck::random_batch::<f32>(1, [2, 32, 32], 2);
    let (logits, tape) = model.forward_train(&image, &guides).unwrap();
    let mut grads = model.params().zeros_like();
    model.backward(&tape, &Tensor::zeros(logits.shape()), &mut grads);
    assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn gradients_are_finite() {
    let model: Model = Model::new(micro(DimVariant::Full)).unwrap();
    let (image, guides, target) = gradcheck::random_batch::<f32>(2, [2, 32, 32], 4);
    let (logits, tape) = model.forward_train(&image, &guides).unwrap();
    let (loss, dlogits) = ops::weighted_ce(&ops::softmax2(&logits), &target, (1.0, 3.0), CE_EPS);
    assert!(loss.is_finite() && loss > 0.0);
    let mut grads = model.params().zeros_like();
    model.backward(&tape, &dlogits, &mut grads);
    assert!(grads.iter().all(Tensor::is_finite));
    assert!(grads.iter().any(|g| g.data().iter().any(|&v| v != 0.0)));
}
