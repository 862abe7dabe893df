use ebm_core::energy::{EnergyModel, ModelConfig};
use ebm_core::rfm::{train, ObjectiveConfig, TrainConfig};
use ebm_core::rng;
use ebm_core::state::{generate_toy_dataset, PriorSpec, ToyDataset};

#[test]
fn restoring_field_loss_falls_on_toy_data() {
    let ds = ToyDataset::from_names(&["triangle".into(), "square".into()], 0.05, 2).unwrap();
    let data = generate_toy_dataset(&ds, 64, &mut rng::root(4)).unwrap();
    let prior = PriorSpec::isotropic(0.5, 2);
    let model = EnergyModel::new(ModelConfig {
        n_layers: 2,
        embed_dim: 8,
        readout_hidden: 8,
        n_types: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 8,
        lr: 3e-3,
        ema_decay: 0.99,
        ..TrainConfig::default()
    };
    let out = train(&model, &data, &prior, &ObjectiveConfig::default(), &cfg, 1).unwrap();
    let h = &out.history;
    assert_eq!(h.len(), 300);
    let avg = |r: &[ebm_core::rfm::LossRecord]| r.iter().map(|x| x.l_rfm).sum::<f64>() / r.len() as f64;
    let (first, last) = (avg(&h[..50]), avg(&h[250..]));
    assert!(last < 0.7 * first, "loss {first} -> {last}");
    assert_ne!(out.ema.params.flat, model.params.flat);
}
