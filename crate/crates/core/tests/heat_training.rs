use pdedisc::data::{sample_dataset, Generator, HeatConfig, ManufacturedHeat, SampleCounts};
use pdedisc::loss::HybridLoss;
use pdedisc::network::NetworkConfig;
use pdedisc::operators::{Combination, OperatorId};
use pdedisc::trainer::{train_combination, TrainConfig};

/// The true heat combination trained at the default configuration fits the
/// data quickly and drives the total loss down.
#[test]
fn heat_true_combination_fits_at_default_config() {
    let gen = ManufacturedHeat::new(HeatConfig::default()).unwrap();
    let (data, colloc) = sample_dataset(&gen.domain(), &gen, SampleCounts::default(), 0.0, 0).unwrap();
    let loss = HybridLoss::new(&data, &colloc).unwrap();
    let comb = Combination::from_operators(OperatorId::heat_library(), &[OperatorId::Ut, OperatorId::Uxx], vec![1.0, 1.0]).unwrap();
    let net = NetworkConfig::default_field(0);
    let state = train_combination(&comb, &net, &net, &loss, &TrainConfig::default()).unwrap();

    let first_fit = state.history.iter().find(|r| r.mse_dn < 1e-4).map(|r| r.k);
    assert!(
        matches!(first_fit, Some(k) if k <= 10),
        "MSE_DN history: {:?}",
        state.history.iter().map(|r| r.mse_dn).collect::<Vec<_>>()
    );
    let last = state.last_report();
    assert!(last.mse_n < 1e-3, "final MSE_N {}", last.mse_n);
    assert!(state.history.iter().all(|r| r.monotone()));
}
