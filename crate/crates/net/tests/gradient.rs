use iuzawa_core::grf::{gen_dataset, ExperimentKind};
use iuzawa_net::gradcheck::probe_gradient;
use iuzawa_net::train::LossKind;
use iuzawa_net::{NetConfig, NetParams, Tying};

const FD_RTOL: f64 = 1e-5;

fn m8_config(tying: Tying) -> NetConfig {
    let mut c = NetConfig::new(ExperimentKind::EllipticIso, 8);
    c.layers = 2;
    c.tying = tying;
    c.k_max = 2;
    c.pad_to = 10;
    c.m_p = 4;
    c.qa_width = 16;
    c.fourier_layers = 2;
    c
}

fn worst_error(tying: Tying, loss: LossKind, seed: u64) -> f64 {
    let ds = gen_dataset(ExperimentKind::EllipticIso, 1, 8, seed).unwrap();
    let mut net = NetParams::init(&m8_config(tying)).unwrap();
    let before = net.store.clone();
    let probes = probe_gradient(&mut net, &ds.records[0], loss, 25, 1e-5, seed).unwrap();
    assert!(net.store.same_values(&before));
    probes.iter().map(|p| p.error(FD_RTOL)).fold(0.0, f64::max)
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for tying in [Tying::Shared, Tying::Free] {
        let err = worst_error(tying, LossKind::L1Ratio, 3);
        assert!(err <= FD_RTOL, "{tying:?}: worst relative error {err}");
    }
    let err = worst_error(Tying::Shared, LossKind::SquaredL2, 4);
    assert!(err <= FD_RTOL, "squared loss: worst relative error {err}");
}
