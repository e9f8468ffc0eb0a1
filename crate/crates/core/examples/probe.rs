use shadows_core::calibration::*;
use shadows_core::circuit::{Ensemble, Topology};
use shadows_core::noise::{NoiseModel, TwoQubitNoise};
use shadows_core::simulator::InputState;
use shadows_core::experiments::{exact_ideal_frame, gamma_for};
use shadows_core::estimation::*;
use shadows_core::state::DenseState;
use shadows_core::simulator::{acquire_records, AcquisitionSpec};

fn main() {
    // 1) Twirl network vs MC exact_f under two-qubit Pauli noise, n=4 D=1.
    let n = 4;
    let topo = Topology::brickwork(n);
    let noise = NoiseModel {
        two_qubit: TwoQubitNoise::Pauli { probs: { let mut p = vec![0.002; 16]; p[0] = 0.97; p[5] = 0.0; p[5] = 1.0 - 0.97 - 0.002*13.0; p } },
        single_qubit_channels: vec![vec![0.98, 0.01, 0.005, 0.005], vec![0.99, 0.002, 0.003, 0.005]],
        readout: vec![(0.02, 0.03); 4],
        first_layer_ideal: true,
    };
    noise.validate(n).unwrap();
    let tt = exact_f_tt_pauli_noise(n, 1, Ensemble::Clifford1q, &topo, &noise).unwrap();
    let net = tt.to_dense().unwrap();
    let mc = exact_f(FrameEnsemble::Layered { n, depth: 1, ensemble: Ensemble::Clifford1q, topology: &topo }, &noise, 40_000, 123).unwrap();
    let mut worst = (0.0f64, 0usize);
    for k in 0..(1 << n) {
        let dev = (net[k] - mc.value(k)).abs() / mc.stderr(k).unwrap().max(1e-12);
        if dev > worst.0 { worst = (dev, k); }
    }
    println!("[1] twirl-vs-MC: worst |dev|/stderr = {:.2} at k={} (net {:.6}, mc {:.6} ± {:.6}); tt ranks {:?}",
        worst.0, worst.1, net[worst.1], mc.value(worst.1), mc.stderr(worst.1).unwrap(), tt.ranks());

    // 2) Empirical calibration vs twirl network, n=4 D=1, 50k shots.
    let spec = AcquisitionSpec { n, depth: 1, ensemble: Ensemble::Clifford1q, topology: topo.clone(), input: InputState::Zero, noise: noise.clone(), master_seed: 9 };
    let f_hat = estimate_f_dense_streaming(&spec, 50_000).unwrap();
    let mut bad = 0;
    for k in 0..(1 << n) {
        let dev = (f_hat.value(k) - net[k]).abs() / f_hat.stderr(k).unwrap().max(1e-12);
        if dev > 3.0 { bad += 1; }
    }
    println!("[2] empirical-vs-network: {} of {} entries outside 3 stderr", bad, 1 << n);

    // 3) Criterion-8 scale probe (reduced): n=6 D=2 GUE r=1e-3, |S_cal|=3e4, |S|=1e4, 6 targets.
    let n = 6;
    let topo = Topology::brickwork(n);
    let gamma = gamma_for(1e-3, 42).unwrap();
    println!("[3] gamma(r=1e-3) = {gamma:.5}");
    let gnoise = NoiseModel::gue(gamma);
    let cal_spec = AcquisitionSpec { n, depth: 2, ensemble: Ensemble::Haar, topology: topo.clone(), input: InputState::Zero, noise: gnoise.clone(), master_seed: 77 };
    let t0 = std::time::Instant::now();
    let f_hat = estimate_f_dense_streaming(&cal_spec, 30_000).unwrap();
    println!("    calibration 3e4 shots took {:?}", t0.elapsed());
    let f_ideal = exact_ideal_frame(n, 2, &topo).unwrap();
    println!("    worst-case bias (f_hat vs ideal): {:.5}", worst_case_bias(&f_ideal, &f_hat).unwrap());
    println!("    min f_hat = {:.5}, min ideal = {:.5}", f_hat.min_abs().unwrap(), f_ideal.min_abs().unwrap());
    let mut mit = vec![]; let mut unmit = vec![];
    let t0 = std::time::Instant::now();
    for trial in 0..6u64 {
        let espec = AcquisitionSpec { n, depth: 2, ensemble: Ensemble::Haar, topology: topo.clone(), input: InputState::HaarRandom, noise: gnoise.clone(), master_seed: 1000 + trial };
        let target = espec.prepared_input().unwrap();
        let set = acquire_records(&espec, 10_000).unwrap();
        let obs = Observable::PureTarget(target);
        let m = estimate(&obs, &set.records, &f_hat, InversionPolicy::Override, Aggregation::Mean).unwrap();
        let u = estimate(&obs, &set.records, &f_ideal, InversionPolicy::Override, Aggregation::Mean).unwrap();
        println!("    trial {trial}: mit {:.4} (se {:.4}), unmit {:.4}", m.value, m.stderr, u.value);
        mit.push((m.value - 1.0).abs()); unmit.push((u.value - 1.0).abs());
    }
    println!("    6 trials took {:?}", t0.elapsed());
    let mm: f64 = mit.iter().sum::<f64>() / mit.len() as f64;
    let um: f64 = unmit.iter().sum::<f64>() / unmit.len() as f64;
    println!("    MAE mitigated {mm:.4}, unmitigated {um:.4}, ratio {:.2}", um / mm);
}
