//! Scripted numerical studies. Each driver runs the full pipeline
//! (acquire → calibrate → estimate → bias) over a parameter grid and emits
//! tidy CSV tables plus a summary, stamped with the config digest and the
//! crate version.

use crate::calibration::{
    bootstrap_frame_means_quantile, estimate_f_dense, exact_f, exact_f_tt_pauli_noise, phi_matrix,
    FrameEnsemble, FrameSpectrum, Provenance,
};
use crate::circuit::{Boundary, Ensemble, Topology};
use crate::estimation::{estimate, Aggregation, Estimate, InversionPolicy, Observable};
use crate::noise::{calibrate_gamma, NoiseModel, TwoQubitNoise};
use crate::simulator::{acquire_records, AcquisitionSpec, InputState, RecordSet};
use crate::state::DenseState;
use crate::tt::{mals_fit, tt_svd, FitTarget, MalsOptions, Truncation};
use crate::{derive_rng, C64, Result, ShadowError, Stream};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

fn default_trials() -> u64 {
    1
}

/// Grid and budget of one scripted study. Seeds are mandatory; nothing is
/// seeded from the wall clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One of `fig2_top`, `fig2_bottom`, `fig2_inset`, `fig3`,
    /// `fig4_overlap`, `fig5_sim`, `custom`.
    pub experiment: String,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub depth_values: Vec<usize>,
    /// Per-CNOT average gate infidelities for the incoherent noise model.
    #[serde(default)]
    pub r_values: Vec<f64>,
    /// Explicit noise model (experiments that do not sweep `r`).
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub shots_estimation: u64,
    #[serde(default)]
    pub shots_calibration: u64,
    /// Monte-Carlo circuit samples for the shot-free oracles.
    #[serde(default)]
    pub exact_circuit_samples: u64,
    #[serde(default)]
    pub ensemble: Option<String>,
    #[serde(default)]
    pub chi_values: Vec<usize>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            toml::from_str(&text)
                .map_err(|e| ShadowError::InvalidConfig(format!("bad TOML config: {e}")))?
        } else {
            serde_json::from_str::<ExperimentConfig>(&text)?
        };
        Ok(cfg)
    }

    /// Desk-scale defaults per experiment id.
    pub fn default_for(id: &str, master_seed: u64, out_dir: &Path) -> Result<ExperimentConfig> {
        let base = ExperimentConfig {
            experiment: id.into(),
            n_values: vec![],
            depth_values: vec![],
            r_values: vec![],
            noise: None,
            trials: 1,
            shots_estimation: 0,
            shots_calibration: 0,
            exact_circuit_samples: 0,
            ensemble: None,
            chi_values: vec![],
            master_seed,
            out_dir: out_dir.into(),
        };
        let cfg = match id {
            "fig2_top" => ExperimentConfig {
                n_values: vec![3, 4, 5, 6],
                depth_values: vec![1, 2],
                r_values: vec![1e-3, 1e-2],
                exact_circuit_samples: 20_000,
                ensemble: Some("haar".into()),
                ..base
            },
            "fig2_bottom" => ExperimentConfig {
                n_values: vec![4, 5, 6],
                depth_values: vec![0, 1, 2],
                r_values: vec![1e-3],
                trials: 20,
                shots_estimation: 10_000,
                shots_calibration: 100_000,
                ensemble: Some("haar".into()),
                ..base
            },
            "fig2_inset" => ExperimentConfig {
                n_values: vec![6],
                depth_values: vec![0, 1, 2],
                r_values: vec![1e-3, 1e-1],
                trials: 20,
                shots_estimation: 10_000,
                shots_calibration: 100_000,
                ensemble: Some("haar".into()),
                ..base
            },
            "fig3" => ExperimentConfig {
                n_values: vec![8],
                depth_values: vec![1, 2],
                noise: Some(default_two_qubit_pauli_noise()),
                shots_calibration: 100_000,
                chi_values: vec![2, 4, 8, 16],
                ensemble: Some("clifford1q".into()),
                ..base
            },
            "fig4_overlap" => ExperimentConfig {
                depth_values: vec![2],
                noise: Some(default_gate_dependent_noise(8)),
                shots_estimation: 100_000,
                shots_calibration: 100_000,
                ensemble: Some("clifford1q".into()),
                ..base
            },
            "fig5_sim" => ExperimentConfig {
                n_values: vec![5],
                depth_values: vec![0, 1, 2],
                noise: Some(default_gate_dependent_noise(5)),
                shots_calibration: 100_000,
                ensemble: Some("clifford1q".into()),
                ..base
            },
            "custom" => ExperimentConfig {
                n_values: vec![4],
                depth_values: vec![1],
                shots_estimation: 10_000,
                shots_calibration: 10_000,
                ensemble: Some("clifford1q".into()),
                ..base
            },
            other => {
                return Err(ShadowError::InvalidConfig(format!(
                    "unknown experiment id `{other}`"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        crate::noise::hex_string(&hasher.finalize())[..16].to_string()
    }

    fn ensemble(&self) -> Result<Ensemble> {
        self.ensemble
            .as_deref()
            .unwrap_or("clifford1q")
            .parse()
    }
}

/// Two-qubit Pauli noise used by the tensor-train studies (values are ours,
/// not from any hardware).
pub fn default_two_qubit_pauli_noise() -> NoiseModel {
    let mut probs = vec![0.0; 16];
    probs[0] = 0.97;
    // Slightly anisotropic errors so the spectrum is not a pure product.
    let weights = [
        0.0, 3.0, 2.0, 3.0, 3.0, 1.0, 1.0, 1.0, 2.0, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 2.0,
    ];
    let wsum: f64 = weights.iter().sum();
    for (slot, w) in probs.iter_mut().zip(weights).skip(1) {
        *slot = 0.03 * w / wsum;
    }
    // Remaining mass on the identity keeps the sum exactly 1.
    let tail: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - tail;
    NoiseModel {
        two_qubit: TwoQubitNoise::Pauli { probs },
        single_qubit_channels: Vec::new(),
        readout: Vec::new(),
        first_layer_ideal: true,
    }
}

/// Gate-dependent single-qubit Pauli channels plus readout confusion
/// (placeholder values, not taken from any publication).
pub fn default_gate_dependent_noise(n: usize) -> NoiseModel {
    NoiseModel {
        two_qubit: TwoQubitNoise::None,
        single_qubit_channels: vec![
            vec![0.994, 0.003, 0.002, 0.001],
            vec![0.990, 0.002, 0.005, 0.003],
            vec![0.985, 0.006, 0.004, 0.005],
        ],
        readout: (0..n)
            .map(|q| (0.015 + 0.002 * q as f64, 0.03 + 0.003 * q as f64))
            .collect(),
        first_layer_ideal: true,
    }
}

struct CsvTable {
    path: PathBuf,
    writer: std::io::BufWriter<std::fs::File>,
}

impl CsvTable {
    fn create(dir: &Path, name: &str, cfg: &ExperimentConfig, columns: &str) -> Result<CsvTable> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut writer = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(
            writer,
            "# experiment={} config_digest={} version={}",
            cfg.experiment,
            cfg.digest(),
            env!("CARGO_PKG_VERSION")
        )?;
        writeln!(writer, "{columns}")?;
        Ok(CsvTable { path, writer })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}")?;
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Run the configured experiment; returns the written files.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    match cfg.experiment.as_str() {
        "fig2_top" => run_fig2_top(cfg),
        "fig2_bottom" => run_fig2_bottom(cfg),
        "fig2_inset" => run_fig2_inset(cfg),
        "fig3" => run_fig3(cfg),
        "fig4_overlap" => run_fig4_overlap(cfg),
        "fig5_sim" => run_fig5_sim(cfg),
        "custom" => run_custom(cfg),
        other => Err(ShadowError::InvalidConfig(format!(
            "unknown experiment id `{other}`"
        ))),
    }
}

/// γ calibrated to the per-CNOT infidelity `r`, deterministic per config.
pub fn gamma_for(r: f64, master_seed: u64) -> Result<f64> {
    calibrate_gamma(r, 4000, &mut derive_rng(master_seed, Stream::Experiment, 7919))
}

fn layered_spec(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    input: InputState,
    noise: NoiseModel,
    master_seed: u64,
) -> AcquisitionSpec {
    AcquisitionSpec {
        n,
        depth,
        ensemble,
        topology: Topology::brickwork(n),
        input,
        noise,
        master_seed,
    }
}

/// Exact ideal frame of the layered ensemble at any depth (the ideal twirl
/// of Haar and Clifford single-qubit layers is identical).
pub fn exact_ideal_frame(n: usize, depth: usize, topology: &Topology) -> Result<FrameSpectrum> {
    let tt = exact_f_tt_pauli_noise(
        n,
        depth,
        Ensemble::Clifford1q,
        topology,
        &NoiseModel::noiseless(),
    )?;
    Ok(FrameSpectrum::dense(
        n,
        tt.to_dense()?,
        None,
        Provenance::ExactOracle,
    ))
}

fn run_fig2_top(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let samples = if cfg.exact_circuit_samples == 0 {
        20_000
    } else {
        cfg.exact_circuit_samples
    };
    let mut table = CsvTable::create(
        &cfg.out_dir,
        "fig2_top.csv",
        cfg,
        "n,depth,r,gamma,worst_case_bias,bias_ps1,bias_ps2,oracle_max_stderr",
    )?;
    for &r in &cfg.r_values {
        let gamma = gamma_for(r, cfg.master_seed)?;
        for &n in &cfg.n_values {
            let topology = Topology::brickwork(n);
            for &depth in &cfg.depth_values {
                let f_ideal = exact_ideal_frame(n, depth, &topology)?;
                let f_noisy = exact_f(
                    FrameEnsemble::Layered {
                        n,
                        depth,
                        ensemble,
                        topology: &topology,
                    },
                    &NoiseModel::gue(gamma),
                    samples,
                    cfg.master_seed ^ (n as u64) << 8 ^ (depth as u64),
                )?;
                let bias = crate::estimation::worst_case_bias(&f_ideal, &f_noisy)?;
                let ps1 = crate::estimation::worst_case_bias_by_support(&f_ideal, &f_noisy, 1)?;
                let ps2 = if n >= 2 {
                    crate::estimation::worst_case_bias_by_support(&f_ideal, &f_noisy, 2)?
                } else {
                    f64::NAN
                };
                let max_se = (0..1usize << n)
                    .map(|k| f_noisy.stderr(k).unwrap_or(0.0))
                    .fold(0.0f64, f64::max);
                table.row(&format!(
                    "{n},{depth},{r},{gamma},{bias},{ps1},{ps2},{max_se}"
                ))?;
            }
        }
    }
    Ok(vec![table.finish()?])
}

/// One fidelity-estimation trial: mitigated and unmitigated absolute errors
/// for a Haar-random target prepared as the input state.
fn fidelity_trial_errors(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    noise: &NoiseModel,
    f_mitigated: &FrameSpectrum,
    f_ideal: &FrameSpectrum,
    shots: u64,
    trial_seed: u64,
) -> Result<(f64, f64)> {
    let spec = layered_spec(
        n,
        depth,
        ensemble,
        InputState::HaarRandom,
        noise.clone(),
        trial_seed,
    );
    let target = spec.prepared_input()?;
    let set = acquire_records(&spec, shots)?;
    let obs = Observable::PureTarget(target);
    let mitigated = estimate(
        &obs,
        &set.records,
        f_mitigated,
        InversionPolicy::Override,
        Aggregation::Mean,
    )?;
    let unmitigated = estimate(
        &obs,
        &set.records,
        f_ideal,
        InversionPolicy::Override,
        Aggregation::Mean,
    )?;
    Ok(((mitigated.value - 1.0).abs(), (unmitigated.value - 1.0).abs()))
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = crate::pairwise_sum(values) / values.len() as f64;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = crate::pairwise_sum(&sq) / (values.len() as f64 - 1.0);
    (m, (var / values.len() as f64).sqrt())
}

fn run_fig2_bottom(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let r = cfg.r_values.first().copied().unwrap_or(1e-3);
    let gamma = gamma_for(r, cfg.master_seed)?;
    let mut rows = CsvTable::create(
        &cfg.out_dir,
        "fig2_bottom_trials.csv",
        cfg,
        "n,depth,trial,err_mitigated,err_unmitigated",
    )?;
    let mut summary = CsvTable::create(
        &cfg.out_dir,
        "fig2_bottom_summary.csv",
        cfg,
        "n,depth,r,mae_mitigated,stderr_mitigated,mae_unmitigated,stderr_unmitigated",
    )?;
    for &n in &cfg.n_values {
        let topology = Topology::brickwork(n);
        for &depth in &cfg.depth_values {
            let noise = NoiseModel::gue(gamma);
            let cal_spec = layered_spec(
                n,
                depth,
                ensemble,
                InputState::Zero,
                noise.clone(),
                cfg.master_seed ^ 0xca1 ^ ((n as u64) << 16) ^ (depth as u64),
            );
            let f_hat =
                crate::calibration::estimate_f_dense_streaming(&cal_spec, cfg.shots_calibration)?;
            let f_ideal = exact_ideal_frame(n, depth, &topology)?;
            let mut errs_mit = Vec::new();
            let mut errs_unmit = Vec::new();
            for trial in 0..cfg.trials {
                let seed = cfg.master_seed
                    ^ 0xf1de11
                    ^ ((n as u64) << 24)
                    ^ ((depth as u64) << 16)
                    ^ trial;
                let (em, eu) = fidelity_trial_errors(
                    n,
                    depth,
                    ensemble,
                    &noise,
                    &f_hat,
                    &f_ideal,
                    cfg.shots_estimation,
                    seed,
                )?;
                rows.row(&format!("{n},{depth},{trial},{em},{eu}"))?;
                errs_mit.push(em);
                errs_unmit.push(eu);
            }
            let (mm, ms) = mean_stderr(&errs_mit);
            let (um, us) = mean_stderr(&errs_unmit);
            summary.row(&format!("{n},{depth},{r},{mm},{ms},{um},{us}"))?;
        }
    }
    Ok(vec![rows.finish()?, summary.finish()?])
}

fn run_fig2_inset(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let n = *cfg
        .n_values
        .first()
        .ok_or_else(|| ShadowError::InvalidConfig("fig2_inset needs one n".into()))?;
    let topology = Topology::brickwork(n);
    let mut rows = CsvTable::create(
        &cfg.out_dir,
        "fig2_inset_trials.csv",
        cfg,
        "r,depth,trial,err_mitigated",
    )?;
    let mut summary = CsvTable::create(
        &cfg.out_dir,
        "fig2_inset_summary.csv",
        cfg,
        "r,depth,mae_mitigated,stderr",
    )?;
    for &r in &cfg.r_values {
        let gamma = gamma_for(r, cfg.master_seed)?;
        for &depth in &cfg.depth_values {
            let noise = NoiseModel::gue(gamma);
            let cal_spec = layered_spec(
                n,
                depth,
                ensemble,
                InputState::Zero,
                noise.clone(),
                cfg.master_seed ^ 0xca1 ^ ((depth as u64) << 16) ^ r.to_bits(),
            );
            let f_hat =
                crate::calibration::estimate_f_dense_streaming(&cal_spec, cfg.shots_calibration)?;
            let f_ideal = exact_ideal_frame(n, depth, &topology)?;
            let mut errs = Vec::new();
            for trial in 0..cfg.trials {
                let seed =
                    cfg.master_seed ^ 0x1e5e7 ^ ((depth as u64) << 16) ^ (trial << 32) ^ r.to_bits();
                let (em, _) = fidelity_trial_errors(
                    n,
                    depth,
                    ensemble,
                    &noise,
                    &f_hat,
                    &f_ideal,
                    cfg.shots_estimation,
                    seed,
                )?;
                rows.row(&format!("{r},{depth},{trial},{em}"))?;
                errs.push(em);
            }
            let (m, s) = mean_stderr(&errs);
            summary.row(&format!("{r},{depth},{m},{s}"))?;
        }
    }
    Ok(vec![rows.finish()?, summary.finish()?])
}

/// Relative worst-case deviation `max_{k≠0} |a_k − b_k| / |b_k|` (the Fig. 3
/// metric: extra Pauli-observable bias of using `a` in place of `b`).
pub fn relative_worst_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .skip(1)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
        .fold(0.0, f64::max)
}

fn run_fig3(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let n = *cfg.n_values.first().unwrap_or(&8);
    let noise = cfg
        .noise
        .clone()
        .unwrap_or_else(default_two_qubit_pauli_noise);
    let mut table = CsvTable::create(
        &cfg.out_dir,
        "fig3.csv",
        cfg,
        "n,depth,chi,method,relative_bias,bootstrap_floor,max_rank,residual",
    )?;
    for &depth in &cfg.depth_values {
        let spec = layered_spec(
            n,
            depth,
            ensemble,
            InputState::Zero,
            noise.clone(),
            cfg.master_seed ^ 0xf16_3 ^ ((depth as u64) << 8),
        );
        let set = acquire_records(&spec, cfg.shots_calibration)?;
        let phi = phi_matrix(&set.records, n)?;
        let (mean, _) = crate::calibration::mean_and_stderr_columns(&phi);
        let floor = bootstrap_frame_means_quantile(
            &phi,
            &mean,
            1000,
            0.95,
            cfg.master_seed ^ 0xb007 ^ (depth as u64),
        );
        for &chi in &cfg.chi_values {
            let (svd_tt, _) = tt_svd(&mean, &Truncation::rank(chi))?;
            let svd_dense = svd_tt.to_dense()?;
            let svd_bias = relative_worst_deviation(&svd_dense, &mean);
            let svd_residual = l2_distance(&svd_dense, &mean);
            table.row(&format!(
                "{n},{depth},{chi},tt_svd,{svd_bias},{floor},{},{svd_residual}",
                svd_tt.max_rank()
            ))?;

            let init = crate::calibration::ideal_local_tt(n);
            let opts = MalsOptions {
                max_rank: chi,
                sweeps: 10,
                ..MalsOptions::default()
            };
            let (mals_tt, report) = mals_fit(FitTarget::Dense(&mean), &init, &opts)?;
            let mals_dense = mals_tt.to_dense()?;
            let mals_bias = relative_worst_deviation(&mals_dense, &mean);
            table.row(&format!(
                "{n},{depth},{chi},mals,{mals_bias},{floor},{},{}",
                mals_tt.max_rank(),
                report.final_residual()
            ))?;
        }
    }
    Ok(vec![table.finish()?])
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The 8-qubit trial state and the two walker states of the overlap task,
/// built from the phase θ = π/√2.
pub fn overlap_task_states() -> Result<(DenseState, DenseState, DenseState)> {
    let theta = std::f64::consts::PI / std::f64::consts::SQRT_2;
    let dim = 1usize << 8;
    let idx = |bits: &str| usize::from_str_radix(bits, 2).expect("valid bitstring");
    let mut psi_t = vec![C64::new(0.0, 0.0); dim];
    psi_t[idx("11001100")] = C64::new(theta.cos() * theta.cos(), 0.0);
    psi_t[idx("11000011")] = C64::new(0.5 * (2.0 * theta).sin(), 0.0);
    psi_t[idx("00111100")] = C64::new(0.5 * (2.0 * theta).sin(), 0.0);
    psi_t[idx("00110011")] = C64::new(theta.sin() * theta.sin(), 0.0);
    let psi_t = DenseState::from_amplitudes(psi_t)?;

    let mut phi1 = vec![C64::new(0.0, 0.0); dim];
    for bits in ["11001100", "11000011", "00111100", "00110011"] {
        phi1[idx(bits)] = C64::new(0.5, 0.0);
    }
    let phi1 = DenseState::from_amplitudes(phi1)?;

    let mut phi2 = vec![C64::new(0.0, 0.0); dim];
    phi2[idx("11001100")] = C64::new(1.0 / 2f64.sqrt(), 0.0);
    for bits in ["11000011", "00111100", "00110011"] {
        phi2[idx(bits)] = C64::new(1.0 / 6f64.sqrt(), 0.0);
    }
    let phi2 = DenseState::from_amplitudes(phi2)?;
    Ok((psi_t, phi1, phi2))
}

/// Topology of two independent 4-qubit brickwork circuits in parallel (the
/// 2-fold tensor-product measurement on 8 qubits).
pub fn split_topology_4x2() -> Result<Topology> {
    Topology::custom(
        8,
        vec![
            vec![(0, 1), (2, 3), (4, 5), (6, 7)],
            vec![(1, 2), (5, 6)],
        ],
        Boundary::Open,
        "split4x4",
    )
}

// Restrict an 8-qubit noise model to one 4-qubit half.
fn half_noise(noise: &NoiseModel, half: usize) -> NoiseModel {
    let readout = if noise.readout.is_empty() {
        Vec::new()
    } else {
        noise.readout[4 * half..4 * half + 4].to_vec()
    };
    NoiseModel {
        two_qubit: noise.two_qubit.clone(),
        single_qubit_channels: noise.single_qubit_channels.clone(),
        readout,
        first_layer_ideal: noise.first_layer_ideal,
    }
}

/// Calibrate the tensor-product frame: two independent 4-qubit spectra
/// combined by outer product.
pub fn calibrate_split_frame(
    depth: usize,
    ensemble: Ensemble,
    noise: &NoiseModel,
    shots: u64,
    master_seed: u64,
) -> Result<FrameSpectrum> {
    let mut halves = Vec::new();
    for half in 0..2 {
        let spec = layered_spec(
            4,
            depth,
            ensemble,
            InputState::Zero,
            half_noise(noise, half),
            master_seed ^ (0x4a11 + half as u64),
        );
        halves.push(crate::calibration::estimate_f_dense_streaming(&spec, shots)?);
    }
    halves[0].tensor_product(&halves[1])
}

fn run_fig4_overlap(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let depth = *cfg.depth_values.first().unwrap_or(&2);
    let noise = cfg
        .noise
        .clone()
        .unwrap_or_else(|| default_gate_dependent_noise(8));
    let (psi_t, phi1, phi2) = overlap_task_states()?;
    let topology = split_topology_4x2()?;

    // Exact overlaps by direct inner products.
    let exact: Vec<f64> = [&phi1, &phi2, &psi_t]
        .iter()
        .map(|phi| phi.inner(&psi_t).map(|ip| ip.norm_sqr()))
        .collect::<Result<Vec<f64>>>()?;

    let f_hat = calibrate_split_frame(
        depth,
        ensemble,
        &noise,
        cfg.shots_calibration,
        cfg.master_seed,
    )?;
    let ideal_half = exact_ideal_frame(4, depth, &Topology::brickwork(4))?;
    let f_ideal = ideal_half.tensor_product(&ideal_half)?;

    let spec = AcquisitionSpec {
        n: 8,
        depth,
        ensemble,
        topology,
        input: InputState::Amplitudes(psi_t.amplitudes().to_vec()),
        noise,
        master_seed: cfg.master_seed ^ 0x0f4,
    };
    let set = acquire_records(&spec, cfg.shots_estimation)?;

    let mut table = CsvTable::create(
        &cfg.out_dir,
        "fig4_overlap.csv",
        cfg,
        "observable,exact,mitigated,mitigated_stderr,unmitigated,unmitigated_stderr",
    )?;
    for (name, target, exact_value) in [
        ("overlap_phi1", &phi1, exact[0]),
        ("overlap_phi2", &phi2, exact[1]),
        ("self_overlap", &psi_t, exact[2]),
    ] {
        let obs = Observable::PureTarget((*target).clone());
        let mit = estimate(
            &obs,
            &set.records,
            &f_hat,
            InversionPolicy::Override,
            Aggregation::Mean,
        )?;
        let unmit = estimate(
            &obs,
            &set.records,
            &f_ideal,
            InversionPolicy::Override,
            Aggregation::Mean,
        )?;
        table.row(&format!(
            "{name},{exact_value},{},{},{},{}",
            mit.value, mit.stderr, unmit.value, unmit.stderr
        ))?;
    }
    Ok(vec![table.finish()?])
}

fn run_fig5_sim(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let n = *cfg.n_values.first().unwrap_or(&5);
    let noise = cfg
        .noise
        .clone()
        .unwrap_or_else(|| default_gate_dependent_noise(n));
    let mut frame_files = Vec::new();
    let mut table = CsvTable::create(
        &cfg.out_dir,
        "fig5_sim.csv",
        cfg,
        "depth,shots_used,state,method,value,stderr,abs_error",
    )?;
    for &depth in &cfg.depth_values {
        let spec = layered_spec(
            n,
            depth,
            ensemble,
            InputState::Zero,
            noise.clone(),
            cfg.master_seed ^ 0xf15 ^ ((depth as u64) << 4),
        );
        let set = acquire_records(&spec, cfg.shots_calibration)?;
        // 90% calibration / 10% validation split, as in the protocol.
        let split = (set.records.len() * 9) / 10;
        let (cal_records, val_records) = set.records.split_at(split);
        let cal_set = RecordSet {
            header: set.header.clone(),
            records: cal_records.to_vec(),
        };
        let f_hat = estimate_f_dense(&cal_set)?;
        let frame_path = cfg.out_dir.join(format!("fig5_frame_d{depth}.csv"));
        f_hat.write_csv(&frame_path)?;
        frame_files.push(frame_path);
        let f_ideal = exact_ideal_frame(n, depth, &Topology::brickwork(n))?;

        let zero_fidelity = Observable::PureTarget(DenseState::zero(n));
        let marginal = Observable::PauliSum(vec![
            (
                0.5,
                crate::pauli::PauliString::from_index(0, n, crate::pauli::PauliNorm::UnitOperator),
            ),
            (
                0.5,
                crate::pauli::PauliString::parse(&format!("Z{}", "I".repeat(n - 1)))?,
            ),
        ]);
        let mut shots_grid = vec![100usize, 300, 1000, 3000];
        shots_grid.retain(|&s| s <= val_records.len());
        if !val_records.is_empty() {
            shots_grid.push(val_records.len());
        }
        for &used in &shots_grid {
            let slice = &val_records[..used];
            for (state_name, obs) in [("zero_n", &zero_fidelity), ("zero_1", &marginal)] {
                for (method, frame) in [("mitigated", &f_hat), ("unmitigated", &f_ideal)] {
                    let est = estimate(
                        obs,
                        slice,
                        frame,
                        InversionPolicy::Override,
                        Aggregation::Mean,
                    )?;
                    table.row(&format!(
                        "{depth},{used},{state_name},{method},{},{},{}",
                        est.value,
                        est.stderr,
                        (est.value - 1.0).abs()
                    ))?;
                }
            }
        }
    }
    let mut files = vec![table.finish()?];
    files.extend(frame_files);
    Ok(files)
}

fn run_custom(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ensemble = cfg.ensemble()?;
    let n = *cfg
        .n_values
        .first()
        .ok_or_else(|| ShadowError::InvalidConfig("custom experiment needs n_values".into()))?;
    let depth = *cfg
        .depth_values
        .first()
        .ok_or_else(|| ShadowError::InvalidConfig("custom experiment needs depth_values".into()))?;
    let noise = cfg.noise.clone().unwrap_or_else(NoiseModel::noiseless);
    std::fs::create_dir_all(&cfg.out_dir)?;

    let cal_spec = layered_spec(
        n,
        depth,
        ensemble,
        InputState::Zero,
        noise.clone(),
        cfg.master_seed,
    );
    let records_path = cfg.out_dir.join("calibration_records.jsonl");
    crate::simulator::acquire_to_file(&cal_spec, cfg.shots_calibration, &records_path)?;
    let set = crate::simulator::read_records(&records_path)?;
    let f_hat = estimate_f_dense(&set)?;
    let frame_path = cfg.out_dir.join("frame.csv");
    f_hat.write_csv(&frame_path)?;

    let mut table = CsvTable::create(
        &cfg.out_dir,
        "custom_estimates.csv",
        cfg,
        "observable,value,stderr,shots,frame",
    )?;
    let est_spec = layered_spec(
        n,
        depth,
        ensemble,
        InputState::Zero,
        noise,
        cfg.master_seed ^ 0xe57,
    );
    let est_set = acquire_records(&est_spec, cfg.shots_estimation)?;
    for (name, obs) in [
        ("identity", Observable::identity(n)),
        (
            "zero_fidelity",
            Observable::PureTarget(DenseState::zero(n)),
        ),
    ] {
        let est = estimate(
            &obs,
            &est_set.records,
            &f_hat,
            InversionPolicy::Override,
            Aggregation::Mean,
        )?;
        table.row(&format!(
            "{name},{},{},{},{}",
            est.value, est.stderr, est.shots, est.frame_tag
        ))?;
    }
    Ok(vec![records_path, frame_path, table.finish()?])
}

/// Per-support histogram files (one representative label per support size):
/// rows `shot_index,phi`, |S| rows per file.
pub fn write_histograms(
    phi: &Array2<f64>,
    n: usize,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for ps in 1..=n {
        // Leftmost-contiguous support pattern 1^ps 0^(n-ps).
        let k = ((1usize << ps) - 1) << (n - ps);
        let path = dir.join(format!("{stem}_ps{ps}.csv"));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "shot_index,phi_k,k")?;
        for i in 0..phi.nrows() {
            writeln!(
                out,
                "{},{},{}",
                i,
                phi[[i, k]],
                crate::simulator::z_to_string(k, n)
            )?;
        }
        out.flush()?;
        files.push(path);
    }
    Ok(files)
}

/// Summary of an [`Estimate`] as a CSV fragment.
pub fn estimate_row(name: &str, est: &Estimate) -> String {
    format!(
        "{name},{},{},{},{}",
        est.value, est.stderr, est.shots, est.frame_tag
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn overlap_states_are_normalized_and_match_direct_products() {
        let (psi_t, phi1, phi2) = overlap_task_states().unwrap();
        assert_abs_diff_eq!(psi_t.norm_sqr(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi1.norm_sqr(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi2.norm_sqr(), 1.0, epsilon = 1e-12);

        let theta = std::f64::consts::PI / std::f64::consts::SQRT_2;
        // ⟨φ1|Ψ⟩ = (cos²θ + sin 2θ + sin²θ)/2 = (1 + sin 2θ)/2.
        let expect1 = 0.5 * (1.0 + (2.0 * theta).sin());
        let got1 = phi1.inner(&psi_t).unwrap();
        assert_abs_diff_eq!(got1.re, expect1, epsilon = 1e-12);
        assert_abs_diff_eq!(got1.im, 0.0, epsilon = 1e-12);

        let self_overlap = psi_t.inner(&psi_t).unwrap().norm_sqr();
        assert_abs_diff_eq!(self_overlap, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn split_topology_keeps_halves_independent() {
        let topo = split_topology_4x2().unwrap();
        topo.validate().unwrap();
        for s in 0..topo.num_sublayers() {
            for &(c, t) in topo.sublayer_pairs(s) {
                assert_eq!(c / 4, t / 4, "pair ({c},{t}) crosses the boundary");
            }
        }
    }

    #[test]
    fn config_defaults_and_digest() {
        let dir = std::env::temp_dir().join("shadows_cfg");
        let cfg = ExperimentConfig::default_for("fig2_inset", 7, &dir).unwrap();
        assert_eq!(cfg.r_values, vec![1e-3, 1e-1]);
        assert_eq!(cfg.digest().len(), 16);
        assert!(ExperimentConfig::default_for("nope", 7, &dir).is_err());
    }

    #[test]
    fn config_toml_and_json_round_trip() {
        let dir = std::env::temp_dir().join("shadows_cfg_io");
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = ExperimentConfig::default_for("fig3", 11, &dir).unwrap();

        let toml_path = dir.join("cfg.toml");
        std::fs::write(&toml_path, toml::to_string(&cfg).unwrap()).unwrap();
        let from_toml = ExperimentConfig::load(&toml_path).unwrap();
        assert_eq!(from_toml.digest(), cfg.digest());

        let json_path = dir.join("cfg.json");
        std::fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let from_json = ExperimentConfig::load(&json_path).unwrap();
        assert_eq!(from_json.digest(), cfg.digest());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn custom_pipeline_runs_end_to_end() {
        let dir = std::env::temp_dir().join("shadows_custom_exp");
        std::fs::remove_dir_all(&dir).ok();
        let mut cfg = ExperimentConfig::default_for("custom", 3, &dir).unwrap();
        cfg.n_values = vec![2];
        cfg.shots_calibration = 2000;
        cfg.shots_estimation = 2000;
        let files = run(&cfg).unwrap();
        assert_eq!(files.len(), 3);
        for f in &files {
            assert!(f.exists());
        }
        // Identity observable estimates to exactly 1.
        let text = std::fs::read_to_string(&files[2]).unwrap();
        let id_line = text
            .lines()
            .find(|l| l.starts_with("identity"))
            .expect("identity row");
        let value: f64 = id_line.split(',').nth(1).unwrap().parse().unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-9);
        std::fs::remove_dir_all(&dir).ok();
    }
}
