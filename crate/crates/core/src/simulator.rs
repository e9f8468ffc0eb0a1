//! The acquisition primitive: prepare ρ, apply a sampled noisy circuit,
//! measure in the computational basis, record `(z, g)`.
//!
//! Records never store noise realizations; post-processing sees only the
//! noise-free circuit description and the observed bitstring.

use crate::circuit::{clifford_index_of, sample_circuit, Circuit, Ensemble, Topology};
use crate::noise::{
    apply_pauli_error_1q, apply_pauli_error_2q, apply_readout_flips, incoherent_noise_unitary,
    NoiseModel, TwoQubitNoise,
};
use crate::state::{apply_readout_confusion, DenseState, DensityMatrix};
use crate::{derive_rng, C64, Result, ShadowError, Stream};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::Path;

/// Input state prepared before every shot. Preparation is always noiseless.
#[derive(Debug, Clone, PartialEq)]
pub enum InputState {
    Zero,
    /// Haar-random pure state (normalized complex Gaussian vector), drawn
    /// once per acquisition from the master seed.
    HaarRandom,
    /// Approximately uniform stabilizer state: a random Clifford circuit of
    /// the given depth applied to |0…0⟩.
    Stabilizer { depth: usize },
    Amplitudes(Vec<C64>),
}

impl InputState {
    pub fn tag(&self) -> String {
        match self {
            InputState::Zero => "zero".into(),
            InputState::HaarRandom => "haar".into(),
            InputState::Stabilizer { depth } => format!("stabilizer:{depth}"),
            InputState::Amplitudes(_) => "amplitudes".into(),
        }
    }

    pub fn prepare(&self, n: usize, master_seed: u64) -> Result<DenseState> {
        match self {
            InputState::Zero => Ok(DenseState::zero(n)),
            InputState::HaarRandom => Ok(DenseState::random_haar(
                n,
                &mut derive_rng(master_seed, Stream::Input, 0),
            )),
            InputState::Stabilizer { depth } => {
                let mut rng = derive_rng(master_seed, Stream::Input, 0);
                let topo = Topology::brickwork(n);
                let circuit = sample_circuit(n, *depth, Ensemble::Clifford1q, &topo, &mut rng)?;
                let mut state = DenseState::zero(n);
                circuit.apply(&mut state);
                Ok(state)
            }
            InputState::Amplitudes(amps) => {
                let state = DenseState::from_amplitudes(amps.clone())?;
                if state.n() != n {
                    return Err(ShadowError::DimensionMismatch(format!(
                        "input state has {} qubits, expected {n}",
                        state.n()
                    )));
                }
                Ok(state)
            }
        }
    }
}

/// One acquired snapshot: the sampled (noise-free) circuit description plus
/// the observed outcome bitstring.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowRecord {
    pub circuit: Circuit,
    pub z: usize,
    pub shot_seed: u64,
}

impl ShadowRecord {
    pub fn z_string(&self) -> String {
        z_to_string(self.z, self.circuit.n())
    }
}

/// Bitstring text with qubit 0 leftmost.
pub fn z_to_string(z: usize, n: usize) -> String {
    (0..n)
        .map(|l| if (z >> (n - 1 - l)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub fn z_from_string(s: &str) -> Result<usize> {
    let mut z = 0usize;
    for c in s.chars() {
        z = (z << 1)
            | match c {
                '0' => 0,
                '1' => 1,
                other => {
                    return Err(ShadowError::InvalidConfig(format!(
                        "invalid outcome bit `{other}`"
                    )))
                }
            };
    }
    Ok(z)
}

/// Everything needed to reproduce an acquisition run.
#[derive(Debug, Clone)]
pub struct AcquisitionSpec {
    pub n: usize,
    pub depth: usize,
    pub ensemble: Ensemble,
    pub topology: Topology,
    pub input: InputState,
    pub noise: NoiseModel,
    pub master_seed: u64,
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.topology.n() != self.n {
            return Err(ShadowError::DimensionMismatch(format!(
                "topology n={} vs spec n={}",
                self.topology.n(),
                self.n
            )));
        }
        self.noise.validate(self.n)?;
        Ok(())
    }

    pub fn prepared_input(&self) -> Result<DenseState> {
        self.input.prepare(self.n, self.master_seed)
    }

    /// Record for shot `shot`; pure function of `(spec, shot)`.
    pub fn record(&self, input: &DenseState, shot: u64) -> Result<ShadowRecord> {
        let circuit = sample_circuit(
            self.n,
            self.depth,
            self.ensemble,
            &self.topology,
            &mut derive_rng(self.master_seed, Stream::Circuit, shot),
        )?;
        let mut shot_rng = derive_rng(self.master_seed, Stream::Shot, shot);
        let z = run_shot(input, &circuit, &self.noise, &mut shot_rng)?;
        Ok(ShadowRecord {
            circuit,
            z,
            shot_seed: shot,
        })
    }

    pub fn header(&self, shots: u64) -> RecordSetHeader {
        RecordSetHeader {
            n: self.n,
            depth: self.depth,
            ensemble: self.ensemble.tag().into(),
            topology_id: self.topology.id().into(),
            topology: self.topology.clone(),
            input_state: self.input.tag(),
            noise_digest: self.noise.digest(),
            master_seed: self.master_seed,
            shots,
        }
    }
}

/// Apply the sampled circuit with trajectory noise and measure.
///
/// Noise insertion: incoherent / two-qubit Pauli noise right after each
/// CNOT, gate-dependent single-qubit Pauli noise right after the gate
/// (skipping layer 0 when `first_layer_ideal`), readout flips on the
/// classical outcome.
pub fn run_shot<R: Rng>(
    input: &DenseState,
    circuit: &Circuit,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<usize> {
    if input.n() != circuit.n() {
        return Err(ShadowError::DimensionMismatch(format!(
            "input state n={} vs circuit n={}",
            input.n(),
            circuit.n()
        )));
    }
    let n = circuit.n();
    let mut state = input.clone();
    apply_single_layer_trajectory(&mut state, circuit, 0, noise, rng)?;
    for layer in 1..=circuit.depth() {
        for &(c, t) in circuit.topology().pairs_for_layer(layer) {
            state.apply_cnot(c, t);
            match &noise.two_qubit {
                TwoQubitNoise::None => {}
                TwoQubitNoise::Gue { gamma } => {
                    let u = incoherent_noise_unitary(*gamma, rng);
                    state.apply_2q(&u, c, t);
                }
                TwoQubitNoise::Pauli { .. } => {
                    let ch = noise.two_qubit_channel()?.expect("pauli branch");
                    let label = ch.sample_error(rng);
                    apply_pauli_error_2q(&mut state, label, c, t);
                }
            }
        }
        apply_single_layer_trajectory(&mut state, circuit, layer, noise, rng)?;
    }
    debug_assert!((state.norm_sqr() - 1.0).abs() < 1e-10);
    let z = state.sample_outcome(rng);
    Ok(apply_readout_flips(z, n, noise, rng))
}

fn apply_single_layer_trajectory<R: Rng>(
    state: &mut DenseState,
    circuit: &Circuit,
    layer: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<()> {
    let noisy_layer = !(layer == 0 && noise.first_layer_ideal);
    for (q, gate) in circuit.single_qubit_layer(layer).iter().enumerate() {
        state.apply_1q(gate, q);
        if noisy_layer {
            if let Some(ch) = gate_channel(circuit, noise, gate)? {
                let label = ch.sample_error(rng);
                apply_pauli_error_1q(state, label, q);
            }
        }
    }
    Ok(())
}

fn gate_channel(
    circuit: &Circuit,
    noise: &NoiseModel,
    gate: &crate::circuit::Gate1,
) -> Result<Option<crate::noise::PauliChannel>> {
    if noise.single_qubit_channels.is_empty() {
        return Ok(None);
    }
    match clifford_index_of(gate) {
        Some(idx) => noise.single_qubit_channel(idx),
        None => {
            if noise.single_qubit_channels.len() == 1 {
                // A single configured channel is gate-independent, so it
                // also applies to non-Clifford (Haar) gates.
                noise.single_qubit_channel(0)
            } else {
                Err(ShadowError::Unsupported(format!(
                    "gate-dependent single-qubit channels require the clifford1q ensemble, got {:?}",
                    circuit.ensemble()
                )))
            }
        }
    }
}

/// Fixed noise realizations for shot-free oracles: one unitary per CNOT in
/// application order.
#[derive(Debug, Clone, Default)]
pub struct FixedNoiseEvents {
    pub two_qubit_unitaries: Vec<crate::circuit::Gate2>,
}

/// Draw the noise realizations of one execution (GUE noise only).
pub fn sample_fixed_noise<R: Rng>(
    circuit: &Circuit,
    noise: &NoiseModel,
    rng: &mut R,
) -> FixedNoiseEvents {
    let mut events = FixedNoiseEvents::default();
    if let TwoQubitNoise::Gue { gamma } = noise.two_qubit {
        for layer in 1..=circuit.depth() {
            for _ in circuit.topology().pairs_for_layer(layer) {
                events
                    .two_qubit_unitaries
                    .push(incoherent_noise_unitary(gamma, rng));
            }
        }
    }
    events
}

/// Exact Born probabilities of the noisy execution (shot-free oracle).
///
/// Pauli channels are applied exactly (density-matrix path, n ≤ 8; branch
/// sums over at most 16 errors per noisy gate). Incoherent GUE noise needs
/// fixed realizations in `fixed`; averaging over realizations is the
/// caller's job.
pub fn outcome_distribution(
    input: &DenseState,
    circuit: &Circuit,
    noise: &NoiseModel,
    fixed: Option<&FixedNoiseEvents>,
) -> Result<Vec<f64>> {
    if input.n() != circuit.n() {
        return Err(ShadowError::DimensionMismatch(
            "outcome_distribution: input/circuit qubit counts differ".into(),
        ));
    }
    let n = circuit.n();
    let has_pauli = !noise.single_qubit_channels.is_empty()
        || matches!(noise.two_qubit, TwoQubitNoise::Pauli { .. });
    let gue = matches!(noise.two_qubit, TwoQubitNoise::Gue { .. });
    if gue && fixed.is_none() {
        return Err(ShadowError::InvalidConfig(
            "GUE noise needs fixed realizations for an exact distribution".into(),
        ));
    }

    let mut probs = if has_pauli {
        if n > 8 {
            return Err(ShadowError::SizeCap(format!(
                "exact Pauli-channel distribution at n={n}"
            )));
        }
        density_distribution(input, circuit, noise, fixed)?
    } else {
        if n > 12 {
            return Err(ShadowError::SizeCap(format!("outcome_distribution at n={n}")));
        }
        pure_distribution(input, circuit, fixed)?
    };
    apply_readout_confusion(&mut probs, n, &noise.readout_table(n));
    Ok(probs)
}

fn pure_distribution(
    input: &DenseState,
    circuit: &Circuit,
    fixed: Option<&FixedNoiseEvents>,
) -> Result<Vec<f64>> {
    let mut state = input.clone();
    let mut unitaries = fixed.map(|f| f.two_qubit_unitaries.iter());
    for (q, gate) in circuit.single_qubit_layer(0).iter().enumerate() {
        state.apply_1q(gate, q);
    }
    for layer in 1..=circuit.depth() {
        for &(c, t) in circuit.topology().pairs_for_layer(layer) {
            state.apply_cnot(c, t);
            if let Some(it) = unitaries.as_mut() {
                if let Some(u) = it.next() {
                    state.apply_2q(u, c, t);
                }
            }
        }
        for (q, gate) in circuit.single_qubit_layer(layer).iter().enumerate() {
            state.apply_1q(gate, q);
        }
    }
    Ok(state.probabilities())
}

fn density_distribution(
    input: &DenseState,
    circuit: &Circuit,
    noise: &NoiseModel,
    fixed: Option<&FixedNoiseEvents>,
) -> Result<Vec<f64>> {
    let mut rho = DensityMatrix::from_pure(input);
    let mut unitaries = fixed.map(|f| f.two_qubit_unitaries.iter());
    let two_qubit_channel = noise.two_qubit_channel().ok().flatten();
    apply_single_layer_exact(&mut rho, circuit, 0, noise)?;
    for layer in 1..=circuit.depth() {
        for &(c, t) in circuit.topology().pairs_for_layer(layer) {
            rho.apply_cnot(c, t);
            if let Some(ch) = &two_qubit_channel {
                let mut probs = [0.0; 16];
                probs.copy_from_slice(ch.probs());
                rho.apply_pauli_channel_2q(&probs, c, t);
            }
            if let Some(it) = unitaries.as_mut() {
                if let Some(u) = it.next() {
                    rho.apply_unitary_2q(u, c, t);
                }
            }
        }
        apply_single_layer_exact(&mut rho, circuit, layer, noise)?;
    }
    Ok(rho.diagonal_probabilities())
}

fn apply_single_layer_exact(
    rho: &mut DensityMatrix,
    circuit: &Circuit,
    layer: usize,
    noise: &NoiseModel,
) -> Result<()> {
    let noisy_layer = !(layer == 0 && noise.first_layer_ideal);
    for (q, gate) in circuit.single_qubit_layer(layer).iter().enumerate() {
        rho.apply_unitary_1q(gate, q);
        if noisy_layer {
            if let Some(ch) = gate_channel(circuit, noise, gate)? {
                let mut probs = [0.0; 4];
                probs.copy_from_slice(ch.probs());
                rho.apply_pauli_channel_1q(&probs, q);
            }
        }
    }
    Ok(())
}

/// JSONL header line of a record set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordSetHeader {
    pub n: usize,
    pub depth: usize,
    pub ensemble: String,
    pub topology_id: String,
    pub topology: Topology,
    pub input_state: String,
    pub noise_digest: String,
    pub master_seed: u64,
    pub shots: u64,
}

/// In-memory record set.
#[derive(Debug, Clone)]
pub struct RecordSet {
    pub header: RecordSetHeader,
    pub records: Vec<ShadowRecord>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    circuit: serde_json::Value,
    z: String,
    shot_seed: u64,
}

/// Generate shots `[start, end)` in parallel, in shot order.
pub fn generate_chunk(
    spec: &AcquisitionSpec,
    input: &DenseState,
    start: u64,
    end: u64,
) -> Result<Vec<ShadowRecord>> {
    (start..end)
        .into_par_iter()
        .map(|shot| spec.record(input, shot))
        .collect()
}

pub const DEFAULT_CHUNK: u64 = 4096;

/// Run the acquisition fully in memory.
pub fn acquire_records(spec: &AcquisitionSpec, shots: u64) -> Result<RecordSet> {
    spec.validate()?;
    let input = spec.prepared_input()?;
    let mut records = Vec::with_capacity(shots as usize);
    let mut start = 0;
    while start < shots {
        let end = (start + DEFAULT_CHUNK).min(shots);
        records.extend(generate_chunk(spec, &input, start, end)?);
        start = end;
    }
    Ok(RecordSet {
        header: spec.header(shots),
        records,
    })
}

/// Stream the acquisition to a JSONL file; returns the SHA-256 file digest.
///
/// Output bytes depend only on `(spec, shots)`, not on the thread count.
pub fn acquire_to_file(spec: &AcquisitionSpec, shots: u64, path: &Path) -> Result<String> {
    spec.validate()?;
    let input = spec.prepared_input()?;
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut write_line = |line: &str,
                          writer: &mut std::io::BufWriter<std::fs::File>,
                          hasher: &mut Sha256|
     -> Result<()> {
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        Ok(())
    };
    let header = serde_json::to_string(&spec.header(shots))?;
    write_line(&header, &mut writer, &mut hasher)?;
    let mut start = 0;
    while start < shots {
        let end = (start + DEFAULT_CHUNK).min(shots);
        for record in generate_chunk(spec, &input, start, end)? {
            let line = serde_json::to_string(&RecordLine {
                circuit: record.circuit.to_json(),
                z: record.z_string(),
                shot_seed: record.shot_seed,
            })?;
            write_line(&line, &mut writer, &mut hasher)?;
        }
        start = end;
    }
    writer.flush()?;
    Ok(crate::noise::hex_string(&hasher.finalize()))
}

/// Read a record set written by [`acquire_to_file`].
pub fn read_records(path: &Path) -> Result<RecordSet> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| ShadowError::InvalidConfig("record file is empty".into()))??;
    let header: RecordSetHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line)?;
        let circuit = Circuit::from_json(&raw.circuit, &header.topology)?;
        if circuit.n() != header.n {
            return Err(ShadowError::DimensionMismatch(
                "record does not match header qubit count".into(),
            ));
        }
        records.push(ShadowRecord {
            circuit,
            z: z_from_string(&raw.z)?,
            shot_seed: raw.shot_seed,
        });
    }
    Ok(RecordSet { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::hadamard_gate;
    use approx::assert_abs_diff_eq;

    fn zero_spec(n: usize, depth: usize, seed: u64) -> AcquisitionSpec {
        AcquisitionSpec {
            n,
            depth,
            ensemble: Ensemble::Clifford1q,
            topology: Topology::brickwork(n),
            input: InputState::Zero,
            noise: NoiseModel::noiseless(),
            master_seed: seed,
        }
    }

    #[test]
    fn identity_circuit_returns_all_zeros() {
        let topo = Topology::brickwork(3);
        let circuit = Circuit::identity(3, 0, topo);
        let input = DenseState::zero(3);
        let mut rng = derive_rng(0, Stream::Shot, 0);
        for _ in 0..20 {
            assert_eq!(
                run_shot(&input, &circuit, &NoiseModel::noiseless(), &mut rng).unwrap(),
                0
            );
        }
    }

    #[test]
    fn hadamard_outcomes_are_unbiased() {
        let topo = Topology::brickwork(1);
        let mut circuit = Circuit::identity(1, 0, topo);
        circuit.set_gate(0, 0, hadamard_gate());
        let input = DenseState::zero(1);
        let noise = NoiseModel::noiseless();
        let shots = 10_000;
        let mut ones = 0usize;
        for shot in 0..shots {
            let mut rng = derive_rng(1, Stream::Shot, shot);
            ones += run_shot(&input, &circuit, &noise, &mut rng).unwrap();
        }
        let f = ones as f64 / shots as f64;
        // 3σ with σ = 0.5/√shots = 0.005.
        assert!((f - 0.5).abs() < 0.015, "frequency {f}");
    }

    #[test]
    fn records_are_deterministic() {
        let spec = zero_spec(4, 2, 99);
        let input = spec.prepared_input().unwrap();
        let a = spec.record(&input, 17).unwrap();
        let b = spec.record(&input, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_acquisition_has_valid_header() {
        let spec = zero_spec(3, 1, 5);
        let set = acquire_records(&spec, 0).unwrap();
        assert_eq!(set.records.len(), 0);
        assert_eq!(set.header.shots, 0);
        assert_eq!(set.header.input_state, "zero");
    }

    #[test]
    fn identity_distribution_is_an_indicator() {
        let topo = Topology::brickwork(3);
        let circuit = Circuit::identity(3, 0, topo);
        let probs = outcome_distribution(
            &DenseState::zero(3),
            &circuit,
            &NoiseModel::noiseless(),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distributions_are_normalized_for_random_circuits() {
        let spec = zero_spec(4, 2, 3);
        let input = spec.prepared_input().unwrap();
        for i in 0..10 {
            let circuit = sample_circuit(
                4,
                2,
                Ensemble::Haar,
                &spec.topology,
                &mut derive_rng(3, Stream::Circuit, i),
            )
            .unwrap();
            let probs =
                outcome_distribution(&input, &circuit, &NoiseModel::noiseless(), None).unwrap();
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(probs.iter().all(|p| *p >= -1e-15));
        }
    }

    #[test]
    fn trajectories_match_exact_distribution() {
        // n=3, D=2, two-qubit Pauli noise + readout; 10^5 shots vs the
        // exact density-matrix path, 4σ per entry.
        let mut spec = zero_spec(3, 2, 12);
        spec.noise = NoiseModel {
            two_qubit: TwoQubitNoise::Pauli {
                probs: {
                    let mut p = vec![0.02 / 15.0; 16];
                    p[0] = 0.98;
                    p
                },
            },
            single_qubit_channels: vec![vec![0.95, 0.02, 0.02, 0.01]],
            readout: vec![(0.03, 0.01), (0.0, 0.0), (0.02, 0.02)],
            first_layer_ideal: true,
        };
        spec.validate().unwrap();
        let input = spec.prepared_input().unwrap();

        // One fixed circuit; trajectories re-sample only the noise.
        let circuit = sample_circuit(
            3,
            2,
            Ensemble::Clifford1q,
            &spec.topology,
            &mut derive_rng(12, Stream::Circuit, 0),
        )
        .unwrap();
        let exact = outcome_distribution(&input, &circuit, &spec.noise, None).unwrap();

        let shots = 100_000u64;
        let mut counts = vec![0usize; 8];
        for shot in 0..shots {
            let mut rng = derive_rng(12, Stream::Shot, shot);
            let z = run_shot(&input, &circuit, &spec.noise, &mut rng).unwrap();
            counts[z] += 1;
        }
        for z in 0..8 {
            let freq = counts[z] as f64 / shots as f64;
            let sigma = (exact[z] * (1.0 - exact[z]) / shots as f64)
                .sqrt()
                .max(1e-4);
            assert!(
                (freq - exact[z]).abs() < 4.0 * sigma,
                "z={z}: freq {freq} vs exact {} (σ={sigma})",
                exact[z]
            );
        }
    }

    #[test]
    fn file_round_trip_and_digest_determinism() {
        let dir = std::env::temp_dir().join("shadows_core_test_records");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.jsonl");
        let spec = zero_spec(3, 1, 21);
        let d1 = acquire_to_file(&spec, 50, &path).unwrap();
        let set = read_records(&path).unwrap();
        assert_eq!(set.records.len(), 50);
        assert_eq!(set.header.master_seed, 21);

        let in_memory = acquire_records(&spec, 50).unwrap();
        assert_eq!(in_memory.records, set.records);

        let path2 = dir.join("set2.jsonl");
        let d2 = acquire_to_file(&spec, 50, &path2).unwrap();
        assert_eq!(d1, d2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
