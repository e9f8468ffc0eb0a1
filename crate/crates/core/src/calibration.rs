//! Calibration of the measurement frame: evaluate `φ_k(z,g)` on records,
//! average into an empirical spectrum `f̂`, and shot-free oracles for the
//! exact spectrum (circuit enumeration / Monte Carlo, plus a channel-level
//! tensor network for strictly local Pauli noise).

use crate::circuit::{
    cnot_dense, single_qubit_cliffords, two_qubit_cliffords, Boundary, Circuit, Ensemble, Gate1,
    Topology,
};
use crate::mpo::{cnot_layer_mpo, Mps};
use crate::noise::{NoiseModel, PauliChannel, TwoQubitNoise};
use crate::pauli::{pure_state_pauli_coeffs, walsh_hadamard};
use crate::simulator::{
    outcome_distribution, sample_fixed_noise, AcquisitionSpec, RecordSet, ShadowRecord,
};
use crate::state::{apply_readout_confusion, DenseState, DensityMatrix};
use crate::tt::{mals_fit, FitTarget, MalsOptions, MalsReport, TensorTrain};
use crate::{derive_rng, pairwise_sum, C64, Result, ShadowError, Stream};
use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;

/// Entries with `|f̂_k| < GUARD_MULTIPLIER · stderr_k` are flagged
/// non-invertible; inversion refuses them without an override.
pub const GUARD_MULTIPLIER: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Empirical,
    ExactOracle,
    Analytic,
    TtFit,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Empirical => "empirical",
            Provenance::ExactOracle => "exact_oracle",
            Provenance::Analytic => "analytic",
            Provenance::TtFit => "tt_fit",
        }
    }
}

#[derive(Debug, Clone)]
pub enum FrameRepr {
    Dense {
        values: Vec<f64>,
        stderr: Option<Vec<f64>>,
    },
    Tt(TensorTrain),
}

/// The coefficients `f_k` of the Pauli-diagonal frame operator, dense or as
/// a tensor train, with per-entry standard errors where available.
#[derive(Debug, Clone)]
pub struct FrameSpectrum {
    n: usize,
    repr: FrameRepr,
    provenance: Provenance,
}

impl FrameSpectrum {
    pub fn dense(
        n: usize,
        values: Vec<f64>,
        stderr: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> FrameSpectrum {
        assert_eq!(values.len(), 1 << n);
        FrameSpectrum {
            n,
            repr: FrameRepr::Dense { values, stderr },
            provenance,
        }
    }

    pub fn from_tt(tt: TensorTrain, provenance: Provenance) -> FrameSpectrum {
        FrameSpectrum {
            n: tt.n(),
            repr: FrameRepr::Tt(tt),
            provenance,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn value(&self, k: usize) -> f64 {
        match &self.repr {
            FrameRepr::Dense { values, .. } => values[k],
            FrameRepr::Tt(tt) => tt.entry(k),
        }
    }

    pub fn stderr(&self, k: usize) -> Option<f64> {
        match &self.repr {
            FrameRepr::Dense { stderr, .. } => stderr.as_ref().map(|s| s[k]),
            FrameRepr::Tt(_) => None,
        }
    }

    pub fn dense_values(&self) -> Result<Vec<f64>> {
        match &self.repr {
            FrameRepr::Dense { values, .. } => Ok(values.clone()),
            FrameRepr::Tt(tt) => tt.to_dense(),
        }
    }

    pub fn as_tt(&self) -> Option<&TensorTrain> {
        match &self.repr {
            FrameRepr::Tt(tt) => Some(tt),
            FrameRepr::Dense { .. } => None,
        }
    }

    /// Per-entry invertibility: `|f_k| ≥ GUARD_MULTIPLIER · stderr_k`
    /// (entries without a standard error only need to be nonzero).
    pub fn invertible_mask(&self) -> Result<Vec<bool>> {
        let values = self.dense_values()?;
        let mask = match &self.repr {
            FrameRepr::Dense {
                stderr: Some(se), ..
            } => values
                .iter()
                .zip(se)
                .map(|(v, s)| v.abs() >= GUARD_MULTIPLIER * s && v.abs() > 0.0)
                .collect(),
            _ => values.iter().map(|v| v.abs() > 0.0).collect(),
        };
        Ok(mask)
    }

    pub fn min_abs(&self) -> Result<f64> {
        Ok(self
            .dense_values()?
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Tensor-product frame of two independent sub-register frames.
    pub fn tensor_product(&self, other: &FrameSpectrum) -> Result<FrameSpectrum> {
        let a = self.dense_values()?;
        let b = other.dense_values()?;
        let n = self.n + other.n;
        let mut values = vec![0.0; 1 << n];
        for (ka, va) in a.iter().enumerate() {
            for (kb, vb) in b.iter().enumerate() {
                values[(ka << other.n) | kb] = va * vb;
            }
        }
        Ok(FrameSpectrum::dense(n, values, None, self.provenance))
    }

    /// CSV rows `k,f_hat,stderr,support`; bitstrings have qubit 0 leftmost.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let values = self.dense_values()?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k,f_hat,stderr,support")?;
        for (k, v) in values.iter().enumerate() {
            let se = self.stderr(k).unwrap_or(0.0);
            writeln!(
                out,
                "{},{},{},{}",
                crate::simulator::z_to_string(k, self.n),
                v,
                se,
                (k as u64).count_ones()
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FrameSpectrum> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| ShadowError::InvalidConfig("empty frame CSV".into()))??;
        if !header.starts_with("k,") {
            return Err(ShadowError::InvalidConfig(
                "frame CSV missing `k,...` header".into(),
            ));
        }
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        let mut n = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(ShadowError::InvalidConfig(format!(
                    "bad frame CSV row `{line}`"
                )));
            }
            n = fields[0].len();
            let k = crate::simulator::z_from_string(fields[0])?;
            let v: f64 = fields[1]
                .parse()
                .map_err(|e| ShadowError::InvalidConfig(format!("bad f_hat: {e}")))?;
            let se: f64 = fields[2]
                .parse()
                .map_err(|e| ShadowError::InvalidConfig(format!("bad stderr: {e}")))?;
            rows.push((k, v, se));
        }
        if rows.len() != (1 << n) {
            return Err(ShadowError::InvalidConfig(format!(
                "frame CSV has {} rows for n={n}",
                rows.len()
            )));
        }
        let mut values = vec![0.0; 1 << n];
        let mut stderr = vec![0.0; 1 << n];
        for (k, v, se) in rows {
            values[k] = v;
            stderr[k] = se;
        }
        Ok(FrameSpectrum::dense(
            n,
            values,
            Some(stderr),
            Provenance::Empirical,
        ))
    }
}

/// `φ_k(z,g)` for all `k`, from a circuit and outcome.
pub fn phi_dense_parts(circuit: &Circuit, z: usize) -> Result<Vec<f64>> {
    let n = circuit.n();
    if n > 20 {
        return Err(ShadowError::SizeCap(format!("phi_dense at n={n}")));
    }
    let mut chi = DenseState::basis_state(n, z);
    circuit.apply_adjoint(&mut chi);
    let mut probs = chi.probabilities();
    walsh_hadamard(&mut probs);
    Ok(probs)
}

/// `φ_k(z,g) = (Z_k | Π_{z,g})`: build `|χ⟩ = g†|z⟩` densely, then
/// Walsh-Hadamard the outcome probabilities.
pub fn phi_dense(record: &ShadowRecord) -> Result<Vec<f64>> {
    phi_dense_parts(&record.circuit, record.z)
}

// Orthonormal basis of Hermitian r×r matrices under Tr[A†B], as sparse
// (row, col, value) entries: diagonal units, then symmetric and
// antisymmetric pairs.
fn hermitian_basis_sparse(r: usize) -> Vec<Vec<(usize, usize, C64)>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(r * r);
    for i in 0..r {
        basis.push(vec![(i, i, C64::new(1.0, 0.0))]);
    }
    for i in 0..r {
        for j in i + 1..r {
            basis.push(vec![
                (i, j, C64::new(s, 0.0)),
                (j, i, C64::new(s, 0.0)),
            ]);
            basis.push(vec![
                (i, j, C64::new(0.0, s)),
                (j, i, C64::new(0.0, -s)),
            ]);
        }
    }
    basis
}

/// `φ(z,g)` as a tensor train with ranks at most `4^D`: the doubled
/// (bra/ket) network of the record, contracted per site with the
/// Walsh-Hadamard cores and expressed in a Hermitian bond basis so the
/// train is real. Open-boundary entangling layers only.
pub fn phi_tt(record: &ShadowRecord) -> Result<TensorTrain> {
    let circuit = &record.circuit;
    let n = circuit.n();
    if circuit.topology().boundary() != Boundary::Open {
        return Err(ShadowError::Unsupported(
            "phi_tt needs open-boundary entangling layers".into(),
        ));
    }
    // χ-MPS: adjoint circuit applied to |z⟩.
    let mut mps = Mps::basis_state(n, record.z);
    for layer in (1..=circuit.depth()).rev() {
        for (q, gate) in circuit.single_qubit_layer(layer).iter().enumerate() {
            mps.apply_1q(&crate::circuit::adjoint_1q(gate), q);
        }
        let pattern = (layer - 1) % circuit.topology().num_sublayers();
        let mpo = cnot_layer_mpo(circuit.topology(), pattern)?;
        mps.apply_mpo(&mpo)?;
    }
    for (q, gate) in circuit.single_qubit_layer(0).iter().enumerate() {
        mps.apply_1q(&crate::circuit::adjoint_1q(gate), q);
    }

    let mut cores = Vec::with_capacity(n);
    let mut left_basis = hermitian_basis_sparse(1);
    for core in mps.cores() {
        let (rb, re) = (core.shape()[0], core.shape()[2]);
        let right_basis = hermitian_basis_sparse(re);
        // Doubled core D[k][(a,b),(a',b')] = Σ_x (−1)^{k·x} A[a,x,a'] Ā[b,x,b'].
        let mut doubled = vec![Array2::<C64>::zeros((rb * rb, re * re)); 2];
        for a in 0..rb {
            for b in 0..rb {
                for ap in 0..re {
                    for bp in 0..re {
                        let mut plus = C64::new(0.0, 0.0);
                        let mut minus = C64::new(0.0, 0.0);
                        for x in 0..2 {
                            let v = core[[a, x, ap]] * core[[b, x, bp]].conj();
                            plus += v;
                            if x == 0 {
                                minus += v;
                            } else {
                                minus -= v;
                            }
                        }
                        doubled[0][[a * rb + b, ap * re + bp]] = plus;
                        doubled[1][[a * rb + b, ap * re + bp]] = minus;
                    }
                }
            }
        }
        // Conjugate by the sparse Hermitian bases: R[m,k,m'] = ⟨H_m, D[k](H_m')⟩.
        let mut real_core = Array3::<f64>::zeros((rb * rb, 2, re * re));
        for (m_l, hl) in left_basis.iter().enumerate() {
            for (m_r, hr) in right_basis.iter().enumerate() {
                for k in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for &(a, b, hv) in hl {
                        for &(ap, bp, hrv) in hr {
                            acc += hv.conj() * doubled[k][[a * rb + b, ap * re + bp]] * hrv;
                        }
                    }
                    debug_assert!(
                        acc.im.abs() < 1e-10,
                        "doubled core must be real in the Hermitian basis"
                    );
                    real_core[[m_l, k, m_r]] = acc.re;
                }
            }
        }
        cores.push(real_core);
        left_basis = right_basis;
    }
    TensorTrain::from_cores(cores)
}

fn check_calibration_input(tag: &str) -> Result<()> {
    if tag != "zero" {
        return Err(ShadowError::InvalidConfig(format!(
            "calibration requires the accurately prepared zero state, records were taken with `{tag}`"
        )));
    }
    Ok(())
}

/// Matrix of φ vectors, one row per record (for bootstraps and histograms).
pub fn phi_matrix(records: &[ShadowRecord], n: usize) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .map(phi_dense)
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((records.len(), 1 << n));
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != (1 << n) {
            return Err(ShadowError::DimensionMismatch(
                "record size differs from header".into(),
            ));
        }
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

pub(crate) fn mean_and_stderr_columns(phi: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = phi.dim();
    let stats: Vec<(f64, f64)> = (0..cols)
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = (0..rows).map(|i| phi[[i, j]]).collect();
            let m = pairwise_sum(&column) / rows as f64;
            let sq: Vec<f64> = column.iter().map(|v| (v - m) * (v - m)).collect();
            let var = if rows > 1 {
                pairwise_sum(&sq) / (rows as f64 - 1.0)
            } else {
                0.0
            };
            (m, (var / rows as f64).sqrt())
        })
        .collect();
    let mean = stats.iter().map(|s| s.0).collect();
    let stderr = stats.iter().map(|s| s.1).collect();
    (mean, stderr)
}

/// Empirical mean and standard error of `φ` over a record set (dense mode).
pub fn estimate_f_dense(set: &RecordSet) -> Result<FrameSpectrum> {
    check_calibration_input(&set.header.input_state)?;
    if set.records.is_empty() {
        return Err(ShadowError::EmptyRecords);
    }
    let phi = phi_matrix(&set.records, set.header.n)?;
    let (mean, stderr) = mean_and_stderr_columns(&phi);
    Ok(FrameSpectrum::dense(
        set.header.n,
        mean,
        Some(stderr),
        Provenance::Empirical,
    ))
}

/// Streaming variant: generates records chunk by chunk from the spec and
/// folds them into the mean without retaining them.
pub fn estimate_f_dense_streaming(spec: &AcquisitionSpec, shots: u64) -> Result<FrameSpectrum> {
    if spec.input != crate::simulator::InputState::Zero {
        return Err(ShadowError::InvalidConfig(
            "calibration requires the zero input state".into(),
        ));
    }
    if shots == 0 {
        return Err(ShadowError::EmptyRecords);
    }
    spec.validate()?;
    let input = spec.prepared_input()?;
    let dim = 1usize << spec.n;
    let chunk = crate::simulator::DEFAULT_CHUNK;
    let mut partial_sums: Vec<Vec<f64>> = Vec::new();
    let mut partial_sqs: Vec<Vec<f64>> = Vec::new();
    let mut start = 0u64;
    while start < shots {
        let end = (start + chunk).min(shots);
        let records = crate::simulator::generate_chunk(spec, &input, start, end)?;
        let rows: Vec<Vec<f64>> = records
            .par_iter()
            .map(phi_dense)
            .collect::<Result<Vec<_>>>()?;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            for (j, v) in row.into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        partial_sums.push(sum);
        partial_sqs.push(sq);
        start = end;
    }
    let total = shots as f64;
    let mut mean = vec![0.0; dim];
    let mut stderr = vec![0.0; dim];
    for j in 0..dim {
        let sums: Vec<f64> = partial_sums.iter().map(|p| p[j]).collect();
        let sqs: Vec<f64> = partial_sqs.iter().map(|p| p[j]).collect();
        let s = pairwise_sum(&sums);
        let s2 = pairwise_sum(&sqs);
        let m = s / total;
        let var = if shots > 1 {
            ((s2 - total * m * m) / (total - 1.0)).max(0.0)
        } else {
            0.0
        };
        mean[j] = m;
        stderr[j] = (var / total).sqrt();
    }
    Ok(FrameSpectrum::dense(
        spec.n,
        mean,
        Some(stderr),
        Provenance::Empirical,
    ))
}

/// TT-mode estimate: MALS fit of the recovery problem, initialized from the
/// ideal local-Clifford spectrum.
pub fn estimate_f_tt(set: &RecordSet, opts: &MalsOptions) -> Result<(FrameSpectrum, MalsReport)> {
    let dense = estimate_f_dense(set)?;
    let target = dense.dense_values()?;
    let init = ideal_local_tt(set.header.n);
    let (tt, report) = mals_fit(FitTarget::Dense(&target), &init, opts)?;
    Ok((FrameSpectrum::from_tt(tt, Provenance::TtFit), report))
}

/// Ideal local-Clifford D=0 spectrum `f_k = 3^{-|k|}` as a rank-1 train.
pub fn ideal_local_tt(n: usize) -> TensorTrain {
    TensorTrain::product(&vec![[1.0, 1.0 / 3.0]; n])
}

/// Analytic spectra: the `D = 0` local Clifford frame and the global
/// Clifford frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticEnsemble {
    LocalCliffordD0,
    GlobalClifford,
}

pub fn ideal_f(n: usize, ensemble: AnalyticEnsemble) -> Result<FrameSpectrum> {
    if n > 20 {
        return Err(ShadowError::SizeCap(format!("ideal_f dense at n={n}")));
    }
    let dim = 1usize << n;
    let values = match ensemble {
        AnalyticEnsemble::LocalCliffordD0 => (0..dim)
            .map(|k| 3f64.powi(-((k as u64).count_ones() as i32)))
            .collect(),
        AnalyticEnsemble::GlobalClifford => {
            let traceless = 1.0 / (dim as f64 + 1.0);
            (0..dim)
                .map(|k| if k == 0 { 1.0 } else { traceless })
                .collect()
        }
    };
    Ok(FrameSpectrum::dense(n, values, None, Provenance::Analytic))
}

/// Circuit ensemble for the shot-free oracles.
#[derive(Debug, Clone)]
pub enum FrameEnsemble<'a> {
    Layered {
        n: usize,
        depth: usize,
        ensemble: Ensemble,
        topology: &'a Topology,
    },
    /// Uniform over the full n-qubit Clifford group (n ≤ 2).
    GlobalClifford { n: usize },
}

/// Shot-free frame spectrum `f_k = E_g Σ_z p̃(z|g) φ_k(z,g)`.
///
/// Small Clifford ensembles are enumerated exactly (`circuit_samples = 0`);
/// otherwise `circuit_samples` circuits (and GUE realizations) are sampled
/// and the circuit-sampling standard error is reported per entry.
pub fn exact_f(
    ensemble: FrameEnsemble,
    noise: &NoiseModel,
    circuit_samples: u64,
    seed: u64,
) -> Result<FrameSpectrum> {
    match ensemble {
        FrameEnsemble::GlobalClifford { n } => exact_f_global(n, noise, circuit_samples, seed),
        FrameEnsemble::Layered {
            n,
            depth,
            ensemble,
            topology,
        } => {
            if n > 8 {
                return Err(ShadowError::SizeCap(format!("exact_f at n={n}")));
            }
            noise.validate(n)?;
            let enumerable =
                ensemble == Ensemble::Clifford1q && depth == 0 && n <= 2 && circuit_samples == 0;
            if enumerable {
                exact_f_enumerated_d0(n, noise)
            } else {
                if circuit_samples == 0 {
                    return Err(ShadowError::InvalidConfig(
                        "this ensemble cannot be enumerated; give circuit_samples > 0".into(),
                    ));
                }
                exact_f_sampled(n, depth, ensemble, topology, noise, circuit_samples, seed)
            }
        }
    }
}

// Σ_z p̃(z|g)·φ(z,g) for one fixed circuit (and fixed noise realization).
fn frame_term(
    circuit: &Circuit,
    noise: &NoiseModel,
    fixed: Option<&crate::simulator::FixedNoiseEvents>,
) -> Result<Vec<f64>> {
    let n = circuit.n();
    let dim = 1usize << n;
    let input = DenseState::zero(n);
    let probs = outcome_distribution(&input, circuit, noise, fixed)?;
    let mut acc = vec![0.0; dim];
    for (z, &pz) in probs.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let phi = phi_dense_parts(circuit, z)?;
        for (slot, v) in acc.iter_mut().zip(&phi) {
            *slot += pz * v;
        }
    }
    Ok(acc)
}

fn exact_f_enumerated_d0(n: usize, noise: &NoiseModel) -> Result<FrameSpectrum> {
    let table = single_qubit_cliffords();
    let topo = Topology::brickwork(n);
    let dim = 1usize << n;
    let combos = 24usize.pow(n as u32);
    let terms: Vec<Vec<f64>> = (0..combos)
        .into_par_iter()
        .map(|combo| {
            let mut circuit = Circuit::identity(n, 0, topo.clone());
            let mut c = combo;
            for q in 0..n {
                circuit.set_gate(0, q, table[c % 24]);
                c /= 24;
            }
            frame_term(&circuit, noise, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; dim];
    for term in &terms {
        for (slot, v) in acc.iter_mut().zip(term) {
            *slot += v;
        }
    }
    let values = acc.into_iter().map(|v| v / combos as f64).collect();
    Ok(FrameSpectrum::dense(
        n,
        values,
        Some(vec![0.0; dim]),
        Provenance::ExactOracle,
    ))
}

fn column_mean_stderr(terms: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let total = terms.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut stderr = vec![0.0; dim];
    for j in 0..dim {
        let col: Vec<f64> = terms.iter().map(|t| t[j]).collect();
        let m = pairwise_sum(&col) / total;
        let sq: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
        let var = if terms.len() > 1 {
            pairwise_sum(&sq) / (total - 1.0)
        } else {
            0.0
        };
        mean[j] = m;
        stderr[j] = (var / total).sqrt();
    }
    (mean, stderr)
}

fn exact_f_sampled(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    topology: &Topology,
    noise: &NoiseModel,
    circuit_samples: u64,
    seed: u64,
) -> Result<FrameSpectrum> {
    let dim = 1usize << n;
    let terms: Vec<Vec<f64>> = (0..circuit_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, Stream::Calibration, i);
            let circuit = crate::circuit::sample_circuit(n, depth, ensemble, topology, &mut rng)?;
            let fixed = sample_fixed_noise(&circuit, noise, &mut rng);
            frame_term(&circuit, noise, Some(&fixed))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, stderr) = column_mean_stderr(&terms, dim);
    Ok(FrameSpectrum::dense(
        n,
        mean,
        Some(stderr),
        Provenance::ExactOracle,
    ))
}

fn exact_f_global(
    n: usize,
    noise: &NoiseModel,
    circuit_samples: u64,
    seed: u64,
) -> Result<FrameSpectrum> {
    if n > 2 {
        return Err(ShadowError::SizeCap(format!(
            "global Clifford enumeration at n={n}"
        )));
    }
    if matches!(
        noise.two_qubit,
        TwoQubitNoise::Gue { .. } | TwoQubitNoise::Pauli { .. }
    ) || !noise.single_qubit_channels.is_empty()
    {
        return Err(ShadowError::Unsupported(
            "global Clifford frames support at most readout noise".into(),
        ));
    }
    let dim = 1usize << n;
    let readout = noise.readout_table(n);

    let term_for = |u: &[C64]| -> Vec<f64> {
        // p(z) = |⟨z|U|0⟩|² (+ readout); φ from |χ⟩ = U†|z⟩ = conj(row z).
        let mut probs: Vec<f64> = (0..dim).map(|z| u[z * dim].norm_sqr()).collect();
        apply_readout_confusion(&mut probs, n, &readout);
        let mut acc = vec![0.0; dim];
        for (z, &pz) in probs.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            let mut chi_probs: Vec<f64> = (0..dim).map(|x| u[z * dim + x].norm_sqr()).collect();
            walsh_hadamard(&mut chi_probs);
            for (slot, v) in acc.iter_mut().zip(&chi_probs) {
                *slot += pz * v;
            }
        }
        acc
    };

    if n == 1 {
        // The 1-qubit "global" Clifford group is the local one.
        let table = single_qubit_cliffords();
        let mut acc = vec![0.0; dim];
        for g in table {
            for (slot, v) in acc.iter_mut().zip(&term_for(g)) {
                *slot += v;
            }
        }
        let values = acc.into_iter().map(|v| v / table.len() as f64).collect();
        return Ok(FrameSpectrum::dense(
            n,
            values,
            Some(vec![0.0; dim]),
            Provenance::ExactOracle,
        ));
    }

    let table = two_qubit_cliffords();
    if circuit_samples == 0 {
        let terms: Vec<Vec<f64>> = table.par_iter().map(|g| term_for(g)).collect();
        let mut acc = vec![0.0; dim];
        for term in &terms {
            for (slot, v) in acc.iter_mut().zip(term) {
                *slot += v;
            }
        }
        let values = acc.into_iter().map(|v| v / table.len() as f64).collect();
        Ok(FrameSpectrum::dense(
            n,
            values,
            Some(vec![0.0; dim]),
            Provenance::ExactOracle,
        ))
    } else {
        let terms: Vec<Vec<f64>> = (0..circuit_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_rng(seed, Stream::Calibration, i);
                term_for(&table[rng.random_range(0..table.len())])
            })
            .collect();
        let (mean, stderr) = column_mean_stderr(&terms, dim);
        Ok(FrameSpectrum::dense(
            n,
            mean,
            Some(stderr),
            Provenance::ExactOracle,
        ))
    }
}

// ---------------------------------------------------------------------
// Channel-level tensor network for strictly local Pauli noise
// ---------------------------------------------------------------------

// Conjugation action of the CNOT on two-qubit Pauli labels (signs cancel
// between the bra and ket copies). Computed from dense matrices once.
fn cnot_label_map() -> [usize; 16] {
    let cnot = cnot_dense();
    let mul = |a: &[C64; 16], b: &[C64; 16]| {
        let mut out = [C64::new(0.0, 0.0); 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += a[4 * i + k] * b[4 * k + j];
                }
                out[4 * i + j] = acc;
            }
        }
        out
    };
    let kron2 = |a: &[C64; 4], b: &[C64; 4]| {
        let mut m = [C64::new(0.0, 0.0); 16];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        m[4 * (2 * i + k) + (2 * j + l)] = a[2 * i + j] * b[2 * k + l];
                    }
                }
            }
        }
        m
    };
    let mut map = [0usize; 16];
    for label in 0..16 {
        let sa = crate::state::pauli_1q_dense(label >> 2);
        let sb = crate::state::pauli_1q_dense(label & 3);
        let m = mul(&mul(&cnot, &kron2(&sa, &sb)), &cnot);
        let mut found = None;
        for out_label in 0..16 {
            let ta = crate::state::pauli_1q_dense(out_label >> 2);
            let tb = crate::state::pauli_1q_dense(out_label & 3);
            let target = kron2(&ta, &tb);
            let mut tr = C64::new(0.0, 0.0);
            for r in 0..4 {
                for c in 0..4 {
                    tr += target[4 * c + r].conj() * m[4 * c + r];
                }
            }
            if tr.norm() > 3.9 {
                found = Some(out_label);
                break;
            }
        }
        map[label] = found.expect("CNOT conjugation maps Paulis to Paulis");
    }
    map
}

// Single-qubit Clifford conjugation as a permutation of {I,X,Y,Z}.
fn clifford_label_permutation(gate: &Gate1) -> [usize; 4] {
    let mut perm = [0usize; 4];
    for p in 1..4 {
        let sigma = crate::state::pauli_1q_dense(p);
        let mut us = [C64::new(0.0, 0.0); 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..2 {
                    acc += gate[2 * i + k] * sigma[2 * k + j];
                }
                us[2 * i + j] = acc;
            }
        }
        let mut m = [C64::new(0.0, 0.0); 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..2 {
                    acc += us[2 * i + k] * gate[2 * j + k].conj();
                }
                m[2 * i + j] = acc;
            }
        }
        let mut found = None;
        for q in 1..4 {
            let tau = crate::state::pauli_1q_dense(q);
            let mut tr = C64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    tr += tau[2 * j + i].conj() * m[2 * j + i];
                }
            }
            if tr.norm() > 1.9 {
                found = Some(q);
                break;
            }
        }
        perm[p] = found.expect("Clifford conjugation maps Paulis to Paulis");
    }
    perm
}

// Noisy channel twirl on the 4-dim diagonal Pauli-transfer space:
// W[P', P] = E_gate[ 1{π_gate(P) = P'} · λ_gate(P') ].
fn noisy_twirl_matrix(ensemble: Ensemble, noise: &NoiseModel, ideal: bool) -> Result<Array2<f64>> {
    let mut w = Array2::zeros((4, 4));
    w[[0, 0]] = 1.0;
    match ensemble {
        Ensemble::Clifford1q => {
            let table = single_qubit_cliffords();
            for (idx, gate) in table.iter().enumerate() {
                let perm = clifford_label_permutation(gate);
                let lambda = if ideal {
                    vec![1.0; 4]
                } else {
                    match noise.single_qubit_channel(idx)? {
                        Some(ch) => ch.transfer_diag(),
                        None => vec![1.0; 4],
                    }
                };
                for p in 1..4 {
                    let pp = perm[p];
                    w[[pp, p]] += lambda[pp] / table.len() as f64;
                }
            }
        }
        Ensemble::Haar => {
            // The doubled Haar twirl decouples like the Clifford one, but
            // only for gate-independent noise.
            let lambda = if ideal || noise.single_qubit_channels.is_empty() {
                vec![1.0; 4]
            } else if noise.single_qubit_channels.len() == 1 {
                PauliChannel::new(noise.single_qubit_channels[0].clone())?.transfer_diag()
            } else {
                return Err(ShadowError::Unsupported(
                    "haar layers with gate-dependent channels have no channel-level network".into(),
                ));
            };
            for p in 1..4 {
                for pp in 1..4 {
                    w[[pp, p]] = lambda[pp] / 3.0;
                }
            }
        }
    }
    Ok(w)
}

// MPO factorization of the doubled entangling gate on the diagonal
// Pauli-transfer space (bond 4 for a bare CNOT layer), including an
// attached two-qubit Pauli channel with transfer diagonal `mu` and the
// pair orientation.
fn entangler_label_mpo(mu: &[f64; 16], reversed: bool) -> (Array4<f64>, Array4<f64>) {
    let map = cnot_label_map();
    let mut k = Array2::<f64>::zeros((16, 16));
    for (p_in, &p_out) in map.iter().enumerate() {
        // Site order (lo, hi); `reversed` means the control sits at hi.
        let (ci, ti) = (p_in >> 2, p_in & 3);
        let (co, to) = (p_out >> 2, p_out & 3);
        let (lo_in, hi_in, lo_out, hi_out) = if reversed {
            (ti, ci, to, co)
        } else {
            (ci, ti, co, to)
        };
        k[[lo_out * 4 + lo_in, hi_out * 4 + hi_in]] = mu[p_out];
    }
    let (u, s, vt) = {
        use ndarray_linalg::SVD;
        let (u, s, vt) = k.svd(true, true).expect("16x16 SVD");
        (u.unwrap(), s.to_vec(), vt.unwrap())
    };
    let rank = s
        .iter()
        .take_while(|&&x| x > 1e-13 * s[0].max(1e-300))
        .count()
        .max(1);
    let mut left = Array4::zeros((1, 4, 4, rank));
    let mut right = Array4::zeros((rank, 4, 4, 1));
    for r in 0..rank {
        let sq = s[r].sqrt();
        for po in 0..4 {
            for pi in 0..4 {
                left[[0, po, pi, r]] = u[[po * 4 + pi, r]] * sq;
                right[[r, po, pi, 0]] = vt[[r, po * 4 + pi]] * sq;
            }
        }
    }
    (left, right)
}

/// Exact frame spectrum under strictly local Pauli noise as a tensor train
/// (rank ≤ 4^D for single-qubit channels): per-qubit noisy channel twirls,
/// entangling layers acting on Pauli-diagonal channels, terminal dephasing
/// with readout attenuation. Requires an ideal (or gate-independent noisy)
/// first layer and adjacent open-boundary entangling pairs.
pub fn exact_f_tt_pauli_noise(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    topology: &Topology,
    noise: &NoiseModel,
) -> Result<TensorTrain> {
    topology.validate()?;
    if topology.n() != n {
        return Err(ShadowError::DimensionMismatch(
            "topology does not match n".into(),
        ));
    }
    if topology.boundary() != Boundary::Open {
        return Err(ShadowError::Unsupported(
            "channel-level network needs open-boundary layers".into(),
        ));
    }
    if !noise.is_local_pauli() {
        return Err(ShadowError::Unsupported(
            "channel-level network needs strictly local Pauli noise".into(),
        ));
    }
    if !noise.first_layer_ideal && noise.single_qubit_channels.len() > 1 {
        return Err(ShadowError::Unsupported(
            "first layer must be ideal or carry gate-independent noise".into(),
        ));
    }
    noise.validate(n)?;

    // State cores over (bond, k, channel label, bond).
    let mut cores: Vec<Array4<f64>> = (0..n)
        .map(|_| {
            let mut c = Array4::zeros((1, 2, 4, 1));
            c[[0, 0, 0, 0]] = 1.0; // k=0 → I
            c[[0, 1, 3, 0]] = 1.0; // k=1 → Z
            c
        })
        .collect();

    let apply_w = |core: &Array4<f64>, w: &Array2<f64>| -> Array4<f64> {
        let (rb, re) = (core.shape()[0], core.shape()[3]);
        let mut out = Array4::zeros((rb, 2, 4, re));
        for b in 0..rb {
            for k in 0..2 {
                for e in 0..re {
                    for pp in 0..4 {
                        let mut acc = 0.0;
                        for p in 0..4 {
                            acc += w[[pp, p]] * core[[b, k, p, e]];
                        }
                        out[[b, k, pp, e]] = acc;
                    }
                }
            }
        }
        out
    };

    // First-layer twirl (ideal, or gate-independent left noise).
    let w0 = noisy_twirl_matrix(ensemble, noise, noise.first_layer_ideal)?;
    for core in cores.iter_mut() {
        *core = apply_w(core, &w0);
    }

    let mu: [f64; 16] = match noise.two_qubit_channel()? {
        Some(ch) => {
            let mut out = [0.0; 16];
            out.copy_from_slice(&ch.transfer_diag());
            out
        }
        None => [1.0; 16],
    };
    let w_later = noisy_twirl_matrix(ensemble, noise, false)?;

    // Contract an entangler MPO core into the site (channel index only);
    // the MPO bond multiplies onto both sides of the site and the idle
    // side always has MPO bond 1.
    let apply_mpo_core = |core: &Array4<f64>, mc: &Array4<f64>| -> Array4<f64> {
        let (rb, re) = (core.shape()[0], core.shape()[3]);
        let (mb, me) = (mc.shape()[0], mc.shape()[3]);
        let mut out = Array4::zeros((rb * mb, 2, 4, re * me));
        for b in 0..rb {
            for m in 0..mb {
                for k in 0..2 {
                    for e in 0..re {
                        for f in 0..me {
                            for pp in 0..4 {
                                let mut acc = 0.0;
                                for p in 0..4 {
                                    acc += mc[[m, pp, p, f]] * core[[b, k, p, e]];
                                }
                                out[[m * rb + b, k, pp, f * re + e]] = acc;
                            }
                        }
                    }
                }
            }
        }
        out
    };

    for layer in 1..=depth {
        for &(c, t) in topology.pairs_for_layer(layer) {
            let (lo, hi) = (c.min(t), c.max(t));
            if hi != lo + 1 {
                return Err(ShadowError::Unsupported(
                    "channel-level network needs adjacent entangling pairs".into(),
                ));
            }
            let (left_core, right_core) = entangler_label_mpo(&mu, c > t);
            cores[lo] = apply_mpo_core(&cores[lo], &left_core);
            cores[hi] = apply_mpo_core(&cores[hi], &right_core);
        }
        for core in cores.iter_mut() {
            *core = apply_w(core, &w_later);
        }
    }

    // Terminal dephasing + readout: I → 1, Z → 1 − p10 − p01, X/Y → 0.
    let mut tt_cores = Vec::with_capacity(n);
    for (q, core) in cores.iter().enumerate() {
        let (p10, p01) = noise.readout_pair(q);
        let zval = 1.0 - p10 - p01;
        let (rb, re) = (core.shape()[0], core.shape()[3]);
        let mut out = Array3::zeros((rb, 2, re));
        for b in 0..rb {
            for k in 0..2 {
                for e in 0..re {
                    out[[b, k, e]] = core[[b, k, 0, e]] + zval * core[[b, k, 3, e]];
                }
            }
        }
        tt_cores.push(out);
    }
    TensorTrain::from_cores(tt_cores)
}

/// Bootstrap statistical floor of a dense empirical spectrum: the given
/// quantile, over resampled record sets, of the worst-case relative
/// deviation `max_{k≠0} |f*_k − f̂_k| / |f̂_k|` of the resampled mean from
/// the full-sample mean.
pub fn bootstrap_frame_means_quantile(
    phi: &Array2<f64>,
    mean: &[f64],
    replicates: usize,
    quantile: f64,
    seed: u64,
) -> f64 {
    let (rows, cols) = phi.dim();
    let inv = 1.0 / rows as f64;
    let mut devs: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = derive_rng(seed, Stream::Bootstrap, b as u64);
            let mut acc = vec![0.0; cols];
            for _ in 0..rows {
                let i = rng.random_range(0..rows);
                for (slot, v) in acc.iter_mut().zip(phi.row(i)) {
                    *slot += v;
                }
            }
            acc.iter()
                .zip(mean)
                .skip(1)
                .map(|(a, m)| (a * inv - m).abs() / m.abs().max(1e-300))
                .fold(0.0, f64::max)
        })
        .collect();
    devs.sort_by(|a, b| a.partial_cmp(b).expect("finite deviations"));
    let idx = ((replicates as f64 - 1.0) * quantile).round() as usize;
    devs[idx.min(replicates - 1)]
}

/// The empirical frame superoperator `E_g Σ_z |Π_{z,g})(Π̃_{z,g}|` in the
/// Frobenius-normalized Pauli basis, with per-entry Monte-Carlo standard
/// errors (dense oracle, n ≤ 3). Tests the invariance claim that an ideal
/// first layer makes the frame Pauli-diagonal and constant per irrep.
pub fn empirical_frame_superoperator(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    topology: &Topology,
    noise: &NoiseModel,
    circuit_samples: u64,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if n > 3 {
        return Err(ShadowError::SizeCap(format!(
            "dense frame superoperator at n={n}"
        )));
    }
    let dim = 1usize << n;
    let p4 = dim * dim;
    let samples: Vec<Array2<f64>> = (0..circuit_samples)
        .into_par_iter()
        .map(|i| -> Result<Array2<f64>> {
            let mut rng = derive_rng(seed, Stream::Calibration, i);
            let circuit = crate::circuit::sample_circuit(n, depth, ensemble, topology, &mut rng)?;
            let fixed = sample_fixed_noise(&circuit, noise, &mut rng);

            // (w_a | Π_{z,g}) for every z.
            let mut scratch = Vec::new();
            let pi_coeffs: Vec<Vec<f64>> = (0..dim)
                .map(|z| {
                    let mut chi = DenseState::basis_state(n, z);
                    circuit.apply_adjoint(&mut chi);
                    pure_state_pauli_coeffs(&chi, &mut scratch)
                })
                .collect();

            // (Π̃_{z,g}|w_b) = Tr[Π_z B(ω̃(w_b))]: evolve each Pauli basis
            // matrix through the noisy channel and read the diagonal.
            let mut sample = Array2::zeros((p4, p4));
            for b in 0..p4 {
                let w = crate::pauli::PauliString::from_index(
                    b,
                    n,
                    crate::pauli::PauliNorm::Frobenius,
                )
                .dense()?;
                let mut elems = vec![C64::new(0.0, 0.0); dim * dim];
                for r in 0..dim {
                    for c in 0..dim {
                        elems[r * dim + c] = w[[r, c]];
                    }
                }
                let mut rho = DensityMatrix::from_parts(n, elems);
                evolve_matrix_through_noisy_circuit(&mut rho, &circuit, noise, &fixed)?;
                let mut diag: Vec<f64> = (0..dim)
                    .map(|z| rho.elements()[z * dim + z].re)
                    .collect();
                apply_readout_confusion(&mut diag, n, &noise.readout_table(n));
                for (z, &qz) in diag.iter().enumerate() {
                    if qz == 0.0 {
                        continue;
                    }
                    for a in 0..p4 {
                        sample[[a, b]] += pi_coeffs[z][a] * qz;
                    }
                }
            }
            Ok(sample)
        })
        .collect::<Result<Vec<_>>>()?;

    let total = circuit_samples as f64;
    let mut mean = Array2::zeros((p4, p4));
    for s in &samples {
        mean += s;
    }
    mean.mapv_inplace(|v| v / total);
    let mut stderr = Array2::zeros((p4, p4));
    for s in &samples {
        let d = s - &mean;
        stderr += &d.mapv(|v| v * v);
    }
    stderr.mapv_inplace(|v| (v / (total * (total - 1.0).max(1.0))).sqrt());
    Ok((mean, stderr))
}

// Forward-evolve an arbitrary matrix through the noisy circuit (exact
// channels; fixed GUE realizations).
fn evolve_matrix_through_noisy_circuit(
    rho: &mut DensityMatrix,
    circuit: &Circuit,
    noise: &NoiseModel,
    fixed: &crate::simulator::FixedNoiseEvents,
) -> Result<()> {
    let mut unitaries = fixed.two_qubit_unitaries.iter();
    let two_qubit_channel = noise.two_qubit_channel().ok().flatten();
    apply_layer_to_matrix(rho, circuit, 0, noise)?;
    for layer in 1..=circuit.depth() {
        for &(c, t) in circuit.topology().pairs_for_layer(layer) {
            rho.apply_cnot(c, t);
            if let Some(ch) = &two_qubit_channel {
                let mut probs = [0.0; 16];
                probs.copy_from_slice(ch.probs());
                rho.apply_pauli_channel_2q(&probs, c, t);
            }
            if let Some(u) = unitaries.next() {
                rho.apply_unitary_2q(u, c, t);
            }
        }
        apply_layer_to_matrix(rho, circuit, layer, noise)?;
    }
    Ok(())
}

fn apply_layer_to_matrix(
    rho: &mut DensityMatrix,
    circuit: &Circuit,
    layer: usize,
    noise: &NoiseModel,
) -> Result<()> {
    let noisy_layer = !(layer == 0 && noise.first_layer_ideal);
    for (q, gate) in circuit.single_qubit_layer(layer).iter().enumerate() {
        rho.apply_unitary_1q(gate, q);
        if noisy_layer && !noise.single_qubit_channels.is_empty() {
            let ch = match crate::circuit::clifford_index_of(gate) {
                Some(idx) => noise.single_qubit_channel(idx)?,
                None if noise.single_qubit_channels.len() == 1 => noise.single_qubit_channel(0)?,
                None => {
                    return Err(ShadowError::Unsupported(
                        "gate-dependent channels need clifford1q gates".into(),
                    ))
                }
            };
            if let Some(ch) = ch {
                let mut probs = [0.0; 4];
                probs.copy_from_slice(ch.probs());
                rho.apply_pauli_channel_1q(&probs, q);
            }
        }
    }
    Ok(())
}
