//! Noise models: per-execution incoherent GUE unitary noise on entangling
//! gates, gate-dependent Pauli channels, and readout confusion.

use crate::circuit::Gate2;
use crate::state::DenseState;
use crate::{C64, Result, ShadowError};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Pauli channel, diagonal in the Pauli transfer representation.
///
/// Error labels are base-4 digits (`0..4 = I,X,Y,Z`), two-qubit labels are
/// `4·p_first + p_second`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliChannel {
    probs: Vec<f64>,
}

impl PauliChannel {
    pub fn new(probs: Vec<f64>) -> Result<PauliChannel> {
        if probs.len() != 4 && probs.len() != 16 {
            return Err(ShadowError::InvalidConfig(format!(
                "Pauli channel needs 4 or 16 probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| *p < 0.0) {
            return Err(ShadowError::InvalidConfig(
                "Pauli channel probabilities must be nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ShadowError::InvalidConfig(format!(
                "Pauli channel probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(PauliChannel { probs })
    }

    pub fn identity(arity: usize) -> PauliChannel {
        let len = if arity == 1 { 4 } else { 16 };
        let mut probs = vec![0.0; len];
        probs[0] = 1.0;
        PauliChannel { probs }
    }

    pub fn depolarizing(arity: usize, p: f64) -> PauliChannel {
        let len = if arity == 1 { 4 } else { 16 };
        let mut probs = vec![p / (len as f64 - 1.0); len];
        probs[0] = 1.0 - p;
        PauliChannel { probs }
    }

    pub fn arity(&self) -> usize {
        if self.probs.len() == 4 {
            1
        } else {
            2
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_identity(&self) -> bool {
        self.probs[0] == 1.0
    }

    /// Sample one error label per shot (trajectory semantics).
    pub fn sample_error<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (label, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return label;
            }
        }
        self.probs.len() - 1
    }

    /// Diagonal of the Pauli transfer matrix: `λ_b = Σ_a p_a (±1)` with sign
    /// +1 iff the error `a` commutes with the Pauli `b`.
    pub fn transfer_diag(&self) -> Vec<f64> {
        let len = self.probs.len();
        (0..len)
            .map(|b| {
                self.probs
                    .iter()
                    .enumerate()
                    .map(|(a, p)| if paulis_commute(a, b, self.arity()) { *p } else { -*p })
                    .sum()
            })
            .collect()
    }
}

/// Whether base-4-encoded Pauli labels commute (arity 1 or 2).
pub fn paulis_commute(a: usize, b: usize, arity: usize) -> bool {
    let mut anti = 0;
    for q in 0..arity {
        let pa = (a >> (2 * (arity - 1 - q))) & 3;
        let pb = (b >> (2 * (arity - 1 - q))) & 3;
        if pa != 0 && pb != 0 && pa != pb {
            anti += 1;
        }
    }
    anti % 2 == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TwoQubitNoise {
    None,
    Gue { gamma: f64 },
    Pauli { probs: Vec<f64> },
}

/// Full noise configuration of a simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub two_qubit: TwoQubitNoise,
    /// Candidate single-qubit channels; a gate-dependent deterministic hash
    /// of the canonical Clifford index picks one per gate. Empty = none.
    #[serde(default)]
    pub single_qubit_channels: Vec<Vec<f64>>,
    /// Per-qubit `(p10, p01)` readout confusion. Empty = ideal readout.
    #[serde(default)]
    pub readout: Vec<(f64, f64)>,
    /// The robust protocol assumes the first single-qubit layer is ideal.
    pub first_layer_ideal: bool,
}

impl NoiseModel {
    pub fn noiseless() -> NoiseModel {
        NoiseModel {
            two_qubit: TwoQubitNoise::None,
            single_qubit_channels: Vec::new(),
            readout: Vec::new(),
            first_layer_ideal: true,
        }
    }

    pub fn gue(gamma: f64) -> NoiseModel {
        NoiseModel {
            two_qubit: TwoQubitNoise::Gue { gamma },
            ..NoiseModel::noiseless()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match &self.two_qubit {
            TwoQubitNoise::None => {}
            TwoQubitNoise::Gue { gamma } => {
                if !(0.0..=8.0).contains(gamma) {
                    return Err(ShadowError::InvalidConfig(format!(
                        "gamma = {gamma} outside [0, 8]"
                    )));
                }
            }
            TwoQubitNoise::Pauli { probs } => {
                let ch = PauliChannel::new(probs.clone())?;
                if ch.arity() != 2 {
                    return Err(ShadowError::InvalidConfig(
                        "two-qubit Pauli noise needs 16 probabilities".into(),
                    ));
                }
            }
        }
        for probs in &self.single_qubit_channels {
            let ch = PauliChannel::new(probs.clone())?;
            if ch.arity() != 1 {
                return Err(ShadowError::InvalidConfig(
                    "single-qubit channel needs 4 probabilities".into(),
                ));
            }
        }
        if !self.readout.is_empty() && self.readout.len() != n {
            return Err(ShadowError::InvalidConfig(format!(
                "readout table has {} qubits, circuit has {n}",
                self.readout.len()
            )));
        }
        for &(p10, p01) in &self.readout {
            if !(0.0..=1.0).contains(&p10) || !(0.0..=1.0).contains(&p01) {
                return Err(ShadowError::InvalidConfig(
                    "readout flip probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        matches!(self.two_qubit, TwoQubitNoise::None)
            && self.single_qubit_channels.is_empty()
            && self.readout.iter().all(|&(a, b)| a == 0.0 && b == 0.0)
    }

    /// All circuit noise is given by strictly local Pauli channels (the
    /// channel-level tensor-train oracle requires this).
    pub fn is_local_pauli(&self) -> bool {
        !matches!(self.two_qubit, TwoQubitNoise::Gue { .. })
    }

    pub fn two_qubit_channel(&self) -> Result<Option<PauliChannel>> {
        match &self.two_qubit {
            TwoQubitNoise::Pauli { probs } => Ok(Some(PauliChannel::new(probs.clone())?)),
            TwoQubitNoise::None => Ok(None),
            TwoQubitNoise::Gue { .. } => Err(ShadowError::Unsupported(
                "incoherent GUE noise is not a Pauli channel".into(),
            )),
        }
    }

    /// Gate-dependent channel for the single-qubit gate with canonical
    /// Clifford index `clifford_index`.
    pub fn single_qubit_channel(&self, clifford_index: usize) -> Result<Option<PauliChannel>> {
        if self.single_qubit_channels.is_empty() {
            return Ok(None);
        }
        let mut state = clifford_index as u64 ^ 0x5851_f42d_4c95_7f2d;
        let pick = (crate::splitmix64(&mut state) as usize) % self.single_qubit_channels.len();
        Ok(Some(PauliChannel::new(
            self.single_qubit_channels[pick].clone(),
        )?))
    }

    pub fn readout_pair(&self, qubit: usize) -> (f64, f64) {
        self.readout.get(qubit).copied().unwrap_or((0.0, 0.0))
    }

    /// Readout table padded to `n` qubits (for probability-vector oracles).
    pub fn readout_table(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|q| self.readout_pair(q)).collect()
    }

    /// Digest of the canonical JSON serialization, for provenance headers.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("noise model serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// GUE draw: Hermitian with real `N(0,1)` diagonal and complex off-diagonal
/// entries whose real and imaginary parts are `N(0, 1/2)`.
pub fn sample_gue<R: Rng>(dim: usize, rng: &mut R) -> Array2<C64> {
    let mut h = Array2::zeros((dim, dim));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        let d: f64 = rng.sample(StandardNormal);
        h[[i, i]] = C64::new(d, 0.0);
        for j in i + 1..dim {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let v = C64::new(re * s, im * s);
            h[[i, j]] = v;
            h[[j, i]] = v.conj();
        }
    }
    h
}

/// One realization of the incoherent noise unitary `exp(i γ H / 8)` with a
/// fresh GUE Hamiltonian.
pub fn incoherent_noise_unitary<R: Rng>(gamma: f64, rng: &mut R) -> Gate2 {
    let h = sample_gue(4, rng);
    let (vals, vecs) = h.eigh(UPLO::Lower).expect("4x4 Hermitian eigendecomposition");
    let mut u = [C64::new(0.0, 0.0); 16];
    for r in 0..4 {
        for c in 0..4 {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..4 {
                let phase = C64::from_polar(1.0, gamma * vals[k] / 8.0);
                acc += vecs[[r, k]] * phase * vecs[[c, k]].conj();
            }
            u[4 * r + c] = acc;
        }
    }
    u
}

/// Average gate infidelity of a unitary error `U` relative to the identity:
/// `r = (d² − |Tr U|²) / (d (d + 1))` with `d = 4`.
pub fn infidelity_of_unitary(u: &Gate2) -> Result<f64> {
    for i in 0..4 {
        for j in 0..4 {
            let mut ip = C64::new(0.0, 0.0);
            for k in 0..4 {
                ip += u[4 * k + i].conj() * u[4 * k + j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            if (ip.re - expect).abs() > 1e-8 || ip.im.abs() > 1e-8 {
                return Err(ShadowError::InvalidConfig(
                    "infidelity_of_unitary: input is not unitary".into(),
                ));
            }
        }
    }
    let tr: C64 = (0..4).map(|i| u[4 * i + i]).sum();
    let d = 4.0;
    Ok((d * d - tr.norm_sqr()) / (d * (d + 1.0)))
}

// Mean infidelity over a fixed set of GUE spectra; common random numbers
// keep the bisection monotone.
fn mean_infidelity(spectra: &[[f64; 4]], gamma: f64) -> f64 {
    let total: f64 = spectra
        .iter()
        .map(|vals| {
            let tr: C64 = vals
                .iter()
                .map(|&l| C64::from_polar(1.0, gamma * l / 8.0))
                .sum();
            (16.0 - tr.norm_sqr()) / 20.0
        })
        .sum();
    total / spectra.len() as f64
}

/// Strength parameter `γ` whose Monte-Carlo mean infidelity equals
/// `r_target`, by bisection over common GUE draws.
pub fn calibrate_gamma<R: Rng>(r_target: f64, samples: usize, rng: &mut R) -> Result<f64> {
    if !(0.0..0.8).contains(&r_target) {
        return Err(ShadowError::UnreachableTarget(format!(
            "r_target = {r_target} outside [0, 0.8)"
        )));
    }
    if r_target == 0.0 {
        return Ok(0.0);
    }
    let spectra: Vec<[f64; 4]> = (0..samples.max(16))
        .map(|_| {
            let h = sample_gue(4, rng);
            let (vals, _) = h.eigh(UPLO::Lower).expect("eigh");
            [vals[0], vals[1], vals[2], vals[3]]
        })
        .collect();
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    while mean_infidelity(&spectra, hi) < r_target {
        hi *= 1.5;
        if hi > 8.0 {
            return Err(ShadowError::UnreachableTarget(format!(
                "r_target = {r_target} not reachable for γ ≤ 8"
            )));
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_infidelity(&spectra, mid) < r_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Apply a sampled Pauli error to a statevector.
pub fn apply_pauli_error_1q(state: &mut DenseState, label: usize, qubit: usize) {
    if label != 0 {
        let sigma = crate::state::pauli_1q_dense(label);
        state.apply_1q(&sigma, qubit);
    }
}

pub fn apply_pauli_error_2q(state: &mut DenseState, label: usize, qa: usize, qb: usize) {
    apply_pauli_error_1q(state, (label >> 2) & 3, qa);
    apply_pauli_error_1q(state, label & 3, qb);
}

/// Flip outcome bits through the readout confusion, one qubit at a time.
pub fn apply_readout_flips<R: Rng>(z: usize, n: usize, model: &NoiseModel, rng: &mut R) -> usize {
    if model.readout.is_empty() {
        return z;
    }
    let mut out = z;
    for l in 0..n {
        let (p10, p01) = model.readout_pair(l);
        let bit = 1usize << (n - 1 - l);
        let flip_prob = if z & bit == 0 { p10 } else { p01 };
        if flip_prob > 0.0 && rng.random::<f64>() < flip_prob {
            out ^= bit;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{derive_rng, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gue_draws_are_hermitian_and_centered() {
        let mut rng = derive_rng(1, Stream::Shot, 0);
        let h = sample_gue(8, &mut rng);
        for i in 0..8 {
            for j in 0..8 {
                let diff = h[[i, j]] - h[[j, i]].conj();
                assert_eq!(diff, C64::new(0.0, 0.0));
            }
        }

        let draws = 10_000;
        let mut mean = Array2::<C64>::zeros((4, 4));
        for _ in 0..draws {
            mean += &sample_gue(4, &mut rng);
        }
        mean.mapv_inplace(|v| v / draws as f64);
        // Entrywise standard error is ≤ 1/√draws = 0.01; allow 5 of them.
        for v in mean.iter() {
            assert!(v.norm() < 0.05, "sample mean entry too large: {v}");
        }
    }

    #[test]
    fn gue_second_moment_matches_semicircle() {
        // For the chosen normalization E[Tr H²] = N², so (1/N²)·Tr H² has
        // mean 1, matching the second moment of the semicircle law after
        // rescaling eigenvalues by √N.
        let mut rng = derive_rng(2, Stream::Shot, 0);
        let dim = 256;
        let reps = 8;
        let mut acc = 0.0;
        for _ in 0..reps {
            let h = sample_gue(dim, &mut rng);
            let tr2: f64 = h.iter().map(|v| v.norm_sqr()).sum();
            acc += tr2 / (dim * dim) as f64;
        }
        let second_moment = acc / reps as f64;
        assert!(
            (second_moment - 1.0).abs() < 0.05,
            "second moment {second_moment} deviates from semicircle value 1"
        );
    }

    #[test]
    fn noise_unitary_examples() {
        let mut rng = derive_rng(3, Stream::Shot, 0);
        let u = incoherent_noise_unitary(0.0, &mut rng);
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u[4 * r + c].re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(u[4 * r + c].im, 0.0, epsilon = 1e-12);
            }
        }
        for i in 0..20 {
            let gamma = 0.1 + 1.9 * (i as f64) / 20.0;
            let u = incoherent_noise_unitary(gamma, &mut rng);
            infidelity_of_unitary(&u).expect("draws are unitary to 1e-12");
        }
    }

    #[test]
    fn infidelity_formula_examples() {
        let mut id = [C64::new(0.0, 0.0); 16];
        for i in 0..4 {
            id[4 * i + i] = C64::new(1.0, 0.0);
        }
        assert_abs_diff_eq!(infidelity_of_unitary(&id).unwrap(), 0.0, epsilon = 1e-15);

        // Traceless unitary: diag(1, 1, -1, -1) has trace 0.
        let mut u = id;
        u[10] = C64::new(-1.0, 0.0);
        u[15] = C64::new(-1.0, 0.0);
        assert_abs_diff_eq!(infidelity_of_unitary(&u).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn mean_infidelity_is_monotone_on_studied_range() {
        let mut rng = derive_rng(4, Stream::Shot, 0);
        let spectra: Vec<[f64; 4]> = (0..2000)
            .map(|_| {
                let h = sample_gue(4, &mut rng);
                let (vals, _) = h.eigh(UPLO::Lower).unwrap();
                [vals[0], vals[1], vals[2], vals[3]]
            })
            .collect();
        let grid: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
        let rs: Vec<f64> = grid.iter().map(|&g| mean_infidelity(&spectra, g)).collect();
        for w in rs.windows(2) {
            assert!(w[1] > w[0], "mean infidelity not monotone: {rs:?}");
        }
    }

    #[test]
    fn calibrated_gamma_reproduces_target() {
        let mut rng = derive_rng(5, Stream::Shot, 0);
        assert_eq!(calibrate_gamma(0.0, 100, &mut rng).unwrap(), 0.0);

        let gamma = calibrate_gamma(1e-3, 4000, &mut rng).unwrap();
        // Re-evaluate with independent draws.
        let mut rng2 = derive_rng(6, Stream::Shot, 1);
        let mut acc = 0.0;
        let reps = 20_000;
        for _ in 0..reps {
            let u = incoherent_noise_unitary(gamma, &mut rng2);
            acc += infidelity_of_unitary(&u).unwrap();
        }
        let r = acc / reps as f64;
        assert!(
            (r - 1e-3).abs() < 0.05e-3,
            "calibrated γ={gamma} gives r={r}, target 1e-3"
        );

        let gamma_hi = calibrate_gamma(1e-2, 4000, &mut rng).unwrap();
        assert!(gamma_hi > gamma);
    }

    #[test]
    fn pauli_channel_validation_and_transfer() {
        assert!(PauliChannel::new(vec![0.5, 0.5, 0.1, -0.1]).is_err());
        assert!(PauliChannel::new(vec![0.25; 3]).is_err());

        let id = PauliChannel::identity(1);
        assert_eq!(id.transfer_diag(), vec![1.0, 1.0, 1.0, 1.0]);

        // Phase flip: Z error with probability p attenuates X and Y.
        let p = 0.3;
        let ch = PauliChannel::new(vec![1.0 - p, 0.0, 0.0, p]).unwrap();
        let diag = ch.transfer_diag();
        assert_abs_diff_eq!(diag[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(diag[1], 1.0 - 2.0 * p, epsilon = 1e-15);
        assert_abs_diff_eq!(diag[2], 1.0 - 2.0 * p, epsilon = 1e-15);
        assert_abs_diff_eq!(diag[3], 1.0, epsilon = 1e-15);

        // Uniform two-qubit depolarizing: traceless sector shrinks by
        // 1 - 16p/15 for total error probability p.
        let p = 0.15;
        let ch = PauliChannel::depolarizing(2, p);
        let diag = ch.transfer_diag();
        assert_abs_diff_eq!(diag[0], 1.0, epsilon = 1e-12);
        for b in 1..16 {
            assert_abs_diff_eq!(diag[b], 1.0 - 16.0 * p / 15.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn readout_flip_forces_bit_when_certain() {
        let model = NoiseModel {
            readout: vec![(1.0, 0.0)],
            ..NoiseModel::noiseless()
        };
        let mut rng = derive_rng(7, Stream::Shot, 0);
        for _ in 0..32 {
            assert_eq!(apply_readout_flips(0, 1, &model, &mut rng), 1);
        }
    }

    #[test]
    fn noise_config_json_round_trip() {
        let model = NoiseModel {
            two_qubit: TwoQubitNoise::Gue { gamma: 0.15 },
            single_qubit_channels: vec![vec![0.9, 0.1, 0.0, 0.0]],
            readout: vec![(0.01, 0.02), (0.0, 0.0)],
            first_layer_ideal: true,
        };
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains("\"kind\":\"gue\""));
        let back: NoiseModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
        back.validate(2).unwrap();
    }
}
