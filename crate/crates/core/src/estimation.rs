//! Linear shadow estimation with mitigated or unmitigated dual frames, and
//! the exact bias measures of Pauli-diagonal frames.

use crate::calibration::FrameSpectrum;
use crate::pauli::{
    expand_pattern_to_paulis, irrep_label, pauli_expectation, pure_state_pauli_coeffs,
    PauliString,
};
use crate::simulator::ShadowRecord;
use crate::state::DenseState;
use crate::{pairwise_sum, C64, Result, ShadowError};
use rayon::prelude::*;

/// Observable of a linear estimation task: a Pauli sum in the
/// unit-operator-norm convention, or a pure target state `O = |ψ⟩⟨ψ|`.
#[derive(Debug, Clone)]
pub enum Observable {
    PauliSum(Vec<(f64, PauliString)>),
    PureTarget(DenseState),
}

impl Observable {
    pub fn identity(n: usize) -> Observable {
        Observable::PauliSum(vec![(
            1.0,
            PauliString::from_index(0, n, crate::pauli::PauliNorm::UnitOperator),
        )])
    }

    pub fn single_pauli(p: PauliString) -> Observable {
        Observable::PauliSum(vec![(1.0, p)])
    }

    pub fn n(&self) -> Result<usize> {
        match self {
            Observable::PauliSum(terms) => {
                let n = terms
                    .first()
                    .ok_or_else(|| {
                        ShadowError::InvalidConfig("empty Pauli sum observable".into())
                    })?
                    .1
                    .n();
                if terms.iter().any(|(c, p)| p.n() != n || !c.is_finite()) {
                    return Err(ShadowError::InvalidConfig(
                        "inconsistent Pauli sum observable".into(),
                    ));
                }
                Ok(n)
            }
            Observable::PureTarget(state) => Ok(state.n()),
        }
    }
}

/// Whether flagged non-invertible sectors abort the estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionPolicy {
    Strict,
    Override,
}

/// Point estimate with its standard error and provenance.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub shots: u64,
    pub frame_tag: String,
}

/// Mean (default, as in the protocol) or median-of-means (not part of the
/// protocol; offered for heavy-tail robustness).
#[derive(Debug, Clone, Copy)]
pub enum Aggregation {
    Mean,
    MedianOfMeans { batches: usize },
}

/// An observable contracted with the inverse frame, ready for fast
/// per-record evaluation.
pub struct PreparedEstimator {
    n: usize,
    kind: PreparedKind,
    frame_tag: String,
}

enum PreparedKind {
    /// `(c_a / f_{k(a)}, O_a)` per term.
    PauliTerms(Vec<(f64, PauliString)>),
    /// `u_a = (ψψ|w_a) / f_{k(a)}` over all 4^n Pauli strings.
    PureWeights(Vec<f64>),
}

/// Contract `obs` with `f⁻¹`: checks the invertibility guard on every
/// irrep sector the observable touches.
pub fn prepare_estimator(
    obs: &Observable,
    frame: &FrameSpectrum,
    policy: InversionPolicy,
) -> Result<PreparedEstimator> {
    let n = obs.n()?;
    if frame.n() != n {
        return Err(ShadowError::DimensionMismatch(format!(
            "observable has n={n}, frame n={}",
            frame.n()
        )));
    }
    let values = frame.dense_values()?;
    let mask = frame.invertible_mask()?;
    let guard = |k: usize| -> Result<f64> {
        if !mask[k] && policy == InversionPolicy::Strict {
            return Err(ShadowError::NonInvertibleSector(
                crate::simulator::z_to_string(k, n),
            ));
        }
        let v = values[k];
        if v == 0.0 {
            return Err(ShadowError::NonInvertibleSector(format!(
                "{} (exactly zero)",
                crate::simulator::z_to_string(k, n)
            )));
        }
        Ok(1.0 / v)
    };
    let kind = match obs {
        Observable::PauliSum(terms) => {
            let mut prepared = Vec::with_capacity(terms.len());
            for (c, p) in terms {
                let k = irrep_label(p).index();
                prepared.push((c * guard(k)?, p.with_norm(crate::pauli::PauliNorm::UnitOperator)));
            }
            PreparedKind::PauliTerms(prepared)
        }
        Observable::PureTarget(psi) => {
            // The projector touches every sector.
            let mut inv = vec![0.0; 1 << n];
            for (k, slot) in inv.iter_mut().enumerate() {
                *slot = guard(k)?;
            }
            let mut scratch = Vec::new();
            let cpsi = pure_state_pauli_coeffs(psi, &mut scratch);
            let inv_paulis = expand_pattern_to_paulis(&inv, n);
            let weights = cpsi
                .iter()
                .zip(&inv_paulis)
                .map(|(c, i)| c * i)
                .collect();
            PreparedKind::PureWeights(weights)
        }
    };
    Ok(PreparedEstimator {
        n,
        kind,
        frame_tag: frame.provenance().tag().into(),
    })
}

/// `õ(z,g) = (O | S̃^{-1} | Π_{z,g})` for one record.
pub fn eval_prepared(
    prep: &PreparedEstimator,
    record: &ShadowRecord,
    scratch: &mut Vec<C64>,
) -> Result<f64> {
    if record.circuit.n() != prep.n {
        return Err(ShadowError::DimensionMismatch(
            "record does not match the prepared observable".into(),
        ));
    }
    let mut chi = DenseState::basis_state(prep.n, record.z);
    record.circuit.apply_adjoint(&mut chi);
    match &prep.kind {
        PreparedKind::PauliTerms(terms) => {
            let mut acc = 0.0;
            for (w, p) in terms {
                acc += w * pauli_expectation(&chi, p)?;
            }
            Ok(acc)
        }
        PreparedKind::PureWeights(weights) => {
            let cchi = pure_state_pauli_coeffs(&chi, scratch);
            Ok(weights
                .iter()
                .zip(&cchi)
                .map(|(w, c)| w * c)
                .sum())
        }
    }
}

/// Single-record dual-frame evaluation (convenience wrapper; batch work
/// should prepare the estimator once).
pub fn dual_eval(
    obs: &Observable,
    record: &ShadowRecord,
    frame: &FrameSpectrum,
) -> Result<f64> {
    let prep = prepare_estimator(obs, frame, InversionPolicy::Strict)?;
    let mut scratch = Vec::new();
    eval_prepared(&prep, record, &mut scratch)
}

/// Empirical mean (or median-of-means) of the dual-frame estimator over a
/// record set.
pub fn estimate(
    obs: &Observable,
    records: &[ShadowRecord],
    frame: &FrameSpectrum,
    policy: InversionPolicy,
    aggregation: Aggregation,
) -> Result<Estimate> {
    if records.is_empty() {
        return Err(ShadowError::EmptyRecords);
    }
    let prep = prepare_estimator(obs, frame, policy)?;
    let values: Vec<f64> = records
        .par_iter()
        .map_init(Vec::new, |scratch, record| {
            eval_prepared(&prep, record, scratch)
        })
        .collect::<Result<Vec<_>>>()?;
    let shots = records.len() as u64;
    match aggregation {
        Aggregation::Mean => {
            let mean = pairwise_sum(&values) / shots as f64;
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = if shots > 1 {
                pairwise_sum(&sq) / (shots as f64 - 1.0)
            } else {
                0.0
            };
            Ok(Estimate {
                value: mean,
                stderr: (var / shots as f64).sqrt(),
                shots,
                frame_tag: prep.frame_tag,
            })
        }
        Aggregation::MedianOfMeans { batches } => {
            let b = batches.max(1).min(values.len());
            let batch_len = values.len() / b;
            let mut means: Vec<f64> = (0..b)
                .map(|i| {
                    let lo = i * batch_len;
                    let hi = if i == b - 1 { values.len() } else { lo + batch_len };
                    pairwise_sum(&values[lo..hi]) / (hi - lo) as f64
                })
                .collect();
            means.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let median = if b % 2 == 1 {
                means[b / 2]
            } else {
                0.5 * (means[b / 2 - 1] + means[b / 2])
            };
            let mean_of_means = pairwise_sum(&means) / b as f64;
            let sq: Vec<f64> = means
                .iter()
                .map(|m| (m - mean_of_means) * (m - mean_of_means))
                .collect();
            let stderr = if b > 1 {
                (pairwise_sum(&sq) / (b as f64 - 1.0) / b as f64).sqrt()
            } else {
                0.0
            };
            Ok(Estimate {
                value: median,
                stderr,
                shots,
                frame_tag: format!("{}:mom{b}", prep.frame_tag),
            })
        }
    }
}

fn ratio_deviation(f_ideal: &FrameSpectrum, f_noisy: &FrameSpectrum, k: usize) -> Result<f64> {
    let fi = f_ideal.value(k);
    if fi == 0.0 {
        return Err(ShadowError::NonInvertibleSector(format!(
            "ideal frame vanishes at {}",
            crate::simulator::z_to_string(k, f_ideal.n())
        )));
    }
    Ok((1.0 - f_noisy.value(k) / fi).abs())
}

/// Worst-case bias over single Pauli observables,
/// `max_{k≠0} |1 − f̃_k/f_k| = ‖I − S^{-1}S̃‖_∞` for Pauli-diagonal frames.
pub fn worst_case_bias(f_ideal: &FrameSpectrum, f_noisy: &FrameSpectrum) -> Result<f64> {
    if f_ideal.n() != f_noisy.n() {
        return Err(ShadowError::DimensionMismatch(
            "frames of different sizes".into(),
        ));
    }
    let mut worst = 0.0f64;
    for k in 1..(1usize << f_ideal.n()) {
        worst = worst.max(ratio_deviation(f_ideal, f_noisy, k)?);
    }
    Ok(worst)
}

/// Worst-case bias restricted to Pauli supports of size `ps`.
pub fn worst_case_bias_by_support(
    f_ideal: &FrameSpectrum,
    f_noisy: &FrameSpectrum,
    ps: u32,
) -> Result<f64> {
    if f_ideal.n() != f_noisy.n() {
        return Err(ShadowError::DimensionMismatch(
            "frames of different sizes".into(),
        ));
    }
    if ps == 0 {
        return ratio_deviation(f_ideal, f_noisy, 0);
    }
    let mut worst: Option<f64> = None;
    for k in 1..(1usize << f_ideal.n()) {
        if (k as u64).count_ones() != ps {
            continue;
        }
        let dev = ratio_deviation(f_ideal, f_noisy, k)?;
        worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
    }
    worst.ok_or_else(|| {
        ShadowError::InvalidConfig(format!("no irrep label of weight {ps} at this n"))
    })
}

/// Exact estimation bias `|(O|ϱ) − (O|S^{-1}S̃|ϱ)|` of unmitigated
/// estimation, via the diagonal frame ratio on the Pauli coefficients.
pub fn bias_of_estimation(
    obs: &Observable,
    state: &DenseState,
    f_ideal: &FrameSpectrum,
    f_noisy: &FrameSpectrum,
) -> Result<f64> {
    let n = obs.n()?;
    if state.n() != n || f_ideal.n() != n || f_noisy.n() != n {
        return Err(ShadowError::DimensionMismatch(
            "bias_of_estimation inputs disagree on n".into(),
        ));
    }
    let mut scratch = Vec::new();
    let crho = pure_state_pauli_coeffs(state, &mut scratch);
    let sqrt_d = ((1usize << n) as f64).sqrt();
    match obs {
        Observable::PauliSum(terms) => {
            let mut acc = 0.0;
            for (c, p) in terms {
                let k = irrep_label(p).index();
                let fi = f_ideal.value(k);
                if fi == 0.0 {
                    return Err(ShadowError::NonInvertibleSector(
                        crate::simulator::z_to_string(k, n),
                    ));
                }
                let ratio = f_noisy.value(k) / fi;
                // (O_a|ϱ) = √d (w_a|ϱ).
                acc += c * sqrt_d * crho[p.index()] * (1.0 - ratio);
            }
            Ok(acc.abs())
        }
        Observable::PureTarget(psi) => {
            let mut scratch2 = Vec::new();
            let cpsi = pure_state_pauli_coeffs(psi, &mut scratch2);
            let mut acc = 0.0;
            for (a, (cp, cr)) in cpsi.iter().zip(&crho).enumerate() {
                let k = crate::pauli::pattern_of_pauli_index(a, n);
                let fi = f_ideal.value(k);
                if fi == 0.0 {
                    return Err(ShadowError::NonInvertibleSector(
                        crate::simulator::z_to_string(k, n),
                    ));
                }
                acc += cp * cr * (1.0 - f_noisy.value(k) / fi);
            }
            Ok(acc.abs())
        }
    }
}

/// An eigenstate of the Pauli string `p` (any unit eigenvector of the +1
/// eigenspace), for the bias saturation check.
pub fn pauli_eigenstate(p: &PauliString) -> Result<DenseState> {
    let n = p.n();
    let dim = 1usize << n;
    let dense = p.with_norm(crate::pauli::PauliNorm::UnitOperator).dense()?;
    // Project a few basis states onto the +1 eigenspace until one sticks.
    for seed in 0..dim {
        let mut v: Vec<C64> = (0..dim)
            .map(|r| dense[[r, seed]] * 0.5)
            .collect();
        v[seed] += C64::new(0.5, 0.0);
        let norm: f64 = v.iter().map(|a| a.norm_sqr()).sum();
        if norm > 1e-6 {
            let s = 1.0 / norm.sqrt();
            let amps = v.into_iter().map(|a| a * s).collect();
            return DenseState::from_amplitudes(amps);
        }
    }
    Err(ShadowError::InvalidConfig(
        "Pauli string has no +1 eigenvector?".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{ideal_f, AnalyticEnsemble, FrameSpectrum, Provenance};
    use crate::circuit::{Circuit, Topology};
    use approx::assert_abs_diff_eq;

    fn record_with_identity(n: usize, z: usize) -> ShadowRecord {
        ShadowRecord {
            circuit: Circuit::identity(n, 0, Topology::brickwork(n)),
            z,
            shot_seed: 0,
        }
    }

    #[test]
    fn dual_eval_examples() {
        let f = ideal_f(1, AnalyticEnsemble::LocalCliffordD0).unwrap();
        let z_obs = Observable::single_pauli(PauliString::parse("Z").unwrap());
        let v0 = dual_eval(&z_obs, &record_with_identity(1, 0), &f).unwrap();
        assert_abs_diff_eq!(v0, 3.0, epsilon = 1e-12);
        let v1 = dual_eval(&z_obs, &record_with_identity(1, 1), &f).unwrap();
        assert_abs_diff_eq!(v1, -3.0, epsilon = 1e-12);

        // The identity observable evaluates to 1 on every record for any
        // trace-preserving frame.
        let f3 = ideal_f(3, AnalyticEnsemble::LocalCliffordD0).unwrap();
        let id = Observable::identity(3);
        for z in [0usize, 3, 7] {
            let v = dual_eval(&id, &record_with_identity(3, z), &f3).unwrap();
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_target_path_matches_pauli_sum_path() {
        // For O = |ψ⟩⟨ψ| expanded explicitly in Paulis, both paths agree.
        let n = 3;
        let mut rng = crate::derive_rng(8, crate::Stream::Input, 1);
        let psi = DenseState::random_haar(n, &mut rng);
        let f = ideal_f(n, AnalyticEnsemble::LocalCliffordD0).unwrap();

        let mut scratch = Vec::new();
        let cpsi = pure_state_pauli_coeffs(&psi, &mut scratch);
        let sqrt_d = ((1usize << n) as f64).sqrt();
        let terms: Vec<(f64, PauliString)> = cpsi
            .iter()
            .enumerate()
            .map(|(a, c)| {
                (
                    c / sqrt_d,
                    PauliString::from_index(a, n, crate::pauli::PauliNorm::UnitOperator),
                )
            })
            .collect();
        let as_sum = Observable::PauliSum(terms);
        let as_target = Observable::PureTarget(psi);

        let spec = crate::simulator::AcquisitionSpec {
            n,
            depth: 1,
            ensemble: crate::circuit::Ensemble::Haar,
            topology: Topology::brickwork(n),
            input: crate::simulator::InputState::Zero,
            noise: crate::noise::NoiseModel::noiseless(),
            master_seed: 4,
        };
        let input = spec.prepared_input().unwrap();
        for shot in 0..5 {
            let record = spec.record(&input, shot).unwrap();
            let a = dual_eval(&as_sum, &record, &f).unwrap();
            let b = dual_eval(&as_target, &record, &f).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn worst_case_bias_examples() {
        let f = ideal_f(3, AnalyticEnsemble::LocalCliffordD0).unwrap();
        assert_abs_diff_eq!(worst_case_bias(&f, &f).unwrap(), 0.0, epsilon = 1e-15);

        let eps = 0.05;
        let scaled: Vec<f64> = f
            .dense_values()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(k, v)| if k == 0 { *v } else { v * (1.0 - eps) })
            .collect();
        let noisy = FrameSpectrum::dense(3, scaled, None, Provenance::Analytic);
        assert_abs_diff_eq!(worst_case_bias(&f, &noisy).unwrap(), eps, epsilon = 1e-12);

        // Support restriction: PS = 0 gives 0 for trace preservation.
        assert_abs_diff_eq!(
            worst_case_bias_by_support(&f, &noisy, 0).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // Uniform deviation: every support saturates the unrestricted value.
        assert_abs_diff_eq!(
            worst_case_bias_by_support(&f, &noisy, 3).unwrap(),
            eps,
            epsilon = 1e-12
        );
        assert!(worst_case_bias_by_support(&f, &noisy, 5).is_err());
    }

    #[test]
    fn bias_saturation_on_a_single_pauli() {
        let n = 2;
        let f = ideal_f(n, AnalyticEnsemble::LocalCliffordD0).unwrap();
        let mut noisy_vals = f.dense_values().unwrap();
        noisy_vals[1] *= 0.9;
        noisy_vals[2] *= 0.8;
        noisy_vals[3] *= 0.95;
        let noisy = FrameSpectrum::dense(n, noisy_vals, None, Provenance::Analytic);

        let p = PauliString::parse("XI").unwrap();
        let state = pauli_eigenstate(&p).unwrap();
        let bias =
            bias_of_estimation(&Observable::single_pauli(p), &state, &f, &noisy).unwrap();
        // k(XI) = 10₂ = 2 with deviation 0.2.
        assert_abs_diff_eq!(bias, 0.2, epsilon = 1e-12);

        // Identity observable: zero bias for TP noise.
        let id_bias =
            bias_of_estimation(&Observable::identity(n), &state, &f, &noisy).unwrap();
        assert_abs_diff_eq!(id_bias, 0.0, epsilon = 1e-12);

        // Equal frames: zero bias for any observable and state.
        let zero =
            bias_of_estimation(&Observable::PureTarget(state.clone()), &state, &f, &f).unwrap();
        assert_abs_diff_eq!(zero, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenstates_are_eigenstates() {
        for text in ["X", "ZZ", "XY", "YIZ"] {
            let p = PauliString::parse(text).unwrap();
            let state = pauli_eigenstate(&p).unwrap();
            let val = pauli_expectation(&state, &p).unwrap();
            assert_abs_diff_eq!(val, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn non_invertible_sector_is_refused_then_overridable() {
        let n = 2;
        let values = vec![1.0, 0.001, 0.3, 0.1];
        let stderr = vec![0.0, 0.01, 0.001, 0.001];
        let f = FrameSpectrum::dense(n, values, Some(stderr), Provenance::Empirical);
        let obs = Observable::single_pauli(PauliString::parse("IZ").unwrap());
        // k(IZ) = 01 with |f| = 0.001 < 10·0.01: flagged.
        let record = record_with_identity(n, 0);
        assert!(matches!(
            dual_eval(&obs, &record, &f),
            Err(ShadowError::NonInvertibleSector(_))
        ));
        let est = estimate(
            &obs,
            &[record],
            &f,
            InversionPolicy::Override,
            Aggregation::Mean,
        )
        .unwrap();
        assert_abs_diff_eq!(est.value, 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn median_of_means_is_labeled() {
        let n = 1;
        let f = ideal_f(n, AnalyticEnsemble::LocalCliffordD0).unwrap();
        let records: Vec<ShadowRecord> =
            (0..30).map(|i| record_with_identity(1, (i % 2) as usize)).collect();
        let est = estimate(
            &Observable::single_pauli(PauliString::parse("Z").unwrap()),
            &records,
            &f,
            InversionPolicy::Strict,
            Aggregation::MedianOfMeans { batches: 5 },
        )
        .unwrap();
        assert!(est.frame_tag.contains("mom5"));
    }
}
