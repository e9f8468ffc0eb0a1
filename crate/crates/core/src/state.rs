//! Dense statevector and density-matrix kernels.
//!
//! Qubit 0 is the most significant bit of a basis index, so qubit `l` of an
//! `n`-qubit register lives at bit position `n - 1 - l`.

use crate::{C64, Result, ShadowError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Pure state of `n` qubits with amplitudes indexed by basis bitstrings.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    n: usize,
    amps: Vec<C64>,
}

impl DenseState {
    pub fn zero(n: usize) -> DenseState {
        DenseState::basis_state(n, 0)
    }

    pub fn basis_state(n: usize, x: usize) -> DenseState {
        let d = 1usize << n;
        assert!(x < d);
        let mut amps = vec![C64::new(0.0, 0.0); d];
        amps[x] = C64::new(1.0, 0.0);
        DenseState { n, amps }
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<DenseState> {
        let d = amps.len();
        if !d.is_power_of_two() || d == 1 {
            return Err(ShadowError::DimensionMismatch(format!(
                "amplitude vector of length {d} is not a qubit register"
            )));
        }
        let n = d.trailing_zeros() as usize;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(ShadowError::InvalidConfig(format!(
                "state norm² = {norm}, expected 1"
            )));
        }
        Ok(DenseState { n, amps })
    }

    /// Haar-random pure state via a normalized complex Gaussian vector.
    pub fn random_haar<R: Rng>(n: usize, rng: &mut R) -> DenseState {
        let d = 1usize << n;
        let mut amps: Vec<C64> = (0..d)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let s = 1.0 / norm.sqrt();
        for a in &mut amps {
            *a *= s;
        }
        DenseState { n, amps }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &DenseState) -> Result<C64> {
        if self.n != other.n {
            return Err(ShadowError::DimensionMismatch(
                "inner product of states with different qubit counts".into(),
            ));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Apply a 2×2 unitary (row-major) to `qubit`.
    pub fn apply_1q(&mut self, u: &[C64; 4], qubit: usize) {
        apply_1q_strided(&mut self.amps, u, self.n - 1 - qubit);
    }

    /// Apply a 4×4 unitary (row-major) to the ordered pair `(qa, qb)`.
    ///
    /// The row index of the gate is `2·b_a + b_b` where `b_a`, `b_b` are the
    /// basis bits of `qa` and `qb`.
    pub fn apply_2q(&mut self, u: &[C64; 16], qa: usize, qb: usize) {
        apply_2q_strided(&mut self.amps, u, self.n - 1 - qa, self.n - 1 - qb);
    }

    /// CNOT with `control`/`target` qubits (fast path, no matrix).
    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let pc = self.n - 1 - control;
        let pt = self.n - 1 - target;
        let cbit = 1usize << pc;
        let tbit = 1usize << pt;
        for x in 0..self.amps.len() {
            if x & cbit != 0 && x & tbit == 0 {
                self.amps.swap(x, x | tbit);
            }
        }
    }

    /// Sample a computational-basis outcome from the Born distribution.
    pub fn sample_outcome<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, a) in self.amps.iter().enumerate() {
            acc += a.norm_sqr();
            if u < acc {
                return x;
            }
        }
        self.amps.len() - 1
    }
}

fn apply_1q_strided(amps: &mut [C64], u: &[C64; 4], pos: usize) {
    let stride = 1usize << pos;
    let len = amps.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            let a = amps[i];
            let b = amps[i + stride];
            amps[i] = u[0] * a + u[1] * b;
            amps[i + stride] = u[2] * a + u[3] * b;
        }
        base += 2 * stride;
    }
}

fn apply_2q_strided(amps: &mut [C64], u: &[C64; 16], pa: usize, pb: usize) {
    let sa = 1usize << pa;
    let sb = 1usize << pb;
    let mask = sa | sb;
    for x in 0..amps.len() {
        if x & mask != 0 {
            continue;
        }
        let idx = [x, x | sb, x | sa, x | sa | sb];
        let xs = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
        for r in 0..4 {
            let row = &u[4 * r..4 * r + 4];
            amps[idx[r]] = row[0] * xs[0] + row[1] * xs[1] + row[2] * xs[2] + row[3] * xs[3];
        }
    }
}

/// Density matrix of `n` qubits, stored flat with index `r·2^n + c`.
///
/// Only used by shot-free oracles at small `n`; the acquisition path works
/// with pure-state trajectories.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    n: usize,
    elems: Vec<C64>,
}

impl DensityMatrix {
    /// Wrap raw elements (row-major, `r·2^n + c`). The kernels are linear,
    /// so non-positive "density matrices" (e.g. Pauli basis elements) are
    /// fine.
    pub fn from_parts(n: usize, elems: Vec<C64>) -> DensityMatrix {
        assert_eq!(elems.len(), 1usize << (2 * n));
        DensityMatrix { n, elems }
    }

    pub fn from_pure(state: &DenseState) -> DensityMatrix {
        let d = state.dim();
        let amps = state.amplitudes();
        let mut elems = vec![C64::new(0.0, 0.0); d * d];
        for r in 0..d {
            for c in 0..d {
                elems[r * d + c] = amps[r] * amps[c].conj();
            }
        }
        DensityMatrix { n: state.n(), elems }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn elements(&self) -> &[C64] {
        &self.elems
    }

    pub fn trace(&self) -> C64 {
        let d = self.dim();
        (0..d).map(|r| self.elems[r * d + r]).sum()
    }

    pub fn diagonal_probabilities(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|r| self.elems[r * d + r].re).collect()
    }

    pub fn apply_unitary_1q(&mut self, u: &[C64; 4], qubit: usize) {
        let pos = self.n - 1 - qubit;
        // Row index bits sit above the column bits in the flat layout.
        apply_1q_strided(&mut self.elems, u, pos + self.n);
        let uc = [u[0].conj(), u[1].conj(), u[2].conj(), u[3].conj()];
        apply_1q_strided(&mut self.elems, &uc, pos);
    }

    pub fn apply_unitary_2q(&mut self, u: &[C64; 16], qa: usize, qb: usize) {
        let pa = self.n - 1 - qa;
        let pb = self.n - 1 - qb;
        apply_2q_strided(&mut self.elems, u, pa + self.n, pb + self.n);
        let mut uc = [C64::new(0.0, 0.0); 16];
        for (i, v) in u.iter().enumerate() {
            uc[i] = v.conj();
        }
        apply_2q_strided(&mut self.elems, &uc, pa, pb);
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let cnot = crate::circuit::cnot_dense();
        self.apply_unitary_2q(&cnot, control, target);
    }

    /// Exact action of a single-qubit Pauli channel on `qubit`.
    pub fn apply_pauli_channel_1q(&mut self, probs: &[f64; 4], qubit: usize) {
        let mut acc = vec![C64::new(0.0, 0.0); self.elems.len()];
        for (a, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut branch = self.elems.clone();
            let sigma = pauli_1q_dense(a);
            let pos = self.n - 1 - qubit;
            apply_1q_strided(&mut branch, &sigma, pos + self.n);
            let sc = [
                sigma[0].conj(),
                sigma[1].conj(),
                sigma[2].conj(),
                sigma[3].conj(),
            ];
            apply_1q_strided(&mut branch, &sc, pos);
            for (dst, src) in acc.iter_mut().zip(&branch) {
                *dst += p * src;
            }
        }
        self.elems = acc;
    }

    /// Exact action of a two-qubit Pauli channel on `(qa, qb)`, with error
    /// labels indexed base-4 as `4·p_a + p_b`.
    pub fn apply_pauli_channel_2q(&mut self, probs: &[f64; 16], qa: usize, qb: usize) {
        let mut acc = vec![C64::new(0.0, 0.0); self.elems.len()];
        for (e, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut branch = self.elems.clone();
            let sa = pauli_1q_dense(e >> 2);
            let sb = pauli_1q_dense(e & 3);
            let pa = self.n - 1 - qa;
            let pb = self.n - 1 - qb;
            apply_1q_strided(&mut branch, &sa, pa + self.n);
            apply_1q_strided(&mut branch, &sb, pb + self.n);
            let sac = [sa[0].conj(), sa[1].conj(), sa[2].conj(), sa[3].conj()];
            let sbc = [sb[0].conj(), sb[1].conj(), sb[2].conj(), sb[3].conj()];
            apply_1q_strided(&mut branch, &sac, pa);
            apply_1q_strided(&mut branch, &sbc, pb);
            for (dst, src) in acc.iter_mut().zip(&branch) {
                *dst += p * src;
            }
        }
        self.elems = acc;
    }
}

/// Dense 2×2 Pauli for digit `0..4 = I,X,Y,Z` (row-major).
pub fn pauli_1q_dense(digit: usize) -> [C64; 4] {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match digit & 3 {
        0 => [l, o, o, l],
        1 => [o, l, l, o],
        2 => [o, -i, i, o],
        _ => [l, o, o, -l],
    }
}

/// Apply per-qubit readout confusion to a probability vector.
///
/// `confusion[l] = (p10, p01)` with `p10 = P(read 1 | true 0)` and
/// `p01 = P(read 0 | true 1)`.
pub fn apply_readout_confusion(probs: &mut [f64], n: usize, confusion: &[(f64, f64)]) {
    assert_eq!(confusion.len(), n);
    for (l, &(p10, p01)) in confusion.iter().enumerate() {
        if p10 == 0.0 && p01 == 0.0 {
            continue;
        }
        let stride = 1usize << (n - 1 - l);
        let mut base = 0;
        while base < probs.len() {
            for i in base..base + stride {
                let a = probs[i];
                let b = probs[i + stride];
                probs[i] = (1.0 - p10) * a + p01 * b;
                probs[i + stride] = p10 * a + (1.0 - p01) * b;
            }
            base += 2 * stride;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hadamard() -> [C64; 4] {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        [s, s, s, -s]
    }

    #[test]
    fn one_qubit_gates_act_on_the_right_bit() {
        // X on qubit 0 of |00⟩ gives |10⟩ = index 2.
        let mut s = DenseState::zero(2);
        let x = pauli_1q_dense(1);
        s.apply_1q(&x, 0);
        assert_abs_diff_eq!(s.amplitudes()[2].re, 1.0, epsilon = 1e-15);

        let mut s = DenseState::zero(2);
        s.apply_1q(&x, 1);
        assert_abs_diff_eq!(s.amplitudes()[1].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cnot_flips_target_when_control_set() {
        let mut s = DenseState::basis_state(2, 0b10);
        s.apply_cnot(0, 1);
        assert_abs_diff_eq!(s.amplitudes()[0b11].re, 1.0, epsilon = 1e-15);
        let mut s = DenseState::basis_state(2, 0b01);
        s.apply_cnot(0, 1);
        assert_abs_diff_eq!(s.amplitudes()[0b01].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn norm_is_preserved_by_gates() {
        let mut rng = crate::derive_rng(5, crate::Stream::Input, 0);
        let mut s = DenseState::random_haar(4, &mut rng);
        s.apply_1q(&hadamard(), 2);
        s.apply_cnot(1, 2);
        assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_matrix_matches_pure_evolution() {
        let mut rng = crate::derive_rng(6, crate::Stream::Input, 0);
        let mut s = DenseState::random_haar(3, &mut rng);
        let mut rho = DensityMatrix::from_pure(&s);
        s.apply_1q(&hadamard(), 1);
        s.apply_cnot(0, 2);
        rho.apply_unitary_1q(&hadamard(), 1);
        rho.apply_cnot(0, 2);
        let expect = DensityMatrix::from_pure(&s);
        for (a, b) in rho.elements().iter().zip(expect.elements()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_pauli_channel_is_a_noop() {
        let mut rng = crate::derive_rng(7, crate::Stream::Input, 0);
        let s = DenseState::random_haar(2, &mut rng);
        let mut rho = DensityMatrix::from_pure(&s);
        let before = rho.elements().to_vec();
        rho.apply_pauli_channel_1q(&[1.0, 0.0, 0.0, 0.0], 1);
        for (a, b) in rho.elements().iter().zip(&before) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
        }
    }

    #[test]
    fn readout_confusion_is_stochastic() {
        let mut probs = vec![1.0, 0.0, 0.0, 0.0];
        apply_readout_confusion(&mut probs, 2, &[(1.0, 0.0), (0.0, 0.0)]);
        // p10 = 1 on qubit 0 moves |00⟩ to |10⟩.
        assert_abs_diff_eq!(probs[2], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }
}
