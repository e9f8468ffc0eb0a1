//! Pauli strings, irrep (support) labels and the Walsh-Hadamard transform.
//!
//! Conventions used across the crate:
//!
//! - qubit `0` is the **most significant** bit of every basis index `x`,
//!   outcome string `z` and irrep label `k`;
//! - a Pauli string index `a` is a base-4 integer with qubit 0 as the most
//!   significant digit and digits `0,1,2,3 = I,X,Y,Z`;
//! - `w_a` denotes the Frobenius-normalized Pauli (`‖w_a‖_F = 1`), while
//!   `O_a = √d·w_a` is the conventional unit-operator-norm Pauli. Frame
//!   algebra is done in the `w` basis; observables enter and leave in the
//!   `O` basis.

use crate::state::DenseState;
use crate::{C64, Result, ShadowError};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const SQRT_2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_digit(d: usize) -> Pauli {
        match d & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn digit(self) -> usize {
        self as usize
    }

    pub fn x_bit(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    pub fn z_bit(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }

    pub fn dense(self) -> [[C64; 2]; 2] {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }
}

/// Normalization convention carried by a [`PauliString`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauliNorm {
    /// `O_a = σ_{a_0} ⊗ … ⊗ σ_{a_{n-1}}`, operator norm 1.
    UnitOperator,
    /// `w_a = O_a / √d`, Frobenius norm 1.
    Frobenius,
}

/// A multi-qubit Pauli operator identified by one of `{I,X,Y,Z}` per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliString {
    ops: Vec<Pauli>,
    norm: PauliNorm,
}

impl PauliString {
    pub fn new(ops: Vec<Pauli>, norm: PauliNorm) -> PauliString {
        PauliString { ops, norm }
    }

    /// Parse the text form: one of `IXYZ` per qubit, leftmost = qubit 0.
    pub fn parse(text: &str) -> Result<PauliString> {
        let ops = text
            .chars()
            .map(|c| match c {
                'I' | 'i' => Ok(Pauli::I),
                'X' | 'x' => Ok(Pauli::X),
                'Y' | 'y' => Ok(Pauli::Y),
                'Z' | 'z' => Ok(Pauli::Z),
                other => Err(ShadowError::InvalidConfig(format!(
                    "invalid Pauli character `{other}`"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if ops.is_empty() {
            return Err(ShadowError::InvalidConfig("empty Pauli string".into()));
        }
        Ok(PauliString::new(ops, PauliNorm::UnitOperator))
    }

    /// Pauli string for base-4 index `a` (qubit 0 = most significant digit).
    pub fn from_index(a: usize, n: usize, norm: PauliNorm) -> PauliString {
        let ops = (0..n)
            .map(|l| Pauli::from_digit((a >> (2 * (n - 1 - l))) & 3))
            .collect();
        PauliString { ops, norm }
    }

    pub fn index(&self) -> usize {
        self.ops.iter().fold(0, |acc, p| (acc << 2) | p.digit())
    }

    pub fn n(&self) -> usize {
        self.ops.len()
    }

    pub fn norm(&self) -> PauliNorm {
        self.norm
    }

    pub fn with_norm(&self, norm: PauliNorm) -> PauliString {
        PauliString { ops: self.ops.clone(), norm }
    }

    pub fn ops(&self) -> &[Pauli] {
        &self.ops
    }

    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(|p| *p == Pauli::I)
    }

    pub fn text(&self) -> String {
        self.ops
            .iter()
            .map(|p| match p {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            })
            .collect()
    }

    /// Dense matrix in the stored normalization (test oracle, n ≤ 12).
    pub fn dense(&self) -> Result<Array2<C64>> {
        let n = self.n();
        if n > 12 {
            return Err(ShadowError::SizeCap(format!("dense Pauli at n={n}")));
        }
        let d = 1usize << n;
        let mut m = Array2::eye(1);
        for p in &self.ops {
            // m ⊗ f: qubit 0 stays in the most significant position.
            let f = p.dense();
            let (r, c) = m.dim();
            let mut out = Array2::zeros((2 * r, 2 * c));
            for a in 0..r {
                for b in 0..c {
                    if m[[a, b]] != C64::new(0.0, 0.0) {
                        for i in 0..2 {
                            for j in 0..2 {
                                out[[a * 2 + i, b * 2 + j]] = m[[a, b]] * f[i][j];
                            }
                        }
                    }
                }
            }
            m = out;
        }
        if self.norm == PauliNorm::Frobenius {
            let s = C64::new(1.0 / (d as f64).sqrt(), 0.0);
            m.mapv_inplace(|v| v * s);
        }
        Ok(m)
    }
}

/// Support pattern of a Pauli string: bit `l` is 1 iff qubit `l` carries a
/// non-identity factor. Labels the irreps of the local Clifford twirl.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IrrepLabel {
    n: usize,
    bits: usize,
}

impl IrrepLabel {
    pub fn new(n: usize, bits: usize) -> IrrepLabel {
        debug_assert!(bits < (1usize << n));
        IrrepLabel { n, bits }
    }

    /// Integer value of `k` with qubit 0 as the most significant bit.
    pub fn index(&self) -> usize {
        self.bits
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bit(&self, qubit: usize) -> bool {
        (self.bits >> (self.n - 1 - qubit)) & 1 == 1
    }

    pub fn text(&self) -> String {
        (0..self.n)
            .map(|l| if self.bit(l) { '1' } else { '0' })
            .collect()
    }
}

/// Support pattern of `p`.
pub fn irrep_label(p: &PauliString) -> IrrepLabel {
    let n = p.n();
    let bits = p
        .ops()
        .iter()
        .enumerate()
        .fold(0usize, |acc, (l, op)| {
            if *op != Pauli::I {
                acc | (1 << (n - 1 - l))
            } else {
                acc
            }
        });
    IrrepLabel { n, bits }
}

/// Hamming weight of `k`, i.e. the Pauli support size.
pub fn pauli_weight(k: &IrrepLabel) -> u32 {
    k.bits.count_ones()
}

/// Support pattern (as an index into a length-`2^n` vector) of Pauli index `a`.
pub fn pattern_of_pauli_index(a: usize, n: usize) -> usize {
    let mut k = 0usize;
    for l in 0..n {
        if (a >> (2 * l)) & 3 != 0 {
            k |= 1 << l;
        }
    }
    k
}

/// Expand a vector indexed by patterns `k ∈ {0,1}^n` to one indexed by Pauli
/// strings `a ∈ {I,X,Y,Z}^n` via `out[a] = v[k(a)]`.
pub fn expand_pattern_to_paulis(v: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(v.len(), 1 << n);
    let mut out = vec![0.0; 1 << (2 * n)];
    for (a, slot) in out.iter_mut().enumerate() {
        *slot = v[pattern_of_pauli_index(a, n)];
    }
    out
}

/// In-place fast Walsh-Hadamard transform: `out_k = Σ_x (−1)^{k·x} p_x`.
///
/// Self-inverse up to the factor `2^n`.
pub fn walsh_hadamard(v: &mut [f64]) {
    let len = v.len();
    assert!(len.is_power_of_two(), "length must be a power of two");
    let mut h = 1;
    while h < len {
        for block in (0..len).step_by(2 * h) {
            for i in block..block + h {
                let a = v[i];
                let b = v[i + h];
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// `⟨s|O_p|s⟩` in the unit-operator-norm convention.
pub fn pauli_expectation(s: &DenseState, p: &PauliString) -> Result<f64> {
    let n = s.n();
    if p.n() != n {
        return Err(ShadowError::DimensionMismatch(format!(
            "state has {n} qubits, Pauli string has {}",
            p.n()
        )));
    }
    let mut flip = 0usize;
    let mut zmask = 0usize;
    let mut ycount = 0u32;
    for (l, op) in p.ops().iter().enumerate() {
        let bit = 1usize << (n - 1 - l);
        if op.x_bit() {
            flip |= bit;
        }
        if op.z_bit() {
            zmask |= bit;
        }
        if *op == Pauli::Y {
            ycount += 1;
        }
    }
    // i^ycount global factor from the Y factors.
    let y_phase = match ycount % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    };
    let amps = s.amplitudes();
    let mut acc = C64::new(0.0, 0.0);
    for (x, amp) in amps.iter().enumerate() {
        let sign = if ((x & zmask).count_ones()) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        acc += amps[x ^ flip].conj() * amp * sign;
    }
    acc *= y_phase;
    let scale = match p.norm() {
        PauliNorm::UnitOperator => 1.0,
        PauliNorm::Frobenius => 1.0 / ((1usize << n) as f64).sqrt(),
    };
    debug_assert!(acc.im.abs() < 1e-10, "Pauli expectation must be real");
    Ok(acc.re * scale)
}

// Per-qubit change of basis from matrix-element pairs m = 2r+c to Pauli
// labels p, scaled so the output is the Frobenius-normalized coefficient:
// T[p][m] = (σ_p)_{c,r} / √2.
fn liouville_rows() -> [[C64; 4]; 4] {
    let s = SQRT_2_INV;
    let o = C64::new(0.0, 0.0);
    [
        [C64::new(s, 0.0), o, o, C64::new(s, 0.0)],
        [o, C64::new(s, 0.0), C64::new(s, 0.0), o],
        [o, C64::new(0.0, s), C64::new(0.0, -s), o],
        [C64::new(s, 0.0), o, o, C64::new(-s, 0.0)],
    ]
}

fn apply_local_quartic_transform(v: &mut [C64], n: usize, t: &[[C64; 4]; 4]) {
    for l in 0..n {
        let stride = 1usize << (2 * (n - 1 - l));
        let block = stride * 4;
        for base in (0..v.len()).step_by(block) {
            for off in 0..stride {
                let i0 = base + off;
                let xs = [v[i0], v[i0 + stride], v[i0 + 2 * stride], v[i0 + 3 * stride]];
                for (p, row) in t.iter().enumerate() {
                    v[i0 + p * stride] =
                        row[0] * xs[0] + row[1] * xs[1] + row[2] * xs[2] + row[3] * xs[3];
                }
            }
        }
    }
}

/// Spread the bits of `x` so bit `i` lands on bit `2i` (qubit-digit
/// interleaving for the Pauli-Liouville transform).
fn spread_bits(mut x: usize) -> usize {
    let mut out = 0usize;
    let mut pos = 0;
    while x != 0 {
        if x & 1 == 1 {
            out |= 1 << (2 * pos);
        }
        x >>= 1;
        pos += 1;
    }
    out
}

/// Coefficients `(w_a|ρ)` of a density matrix `ρ`, all `a` at once.
///
/// The change of basis factorizes per qubit, so the cost is `O(n·4^n)`.
pub fn matrix_pauli_coeffs(rho: &Array2<C64>, n: usize) -> Vec<C64> {
    let d = 1usize << n;
    assert_eq!(rho.dim(), (d, d));
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for r in 0..d {
        let sr = spread_bits(r) << 1;
        for c in 0..d {
            v[sr | spread_bits(c)] = rho[[r, c]];
        }
    }
    apply_local_quartic_transform(&mut v, n, &liouville_rows());
    v
}

/// Coefficients `(w_a| |χ⟩⟨χ| )` of a pure state, all `a` at once; real.
pub fn pure_state_pauli_coeffs(chi: &DenseState, scratch: &mut Vec<C64>) -> Vec<f64> {
    let n = chi.n();
    let d = 1usize << n;
    let amps = chi.amplitudes();
    scratch.clear();
    scratch.resize(d * d, C64::new(0.0, 0.0));
    for r in 0..d {
        let sr = spread_bits(r) << 1;
        let ar = amps[r];
        for c in 0..d {
            scratch[sr | spread_bits(c)] = ar * amps[c].conj();
        }
    }
    apply_local_quartic_transform(scratch, n, &liouville_rows());
    scratch.iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DenseState;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn irrep_label_examples() {
        let p = PauliString::parse("III").unwrap();
        assert_eq!(irrep_label(&p).text(), "000");
        let p = PauliString::parse("XIZ").unwrap();
        assert_eq!(irrep_label(&p).text(), "101");
        let p = PauliString::parse("ZYX").unwrap();
        assert_eq!(irrep_label(&p).text(), "111");
    }

    #[test]
    fn pauli_weight_examples() {
        assert_eq!(pauli_weight(&IrrepLabel::new(4, 0b0000)), 0);
        assert_eq!(pauli_weight(&IrrepLabel::new(3, 0b101)), 2);
        assert_eq!(pauli_weight(&IrrepLabel::new(5, 0b11111)), 5);
    }

    #[test]
    fn wht_examples() {
        let mut v = vec![1.0, 0.0];
        walsh_hadamard(&mut v);
        assert_eq!(v, vec![1.0, 1.0]);

        let mut v = vec![0.5, 0.5];
        walsh_hadamard(&mut v);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);

        let mut v = vec![0.25; 4];
        walsh_hadamard(&mut v);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        for k in 1..4 {
            assert_abs_diff_eq!(v[k], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pauli_expectation_examples() {
        let zero = DenseState::zero(1);
        let plus = DenseState::from_amplitudes(vec![
            C64::new(SQRT_2_INV, 0.0),
            C64::new(SQRT_2_INV, 0.0),
        ])
        .unwrap();
        let z = PauliString::parse("Z").unwrap();
        let x = PauliString::parse("X").unwrap();
        assert_abs_diff_eq!(pauli_expectation(&zero, &z).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pauli_expectation(&plus, &z).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pauli_expectation(&plus, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn frobenius_strings_are_orthonormal() {
        for n in 1..=3usize {
            for a in 0..(1usize << (2 * n)) {
                let wa = PauliString::from_index(a, n, PauliNorm::Frobenius)
                    .dense()
                    .unwrap();
                for b in a..(1usize << (2 * n)) {
                    let wb = PauliString::from_index(b, n, PauliNorm::Frobenius)
                        .dense()
                        .unwrap();
                    let mut ip = C64::new(0.0, 0.0);
                    for i in 0..wa.nrows() {
                        for j in 0..wa.ncols() {
                            ip += wa[[i, j]].conj() * wb[[i, j]];
                        }
                    }
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(ip.re, expect, epsilon = 1e-12);
                    assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn wht_of_probabilities_matches_z_expectations() {
        for n in 1..=6usize {
            let state = DenseState::random_haar(n, &mut crate::derive_rng(11, crate::Stream::Input, n as u64));
            let mut probs = state.probabilities();
            walsh_hadamard(&mut probs);
            for k in 0..(1usize << n) {
                let ops = (0..n)
                    .map(|l| {
                        if (k >> (n - 1 - l)) & 1 == 1 {
                            Pauli::Z
                        } else {
                            Pauli::I
                        }
                    })
                    .collect::<Vec<_>>();
                let zk = PauliString::new(ops, PauliNorm::UnitOperator);
                let expect = pauli_expectation(&state, &zk).unwrap();
                assert_abs_diff_eq!(probs[k], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pure_state_coeffs_match_dense_oracle() {
        let mut scratch = Vec::new();
        for n in 1..=3usize {
            let state =
                DenseState::random_haar(n, &mut crate::derive_rng(3, crate::Stream::Input, n as u64));
            let coeffs = pure_state_pauli_coeffs(&state, &mut scratch);
            for a in 0..(1usize << (2 * n)) {
                let w = PauliString::from_index(a, n, PauliNorm::Frobenius);
                let expect = pauli_expectation(&state, &w).unwrap();
                assert_abs_diff_eq!(coeffs[a], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pattern_expansion_matches_labels() {
        let n = 3;
        let v: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let out = expand_pattern_to_paulis(&v, n);
        for a in 0..64 {
            let p = PauliString::from_index(a, n, PauliNorm::UnitOperator);
            let k = irrep_label(&p);
            assert_eq!(out[a], v[k.index()]);
        }
    }

    proptest! {
        #[test]
        fn wht_involution(v in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let mut w = v.clone();
            walsh_hadamard(&mut w);
            walsh_hadamard(&mut w);
            for (a, b) in v.iter().zip(&w) {
                prop_assert!((64.0 * a - b).abs() < 1e-12);
            }
        }
    }
}
