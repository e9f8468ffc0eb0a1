//! Matrix-product operators for the CNOT sub-layers and a small MPS type
//! used to evaluate records in tensor-network form.
//!
//! The CNOT factorizes as `Σ_i |i⟩⟨i| ⊗ X^i`, which gives each entangling
//! sub-layer an MPO of bond dimension 2. Periodic layers carry the wrap
//! pair on a traced boundary bond.

use crate::circuit::{Boundary, Topology};
use crate::{C64, Result, ShadowError};
use ndarray::{Array2, Array3, Array4};

/// Matrix-product operator over qubit sites; core `l` has shape
/// `(bond_in, 2, 2, bond_out)` with index order `(b, row, col, b')`.
#[derive(Debug, Clone)]
pub struct Mpo {
    cores: Vec<Array4<C64>>,
    boundary: Boundary,
}

impl Mpo {
    pub fn cores(&self) -> &[Array4<C64>] {
        &self.cores
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn max_bond(&self) -> usize {
        self.cores
            .iter()
            .map(|c| c.shape()[3])
            .max()
            .unwrap_or(1)
            .max(self.cores.first().map(|c| c.shape()[0]).unwrap_or(1))
    }

    /// Dense 2^n × 2^n contraction (test oracle, n ≤ 6).
    pub fn contract_dense(&self) -> Result<Array2<C64>> {
        let n = self.n();
        if n > 6 {
            return Err(ShadowError::SizeCap(format!("dense MPO contraction at n={n}")));
        }
        let r0 = self.cores[0].shape()[0];
        // Start from δ_{αβ} on the edge bond so the periodic trace closes;
        // in the open case r0 = 1 and this is trivial. t[α, rows, cols, β].
        let mut t: Array4<C64> = Array4::zeros((r0, 1, 1, r0));
        for a in 0..r0 {
            t[[a, 0, 0, a]] = C64::new(1.0, 0.0);
        }
        for core in &self.cores {
            let (rb, _, _, re) = (
                core.shape()[0],
                core.shape()[1],
                core.shape()[2],
                core.shape()[3],
            );
            let (alpha, rows, cols, _) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
            let mut next = Array4::zeros((alpha, rows * 2, cols * 2, re));
            for a in 0..alpha {
                for r in 0..rows {
                    for c in 0..cols {
                        for b in 0..rb {
                            let tv = t[[a, r, c, b]];
                            if tv == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for o in 0..2 {
                                for i in 0..2 {
                                    for e in 0..re {
                                        next[[a, r * 2 + o, c * 2 + i, e]] +=
                                            tv * core[[b, o, i, e]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            t = next;
        }
        let d = 1usize << n;
        let mut out = Array2::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..t.shape()[0] {
                    acc += t[[a, r, c, a]];
                }
                out[[r, c]] = acc;
            }
        }
        Ok(out)
    }
}

fn identity_core() -> Array4<C64> {
    let mut c = Array4::zeros((1, 2, 2, 1));
    c[[0, 0, 0, 0]] = C64::new(1.0, 0.0);
    c[[0, 1, 1, 0]] = C64::new(1.0, 0.0);
    c
}

/// MPO of one entangling sub-layer; maximal bond dimension 2.
///
/// Non-adjacent pairs thread the control bit through intermediate sites;
/// under a periodic boundary the pair `(0, n-1)` uses the traced edge bond.
pub fn cnot_layer_mpo(topology: &Topology, sublayer: usize) -> Result<Mpo> {
    topology.validate()?;
    let n = topology.n();
    let one = C64::new(1.0, 0.0);
    let mut cores: Vec<Array4<C64>> = (0..n).map(|_| identity_core()).collect();

    for &(c, t) in topology.sublayer_pairs(sublayer) {
        let (lo, hi) = (c.min(t), c.max(t));
        let is_wrap = topology.boundary() == Boundary::Periodic && lo == 0 && hi == n - 1 && n > 2;
        if is_wrap {
            // The pair's bond travels over the traced edge between sites
            // n-1 and 0; no other site sees it.
            if c == 0 {
                cores[0] = rotate_left_bond(&ctrl_core());
                cores[n - 1] = rotate_right_bond(&targ_core());
            } else {
                cores[0] = targ_core();
                cores[n - 1] = ctrl_core();
            }
            continue;
        }
        // Control decides which operator the bond carries along [lo, hi].
        let (head, tail) = if c < t {
            (ctrl_core(), targ_core())
        } else {
            (targ_core(), ctrl_core())
        };
        cores[lo] = head;
        cores[hi] = tail;
        for site in cores.iter_mut().take(hi).skip(lo + 1) {
            let mut m = Array4::zeros((2, 2, 2, 2));
            for b in 0..2 {
                for p in 0..2 {
                    m[[b, p, p, b]] = one;
                }
            }
            *site = m;
        }
    }

    Ok(Mpo {
        cores,
        boundary: topology.boundary(),
    })
}

// Control core on the bond-opening side: (1,2,2,2), diagonal in the
// physical index, bond carries the control bit.
fn ctrl_core() -> Array4<C64> {
    let mut m = Array4::zeros((1, 2, 2, 2));
    m[[0, 0, 0, 0]] = C64::new(1.0, 0.0);
    m[[0, 1, 1, 1]] = C64::new(1.0, 0.0);
    m
}

// Target core on the bond-closing side: (2,2,2,1), applies X^b.
fn targ_core() -> Array4<C64> {
    let mut m = Array4::zeros((2, 2, 2, 1));
    m[[0, 0, 0, 0]] = C64::new(1.0, 0.0);
    m[[0, 1, 1, 0]] = C64::new(1.0, 0.0);
    m[[1, 0, 1, 0]] = C64::new(1.0, 0.0);
    m[[1, 1, 0, 0]] = C64::new(1.0, 0.0);
    m
}

// Move the opening bond of a (1,2,2,2) core to the left edge: (2,2,2,1).
fn rotate_left_bond(core: &Array4<C64>) -> Array4<C64> {
    let (rb, re) = (core.shape()[0], core.shape()[3]);
    debug_assert_eq!(rb, 1);
    let mut m = Array4::zeros((re, 2, 2, 1));
    for o in 0..2 {
        for i in 0..2 {
            for e in 0..re {
                m[[e, o, i, 0]] = core[[0, o, i, e]];
            }
        }
    }
    m
}

// Move the closing bond of a (2,2,2,1) core to the right edge: (1,2,2,2).
fn rotate_right_bond(core: &Array4<C64>) -> Array4<C64> {
    let (rb, re) = (core.shape()[0], core.shape()[3]);
    debug_assert_eq!(re, 1);
    let mut m = Array4::zeros((1, 2, 2, rb));
    for b in 0..rb {
        for o in 0..2 {
            for i in 0..2 {
                m[[0, o, i, b]] = core[[b, o, i, 0]];
            }
        }
    }
    m
}

/// Open-boundary matrix-product state over qubit sites, cores
/// `(bond, 2, bond)`.
#[derive(Debug, Clone)]
pub struct Mps {
    cores: Vec<Array3<C64>>,
}

impl Mps {
    pub fn basis_state(n: usize, z: usize) -> Mps {
        let cores = (0..n)
            .map(|l| {
                let mut c = Array3::zeros((1, 2, 1));
                let bit = (z >> (n - 1 - l)) & 1;
                c[[0, bit, 0]] = C64::new(1.0, 0.0);
                c
            })
            .collect();
        Mps { cores }
    }

    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Array3<C64>] {
        &self.cores
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[2]).collect()
    }

    pub fn apply_1q(&mut self, u: &[C64; 4], site: usize) {
        let old = &self.cores[site];
        let (rb, _, re) = (old.shape()[0], old.shape()[1], old.shape()[2]);
        let mut m = Array3::zeros((rb, 2, re));
        for b in 0..rb {
            for e in 0..re {
                let x0 = old[[b, 0, e]];
                let x1 = old[[b, 1, e]];
                m[[b, 0, e]] = u[0] * x0 + u[1] * x1;
                m[[b, 1, e]] = u[2] * x0 + u[3] * x1;
            }
        }
        self.cores[site] = m;
    }

    /// Contract an open-boundary MPO into the state; bonds multiply.
    pub fn apply_mpo(&mut self, mpo: &Mpo) -> Result<()> {
        if mpo.boundary() != Boundary::Open {
            return Err(ShadowError::Unsupported(
                "MPS evolution with a traced-boundary MPO".into(),
            ));
        }
        if mpo.n() != self.n() {
            return Err(ShadowError::DimensionMismatch(
                "MPO and MPS site counts differ".into(),
            ));
        }
        for (site, core) in mpo.cores().iter().enumerate() {
            let s = &self.cores[site];
            let (a, _, b) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let (p, q) = (core.shape()[0], core.shape()[3]);
            let mut m = Array3::zeros((p * a, 2, q * b));
            for ai in 0..a {
                for bi in 0..b {
                    for pi in 0..p {
                        for qi in 0..q {
                            for o in 0..2 {
                                let mut acc = C64::new(0.0, 0.0);
                                for i in 0..2 {
                                    acc += core[[pi, o, i, qi]] * s[[ai, i, bi]];
                                }
                                m[[pi * a + ai, o, qi * b + bi]] = acc;
                            }
                        }
                    }
                }
            }
            self.cores[site] = m;
        }
        Ok(())
    }

    /// Dense amplitude vector (n ≤ 20).
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let n = self.n();
        if n > 20 {
            return Err(ShadowError::SizeCap(format!("dense MPS at n={n}")));
        }
        // acc: (prefix basis index) × bond
        let mut acc: Vec<Vec<C64>> = vec![vec![C64::new(1.0, 0.0)]];
        for core in &self.cores {
            let (rb, _, re) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let mut next: Vec<Vec<C64>> = Vec::with_capacity(acc.len() * 2);
            for row in &acc {
                debug_assert_eq!(row.len(), rb);
                for o in 0..2 {
                    let mut v = vec![C64::new(0.0, 0.0); re];
                    for b in 0..rb {
                        for (e, slot) in v.iter_mut().enumerate() {
                            *slot += row[b] * core[[b, o, e]];
                        }
                    }
                    next.push(v);
                }
            }
            acc = next;
        }
        Ok(acc.into_iter().map(|v| v[0]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{cnot_dense, sublayer_unitary, Topology};
    use crate::state::DenseState;
    use approx::assert_abs_diff_eq;

    fn assert_close(a: &Array2<C64>, b: &Array2<C64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x.re, y.re, epsilon = tol);
            assert_abs_diff_eq!(x.im, y.im, epsilon = tol);
        }
    }

    #[test]
    fn single_cnot_mpo_matches_dense() {
        let topo = Topology::brickwork(2);
        let mpo = cnot_layer_mpo(&topo, 0).unwrap();
        assert_eq!(mpo.max_bond(), 2);
        let dense = mpo.contract_dense().unwrap();
        let cnot = cnot_dense();
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(dense[[r, c]].re, cnot[4 * r + c].re, epsilon = 1e-15);
                assert_abs_diff_eq!(dense[[r, c]].im, cnot[4 * r + c].im, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn empty_sublayer_is_identity_with_bond_1() {
        let topo = Topology::brickwork(2);
        // Sub-layer 1 of a 2-qubit brickwork has no pairs.
        let mpo = cnot_layer_mpo(&topo, 1).unwrap();
        assert_eq!(mpo.max_bond(), 1);
        let dense = mpo.contract_dense().unwrap();
        let eye = Array2::eye(4);
        assert_close(&dense, &eye, 1e-15);
    }

    #[test]
    fn all_open_topologies_match_dense_unitary() {
        for n in 2..=6usize {
            let topo = Topology::brickwork(n);
            for s in 0..topo.num_sublayers() {
                let mpo = cnot_layer_mpo(&topo, s).unwrap();
                assert!(mpo.max_bond() <= 2);
                let dense = mpo.contract_dense().unwrap();
                let expect = sublayer_unitary(&topo, s).unwrap();
                assert_close(&dense, &expect, 1e-12);
            }
        }
    }

    #[test]
    fn periodic_even_layer_matches_dense_unitary() {
        for n in [4usize, 6] {
            let topo = Topology::ring(n).unwrap();
            for s in 0..topo.num_sublayers() {
                let mpo = cnot_layer_mpo(&topo, s).unwrap();
                assert!(mpo.max_bond() <= 2);
                let dense = mpo.contract_dense().unwrap();
                let expect = sublayer_unitary(&topo, s).unwrap();
                assert_close(&dense, &expect, 1e-12);
            }
        }
    }

    #[test]
    fn mps_evolution_matches_statevector() {
        let n = 5;
        let topo = Topology::brickwork(n);
        let z = 0b10110usize;
        let mut mps = Mps::basis_state(n, z);
        let mut sv = DenseState::basis_state(n, z);

        let mpo = cnot_layer_mpo(&topo, 0).unwrap();
        mps.apply_mpo(&mpo).unwrap();
        for &(c, t) in topo.sublayer_pairs(0) {
            sv.apply_cnot(c, t);
        }
        let h = crate::circuit::hadamard_gate();
        mps.apply_1q(&h, 2);
        sv.apply_1q(&h, 2);

        let dense = mps.to_dense().unwrap();
        for (a, b) in dense.iter().zip(sv.amplitudes()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }
}
