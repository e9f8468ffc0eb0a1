//! Hardware-efficient measurement circuits: `D+1` layers of random
//! single-qubit rotations interleaved with `D` sub-layers of CNOTs.

use crate::state::DenseState;
use crate::{C64, Result, ShadowError};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::OnceLock;

/// 2×2 gate, row-major.
pub type Gate1 = [C64; 4];
/// 4×4 gate, row-major; row index `2·b_first + b_second`.
pub type Gate2 = [C64; 16];

pub fn identity_gate() -> Gate1 {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    [l, o, o, l]
}

pub fn hadamard_gate() -> Gate1 {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [s, s, s, -s]
}

pub fn phase_gate() -> Gate1 {
    let o = C64::new(0.0, 0.0);
    [C64::new(1.0, 0.0), o, o, C64::new(0.0, 1.0)]
}

/// Dense CNOT; first index is the control.
pub fn cnot_dense() -> Gate2 {
    let mut m = [C64::new(0.0, 0.0); 16];
    m[0] = C64::new(1.0, 0.0);
    m[5] = C64::new(1.0, 0.0);
    m[11] = C64::new(1.0, 0.0);
    m[14] = C64::new(1.0, 0.0);
    m
}

pub fn adjoint_1q(u: &Gate1) -> Gate1 {
    [u[0].conj(), u[2].conj(), u[1].conj(), u[3].conj()]
}

pub fn is_unitary_1q(u: &Gate1, tol: f64) -> bool {
    let rows = [[u[0], u[1]], [u[2], u[3]]];
    for i in 0..2 {
        for j in 0..2 {
            let ip: C64 = (0..2).map(|k| rows[i][k].conj() * rows[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (ip.re - expect).abs() > tol || ip.im.abs() > tol {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Entangling-gate layout: ordered sub-layer patterns of disjoint (control,
/// target) pairs. Layer `j ≥ 1` of a circuit uses pattern `(j-1) mod #patterns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    pairs_per_sublayer: Vec<Vec<(usize, usize)>>,
    boundary: Boundary,
    id: String,
}

impl Topology {
    /// Linear-chain brickwork: even pairs `(0,1),(2,3),…` then odd pairs
    /// `(1,2),(3,4),…`, open boundary, control on the lower index.
    pub fn brickwork(n: usize) -> Topology {
        let even: Vec<(usize, usize)> = (0..n.saturating_sub(1)).step_by(2).map(|i| (i, i + 1)).collect();
        let odd: Vec<(usize, usize)> = (1..n.saturating_sub(1)).step_by(2).map(|i| (i, i + 1)).collect();
        Topology {
            n,
            pairs_per_sublayer: vec![even, odd],
            boundary: Boundary::Open,
            id: "brickwork".into(),
        }
    }

    /// Brickwork on a ring (even `n`): the odd pattern closes with the wrap
    /// pair `(0, n-1)`, control on the lower index.
    pub fn ring(n: usize) -> Result<Topology> {
        if n < 2 || n % 2 != 0 {
            return Err(ShadowError::InvalidConfig(format!(
                "periodic topology needs even n ≥ 2, got {n}"
            )));
        }
        let even: Vec<(usize, usize)> = (0..n - 1).step_by(2).map(|i| (i, i + 1)).collect();
        let mut odd: Vec<(usize, usize)> = (1..n - 1).step_by(2).map(|i| (i, i + 1)).collect();
        odd.push((0, n - 1));
        Ok(Topology {
            n,
            pairs_per_sublayer: vec![even, odd],
            boundary: Boundary::Periodic,
            id: "ring".into(),
        })
    }

    pub fn custom(
        n: usize,
        pairs_per_sublayer: Vec<Vec<(usize, usize)>>,
        boundary: Boundary,
        id: &str,
    ) -> Result<Topology> {
        let t = Topology {
            n,
            pairs_per_sublayer,
            boundary,
            id: id.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_id(id: &str, n: usize) -> Result<Topology> {
        match id {
            "brickwork" => Ok(Topology::brickwork(n)),
            "ring" => Topology::ring(n),
            other => Err(ShadowError::InvalidConfig(format!(
                "unknown topology id `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, pairs) in self.pairs_per_sublayer.iter().enumerate() {
            let mut seen = vec![false; self.n];
            for &(c, t) in pairs {
                if c >= self.n || t >= self.n || c == t {
                    return Err(ShadowError::InvalidConfig(format!(
                        "sub-layer {s}: invalid pair ({c},{t}) for n={}",
                        self.n
                    )));
                }
                if seen[c] || seen[t] {
                    return Err(ShadowError::InvalidConfig(format!(
                        "sub-layer {s}: qubit reused in pair ({c},{t})"
                    )));
                }
                seen[c] = true;
                seen[t] = true;
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn num_sublayers(&self) -> usize {
        self.pairs_per_sublayer.len()
    }

    pub fn sublayer_pairs(&self, index: usize) -> &[(usize, usize)] {
        &self.pairs_per_sublayer[index]
    }

    /// Pairs applied in circuit layer `j ≥ 1` (patterns alternate with depth).
    pub fn pairs_for_layer(&self, layer: usize) -> &[(usize, usize)] {
        debug_assert!(layer >= 1);
        &self.pairs_per_sublayer[(layer - 1) % self.pairs_per_sublayer.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Haar,
    Clifford1q,
}

impl std::str::FromStr for Ensemble {
    type Err = ShadowError;
    fn from_str(s: &str) -> Result<Ensemble> {
        match s {
            "haar" => Ok(Ensemble::Haar),
            "clifford1q" => Ok(Ensemble::Clifford1q),
            other => Err(ShadowError::UnknownEnsemble(other.into())),
        }
    }
}

impl Ensemble {
    pub fn tag(&self) -> &'static str {
        match self {
            Ensemble::Haar => "haar",
            Ensemble::Clifford1q => "clifford1q",
        }
    }
}

/// One sampled measurement circuit: `depth+1` single-qubit layers around the
/// topology's entangling sub-layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    topology: Topology,
    single_qubit_layers: Vec<Vec<Gate1>>,
}

impl Circuit {
    pub fn new(
        n: usize,
        depth: usize,
        ensemble: Ensemble,
        topology: Topology,
        single_qubit_layers: Vec<Vec<Gate1>>,
    ) -> Result<Circuit> {
        if topology.n() != n {
            return Err(ShadowError::DimensionMismatch(format!(
                "topology is for n={}, circuit for n={n}",
                topology.n()
            )));
        }
        if single_qubit_layers.len() != depth + 1
            || single_qubit_layers.iter().any(|l| l.len() != n)
        {
            return Err(ShadowError::InvalidConfig(
                "circuit needs depth+1 single-qubit layers of n gates".into(),
            ));
        }
        for layer in &single_qubit_layers {
            for g in layer {
                if !is_unitary_1q(g, 1e-12) {
                    return Err(ShadowError::InvalidConfig(
                        "stored gate is not unitary to 1e-12".into(),
                    ));
                }
            }
        }
        Ok(Circuit {
            n,
            depth,
            ensemble,
            topology,
            single_qubit_layers,
        })
    }

    pub fn identity(n: usize, depth: usize, topology: Topology) -> Circuit {
        let layers = vec![vec![identity_gate(); n]; depth + 1];
        Circuit {
            n,
            depth,
            ensemble: Ensemble::Clifford1q,
            topology,
            single_qubit_layers: layers,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn single_qubit_layer(&self, layer: usize) -> &[Gate1] {
        &self.single_qubit_layers[layer]
    }

    pub fn set_gate(&mut self, layer: usize, qubit: usize, gate: Gate1) {
        self.single_qubit_layers[layer][qubit] = gate;
    }

    /// Apply the circuit to a state: singles layer 0, then for each layer
    /// `j = 1..=D` the entangling sub-layer followed by singles layer `j`.
    pub fn apply(&self, state: &mut DenseState) {
        for (q, g) in self.single_qubit_layers[0].iter().enumerate() {
            state.apply_1q(g, q);
        }
        for j in 1..=self.depth {
            for &(c, t) in self.topology.pairs_for_layer(j) {
                state.apply_cnot(c, t);
            }
            for (q, g) in self.single_qubit_layers[j].iter().enumerate() {
                state.apply_1q(g, q);
            }
        }
    }

    /// Apply `g†` to a state (used to build `|χ⟩ = g†|z⟩`).
    pub fn apply_adjoint(&self, state: &mut DenseState) {
        for j in (1..=self.depth).rev() {
            for (q, g) in self.single_qubit_layers[j].iter().enumerate() {
                state.apply_1q(&adjoint_1q(g), q);
            }
            for &(c, t) in self.topology.pairs_for_layer(j) {
                state.apply_cnot(c, t);
            }
        }
        for (q, g) in self.single_qubit_layers[0].iter().enumerate() {
            state.apply_1q(&adjoint_1q(g), q);
        }
    }

    /// JSON object for shadow records; gates are stored explicitly so
    /// post-processing never needs the sampler.
    pub fn to_json(&self) -> serde_json::Value {
        let gates: Vec<Vec<[[f64; 2]; 4]>> = self
            .single_qubit_layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|g| {
                        [
                            [g[0].re, g[0].im],
                            [g[1].re, g[1].im],
                            [g[2].re, g[2].im],
                            [g[3].re, g[3].im],
                        ]
                    })
                    .collect()
            })
            .collect();
        serde_json::json!({
            "n": self.n,
            "depth": self.depth,
            "ensemble": self.ensemble.tag(),
            "topology_id": self.topology.id(),
            "gates": gates,
        })
    }

    pub fn from_json(value: &serde_json::Value, topology: &Topology) -> Result<Circuit> {
        let n = value["n"]
            .as_u64()
            .ok_or_else(|| ShadowError::InvalidConfig("circuit JSON missing n".into()))?
            as usize;
        let depth = value["depth"]
            .as_u64()
            .ok_or_else(|| ShadowError::InvalidConfig("circuit JSON missing depth".into()))?
            as usize;
        let ensemble: Ensemble = value["ensemble"]
            .as_str()
            .ok_or_else(|| ShadowError::InvalidConfig("circuit JSON missing ensemble".into()))?
            .parse()?;
        let gates: Vec<Vec<[[f64; 2]; 4]>> = serde_json::from_value(value["gates"].clone())?;
        let layers = gates
            .into_iter()
            .map(|layer| {
                layer
                    .into_iter()
                    .map(|g| {
                        [
                            C64::new(g[0][0], g[0][1]),
                            C64::new(g[1][0], g[1][1]),
                            C64::new(g[2][0], g[2][1]),
                            C64::new(g[3][0], g[3][1]),
                        ]
                    })
                    .collect()
            })
            .collect();
        Circuit::new(n, depth, ensemble, topology.clone(), layers)
    }
}

/// Haar-random 2×2 unitary (Ginibre + QR with positive-real diagonal).
pub fn haar_1q<R: Rng>(rng: &mut R) -> Gate1 {
    let g = |rng: &mut R| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    let (a, c) = (g(rng), g(rng));
    let (b, d) = (g(rng), g(rng));
    // First column: normalize (a, c).
    let n1 = (a.norm_sqr() + c.norm_sqr()).sqrt();
    let (u00, u10) = (a / n1, c / n1);
    // Second column: Gram-Schmidt against the first.
    let ip = u00.conj() * b + u10.conj() * d;
    let (v0, v1) = (b - ip * u00, d - ip * u10);
    let n2 = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    let (u01, u11) = (v0 / n2, v1 / n2);
    // Phase fix (R diagonal positive) keeps the distribution Haar.
    [u00, u01, u10, u11]
}

fn canonical_key(entries: &[C64]) -> Vec<i64> {
    // Global-phase normalization: rotate so the first sizable entry is
    // real positive, then snap to a 1e-9 grid.
    let pivot = entries
        .iter()
        .find(|e| e.norm() > 0.25)
        .expect("unitary has an entry above 0.25");
    let phase = pivot / pivot.norm();
    entries
        .iter()
        .flat_map(|e| {
            let v = e / phase;
            [(v.re * 1e9).round() as i64, (v.im * 1e9).round() as i64]
        })
        .collect()
}

fn mul_1q(a: &Gate1, b: &Gate1) -> Gate1 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

fn mul_2q(a: &Gate2, b: &Gate2) -> Gate2 {
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
}

/// The 24 single-qubit Cliffords in a fixed canonical enumeration:
/// generated from `H` and `S`, deduplicated up to global phase, sorted by
/// the serialization of their phase-normalized entries.
pub fn single_qubit_cliffords() -> &'static Vec<Gate1> {
    static TABLE: OnceLock<Vec<Gate1>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let gens = [hadamard_gate(), phase_gate()];
        let mut seen: HashMap<Vec<i64>, Gate1> = HashMap::new();
        let id = identity_gate();
        seen.insert(canonical_key(&id), id);
        let mut frontier = vec![id];
        while let Some(u) = frontier.pop() {
            for g in &gens {
                let v = mul_1q(g, &u);
                let key = canonical_key(&v);
                if !seen.contains_key(&key) {
                    seen.insert(key, v);
                    frontier.push(v);
                }
            }
        }
        let mut keyed: Vec<(Vec<i64>, Gate1)> = seen.into_iter().collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let table: Vec<Gate1> = keyed.into_iter().map(|(_, g)| g).collect();
        assert_eq!(table.len(), 24, "single-qubit Clifford group has 24 elements");
        table
    })
}

/// Index of `u` in the canonical enumeration, comparing up to global phase.
pub fn clifford_index_of(u: &Gate1) -> Option<usize> {
    static LOOKUP: OnceLock<HashMap<Vec<i64>, usize>> = OnceLock::new();
    let lookup = LOOKUP.get_or_init(|| {
        single_qubit_cliffords()
            .iter()
            .enumerate()
            .map(|(i, g)| (canonical_key(g), i))
            .collect()
    });
    lookup.get(&canonical_key(u)).copied()
}

/// The 11520 two-qubit Cliffords up to global phase (BFS closure over
/// `H⊗1, 1⊗H, S⊗1, 1⊗S, CNOT`). Used to sample the global Clifford
/// ensemble at n = 2.
pub fn two_qubit_cliffords() -> &'static Vec<Gate2> {
    static TABLE: OnceLock<Vec<Gate2>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let o = C64::new(0.0, 0.0);
        let kron = |a: &Gate1, b: &Gate1| {
            let mut m = [o; 16];
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
        let id1 = identity_gate();
        let gens = [
            kron(&hadamard_gate(), &id1),
            kron(&id1, &hadamard_gate()),
            kron(&phase_gate(), &id1),
            kron(&id1, &phase_gate()),
            cnot_dense(),
        ];
        let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut table: Vec<Gate2> = Vec::new();
        let id = kron(&id1, &id1);
        seen.insert(canonical_key(&id), 0);
        table.push(id);
        let mut head = 0;
        while head < table.len() {
            let u = table[head];
            head += 1;
            for g in &gens {
                let v = mul_2q(g, &u);
                let key = canonical_key(&v);
                if !seen.contains_key(&key) {
                    seen.insert(key, table.len());
                    table.push(v);
                }
            }
        }
        assert_eq!(
            table.len(),
            11520,
            "two-qubit Clifford group has 11520 elements up to phase"
        );
        table
    })
}

/// Sample a measurement circuit. Deterministic given the rng stream.
pub fn sample_circuit<R: Rng>(
    n: usize,
    depth: usize,
    ensemble: Ensemble,
    topology: &Topology,
    rng: &mut R,
) -> Result<Circuit> {
    topology.validate()?;
    if topology.n() != n {
        return Err(ShadowError::DimensionMismatch(format!(
            "topology n={} vs requested n={n}",
            topology.n()
        )));
    }
    let layers = (0..=depth)
        .map(|_| {
            (0..n)
                .map(|_| match ensemble {
                    Ensemble::Haar => haar_1q(rng),
                    Ensemble::Clifford1q => {
                        let table = single_qubit_cliffords();
                        table[rng.random_range(0..table.len())]
                    }
                })
                .collect()
        })
        .collect();
    Circuit::new(n, depth, ensemble, topology.clone(), layers)
}

/// Dense unitary of the whole circuit (desk-scale oracle, n ≤ 12).
pub fn circuit_unitary(circuit: &Circuit) -> Result<Array2<C64>> {
    let n = circuit.n();
    if n > 12 {
        return Err(ShadowError::SizeCap(format!("circuit_unitary at n={n}")));
    }
    let d = 1usize << n;
    let mut u = Array2::zeros((d, d));
    for x in 0..d {
        let mut state = DenseState::basis_state(n, x);
        circuit.apply(&mut state);
        for (r, amp) in state.amplitudes().iter().enumerate() {
            u[[r, x]] = *amp;
        }
    }
    Ok(u)
}

/// Dense unitary of one entangling sub-layer (oracle for the MPO tests).
pub fn sublayer_unitary(topology: &Topology, sublayer: usize) -> Result<Array2<C64>> {
    let n = topology.n();
    if n > 12 {
        return Err(ShadowError::SizeCap(format!("sublayer_unitary at n={n}")));
    }
    let d = 1usize << n;
    let mut u = Array2::zeros((d, d));
    for x in 0..d {
        let mut state = DenseState::basis_state(n, x);
        for &(c, t) in topology.sublayer_pairs(sublayer) {
            state.apply_cnot(c, t);
        }
        for (r, amp) in state.amplitudes().iter().enumerate() {
            u[[r, x]] = *amp;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{derive_rng, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn brickwork_patterns() {
        let t = Topology::brickwork(5);
        assert_eq!(t.sublayer_pairs(0), &[(0, 1), (2, 3)]);
        assert_eq!(t.sublayer_pairs(1), &[(1, 2), (3, 4)]);
        t.validate().unwrap();
        let r = Topology::ring(4).unwrap();
        assert_eq!(r.sublayer_pairs(1), &[(1, 2), (0, 3)]);
        assert!(Topology::ring(5).is_err());
    }

    #[test]
    fn clifford_table_has_24_elements_and_is_closed() {
        let table = single_qubit_cliffords();
        assert_eq!(table.len(), 24);
        for a in table {
            for b in table {
                let c = mul_1q(a, b);
                assert!(
                    clifford_index_of(&c).is_some(),
                    "product left the group (up to phase)"
                );
            }
        }
    }

    #[test]
    fn two_qubit_clifford_group_order() {
        assert_eq!(two_qubit_cliffords().len(), 11520);
    }

    #[test]
    fn sampled_circuits_are_structured_and_deterministic() {
        let topo = Topology::brickwork(3);
        let c = sample_circuit(
            3,
            0,
            Ensemble::Clifford1q,
            &topo,
            &mut derive_rng(42, Stream::Circuit, 0),
        )
        .unwrap();
        assert_eq!(c.depth(), 0);
        assert_eq!(c.single_qubit_layer(0).len(), 3);
        for g in c.single_qubit_layer(0) {
            assert!(clifford_index_of(g).is_some());
        }

        let topo5 = Topology::brickwork(5);
        let c5 = sample_circuit(
            5,
            2,
            Ensemble::Haar,
            &topo5,
            &mut derive_rng(42, Stream::Circuit, 1),
        )
        .unwrap();
        assert_eq!(c5.single_qubit_layer(2).len(), 5);

        let again = sample_circuit(
            5,
            2,
            Ensemble::Haar,
            &topo5,
            &mut derive_rng(42, Stream::Circuit, 1),
        )
        .unwrap();
        assert_eq!(c5, again);
    }

    #[test]
    fn circuit_unitary_examples() {
        let topo = Topology::brickwork(2);
        let c = Circuit::identity(2, 0, topo.clone());
        let u = circuit_unitary(&c).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u[[i, j]].re, expect, epsilon = 1e-15);
            }
        }

        let c = Circuit::identity(2, 1, topo);
        let u = circuit_unitary(&c).unwrap();
        let cnot = cnot_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(u[[i, j]].re, cnot[4 * i + j].re, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sampled_unitaries_are_unitary() {
        let topo = Topology::brickwork(3);
        for i in 0..5 {
            let c = sample_circuit(
                3,
                2,
                Ensemble::Haar,
                &topo,
                &mut derive_rng(9, Stream::Circuit, i),
            )
            .unwrap();
            let u = circuit_unitary(&c).unwrap();
            let d = u.nrows();
            for i in 0..d {
                for j in 0..d {
                    let ip: C64 = (0..d).map(|k| u[[k, i]].conj() * u[[k, j]]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip.re - expect).abs() < 1e-10);
                    assert!(ip.im.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn adjoint_inverts_the_circuit() {
        let topo = Topology::brickwork(4);
        let c = sample_circuit(
            4,
            2,
            Ensemble::Haar,
            &topo,
            &mut derive_rng(1, Stream::Circuit, 0),
        )
        .unwrap();
        let mut s = DenseState::random_haar(4, &mut derive_rng(1, Stream::Input, 0));
        let original = s.clone();
        c.apply(&mut s);
        c.apply_adjoint(&mut s);
        for (a, b) in s.amplitudes().iter().zip(original.amplitudes()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn circuit_json_round_trip() {
        let topo = Topology::brickwork(3);
        let c = sample_circuit(
            3,
            1,
            Ensemble::Clifford1q,
            &topo,
            &mut derive_rng(17, Stream::Circuit, 0),
        )
        .unwrap();
        let json = c.to_json();
        let back = Circuit::from_json(&json, &topo).unwrap();
        assert_eq!(c, back);
    }
}
