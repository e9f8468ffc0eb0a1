//! Tensor trains over binary indices: TT-SVD, rounding, arithmetic, and
//! rank-adaptive two-site (MALS) fitting.
//!
//! A [`TensorTrain`] represents a real vector `v ∈ ℝ^{2^n}` indexed by
//! bitstrings `k` (qubit 0 = most significant bit) as a chain of order-3
//! cores `G_l` of shape `(r_{l-1}, 2, r_l)` with `r_0 = r_n = 1`:
//!
//! `v_k = G_0[k_0] · G_1[k_1] · … · G_{n-1}[k_{n-1}]`.
//!
//! All spectra and calibration vectors are real; complex tensors appear
//! only on the circuit/MPO side.

use crate::{Result, ShadowError};
use ndarray::{Array2, Array3};
use ndarray_linalg::SVD;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Array3<f64>>,
}

/// Rank/accuracy budget for SVD truncations.
#[derive(Debug, Clone)]
pub struct Truncation {
    /// Hard cap on every bond dimension.
    pub max_rank: Option<usize>,
    /// Drop singular values below `rel_tol · σ_max`.
    pub rel_tol: f64,
    /// Drop singular values below this absolute floor (used to avoid
    /// fitting statistical noise).
    pub abs_floor: f64,
}

impl Truncation {
    pub fn exact() -> Truncation {
        Truncation {
            max_rank: None,
            rel_tol: 1e-14,
            abs_floor: 0.0,
        }
    }

    pub fn rank(max_rank: usize) -> Truncation {
        Truncation {
            max_rank: Some(max_rank),
            rel_tol: 1e-14,
            abs_floor: 0.0,
        }
    }

    pub fn tolerance(rel_tol: f64) -> Truncation {
        Truncation {
            max_rank: None,
            rel_tol,
            abs_floor: 0.0,
        }
    }

    fn kept(&self, sigma: &[f64]) -> usize {
        let smax = sigma.first().copied().unwrap_or(0.0);
        let mut keep = sigma
            .iter()
            .take_while(|&&s| s > self.rel_tol * smax && s > self.abs_floor)
            .count();
        if let Some(cap) = self.max_rank {
            keep = keep.min(cap);
        }
        keep.max(1)
    }
}

fn svd_f64(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let (u, s, vt) = m.svd(true, true).expect("LAPACK SVD");
    (u.unwrap(), s.to_vec(), vt.unwrap())
}

impl TensorTrain {
    pub fn from_cores(cores: Vec<Array3<f64>>) -> Result<TensorTrain> {
        if cores.is_empty() {
            return Err(ShadowError::InvalidConfig("empty tensor train".into()));
        }
        if cores[0].shape()[0] != 1 || cores.last().unwrap().shape()[2] != 1 {
            return Err(ShadowError::InvalidConfig(
                "tensor train must have boundary ranks 1".into(),
            ));
        }
        for w in cores.windows(2) {
            if w[0].shape()[2] != w[1].shape()[0] {
                return Err(ShadowError::InvalidConfig(
                    "tensor train bond dimensions do not chain".into(),
                ));
            }
        }
        Ok(TensorTrain { cores })
    }

    /// Rank-1 train for a product vector `⊗_l (a_l, b_l)`.
    pub fn product(factors: &[[f64; 2]]) -> TensorTrain {
        let cores = factors
            .iter()
            .map(|f| {
                let mut c = Array3::zeros((1, 2, 1));
                c[[0, 0, 0]] = f[0];
                c[[0, 1, 0]] = f[1];
                c
            })
            .collect();
        TensorTrain { cores }
    }

    pub fn constant(n: usize, value: f64) -> TensorTrain {
        let mut factors = vec![[1.0, 1.0]; n];
        factors[0] = [value, value];
        TensorTrain::product(&factors)
    }

    pub fn zeros(n: usize) -> TensorTrain {
        TensorTrain::product(&vec![[0.0, 0.0]; n])
    }

    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Array3<f64>] {
        &self.cores
    }

    /// Interior bond dimensions `(r_1, …, r_{n-1})`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| c.shape()[2])
            .collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// `v_k` in `O(n·χ²)`.
    pub fn entry(&self, k: usize) -> f64 {
        let n = self.n();
        let mut row = vec![1.0f64];
        for (l, core) in self.cores.iter().enumerate() {
            let bit = (k >> (n - 1 - l)) & 1;
            let (rb, re) = (core.shape()[0], core.shape()[2]);
            let mut next = vec![0.0; re];
            for b in 0..rb {
                let rv = row[b];
                if rv == 0.0 {
                    continue;
                }
                for (e, slot) in next.iter_mut().enumerate() {
                    *slot += rv * core[[b, bit, e]];
                }
            }
            row = next;
        }
        row[0]
    }

    /// Dense vector (n ≤ 20).
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n > 20 {
            return Err(ShadowError::SizeCap(format!("dense tensor train at n={n}")));
        }
        let mut acc: Vec<Vec<f64>> = vec![vec![1.0]];
        for core in &self.cores {
            let (rb, re) = (core.shape()[0], core.shape()[2]);
            let mut next = Vec::with_capacity(acc.len() * 2);
            for row in &acc {
                for bit in 0..2 {
                    let mut v = vec![0.0; re];
                    for b in 0..rb {
                        let rv = row[b];
                        if rv == 0.0 {
                            continue;
                        }
                        for (e, slot) in v.iter_mut().enumerate() {
                            *slot += rv * core[[b, bit, e]];
                        }
                    }
                    next.push(v);
                }
            }
            acc = next;
        }
        Ok(acc.into_iter().map(|v| v[0]).collect())
    }

    pub fn inner(&self, other: &TensorTrain) -> Result<f64> {
        if self.n() != other.n() {
            return Err(ShadowError::DimensionMismatch(
                "inner product of tensor trains with different lengths".into(),
            ));
        }
        // env[α, β] transfer matrix between the two chains.
        let mut env = Array2::from_elem((1, 1), 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let (ra, rb) = (a.shape()[2], b.shape()[2]);
            let mut next = Array2::zeros((ra, rb));
            for al in 0..a.shape()[0] {
                for bl in 0..b.shape()[0] {
                    let e = env[[al, bl]];
                    if e == 0.0 {
                        continue;
                    }
                    for bit in 0..2 {
                        for ar in 0..ra {
                            let av = a[[al, bit, ar]];
                            if av == 0.0 {
                                continue;
                            }
                            for br in 0..rb {
                                next[[ar, br]] += e * av * b[[bl, bit, br]];
                            }
                        }
                    }
                }
            }
            env = next;
        }
        Ok(env[[0, 0]])
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).expect("matching lengths").max(0.0).sqrt()
    }

    pub fn scale(&self, c: f64) -> TensorTrain {
        let mut cores = self.cores.clone();
        cores[0].mapv_inplace(|v| v * c);
        TensorTrain { cores }
    }

    /// Exact addition: bond dimensions add (block-diagonal cores).
    pub fn add(&self, other: &TensorTrain) -> Result<TensorTrain> {
        let n = self.n();
        if other.n() != n {
            return Err(ShadowError::DimensionMismatch(
                "adding tensor trains with different lengths".into(),
            ));
        }
        if n == 1 {
            let mut c = self.cores[0].clone();
            c += &other.cores[0];
            return Ok(TensorTrain { cores: vec![c] });
        }
        let mut cores = Vec::with_capacity(n);
        for l in 0..n {
            let a = &self.cores[l];
            let b = &other.cores[l];
            let (a0, a2) = (a.shape()[0], a.shape()[2]);
            let (b0, b2) = (b.shape()[0], b.shape()[2]);
            let core = if l == 0 {
                let mut c = Array3::zeros((1, 2, a2 + b2));
                for bit in 0..2 {
                    for e in 0..a2 {
                        c[[0, bit, e]] = a[[0, bit, e]];
                    }
                    for e in 0..b2 {
                        c[[0, bit, a2 + e]] = b[[0, bit, e]];
                    }
                }
                c
            } else if l == n - 1 {
                let mut c = Array3::zeros((a0 + b0, 2, 1));
                for bit in 0..2 {
                    for s in 0..a0 {
                        c[[s, bit, 0]] = a[[s, bit, 0]];
                    }
                    for s in 0..b0 {
                        c[[a0 + s, bit, 0]] = b[[s, bit, 0]];
                    }
                }
                c
            } else {
                let mut c = Array3::zeros((a0 + b0, 2, a2 + b2));
                for bit in 0..2 {
                    for s in 0..a0 {
                        for e in 0..a2 {
                            c[[s, bit, e]] = a[[s, bit, e]];
                        }
                    }
                    for s in 0..b0 {
                        for e in 0..b2 {
                            c[[a0 + s, bit, a2 + e]] = b[[s, bit, e]];
                        }
                    }
                }
                c
            };
            cores.push(core);
        }
        Ok(TensorTrain { cores })
    }

    /// Re-compress: right-to-left orthogonalization followed by a
    /// left-to-right truncated SVD sweep. Returns the compressed train and
    /// the ℓ2 norm of everything discarded.
    pub fn round(&self, trunc: &Truncation) -> (TensorTrain, f64) {
        let n = self.n();
        // Threshold against the global norm (distributed over the n-1
        // bonds), so that globally tiny tensors compress to rank 1.
        let norm = self.norm();
        let trunc = Truncation {
            max_rank: trunc.max_rank,
            rel_tol: trunc.rel_tol,
            abs_floor: trunc
                .abs_floor
                .max(trunc.rel_tol * norm / ((n.max(2) - 1) as f64).sqrt()),
        };
        let trunc = &trunc;
        let mut cores = self.cores.clone();
        // Right-to-left: make cores 1..n right-orthonormal.
        for l in (1..n).rev() {
            let core = &cores[l];
            let (rb, re) = (core.shape()[0], core.shape()[2]);
            let m = core
                .to_shape((rb, 2 * re))
                .expect("contiguous core")
                .to_owned();
            // LQ via SVD: M = U Σ Vᵀ, keep Q = Vᵀ (orthonormal rows).
            let (u, s, vt) = svd_f64(&m);
            let r = s.iter().take_while(|&&x| x > 0.0).count().max(1);
            let mut q: Array3<f64> = Array3::zeros((r, 2, re));
            for i in 0..r {
                for bit in 0..2 {
                    for e in 0..re {
                        q[[i, bit, e]] = vt[[i, bit * re + e]];
                    }
                }
            }
            cores[l] = q;
            // Absorb U·Σ into the left neighbor.
            let left = &cores[l - 1];
            let (lb, le) = (left.shape()[0], left.shape()[2]);
            debug_assert_eq!(le, rb);
            let mut newleft = Array3::zeros((lb, 2, r));
            for b in 0..lb {
                for bit in 0..2 {
                    for i in 0..r {
                        let mut acc = 0.0;
                        for e in 0..le {
                            acc += left[[b, bit, e]] * u[[e, i]] * s[i];
                        }
                        newleft[[b, bit, i]] = acc;
                    }
                }
            }
            cores[l - 1] = newleft;
        }
        // Left-to-right truncation sweep.
        let mut discarded_sq = 0.0;
        for l in 0..n - 1 {
            let core = &cores[l];
            let (rb, re) = (core.shape()[0], core.shape()[2]);
            let m = core
                .to_shape((rb * 2, re))
                .expect("contiguous core")
                .to_owned();
            let (u, s, vt) = svd_f64(&m);
            let keep = trunc.kept(&s);
            discarded_sq += s.iter().skip(keep).map(|x| x * x).sum::<f64>();
            let mut newcore = Array3::zeros((rb, 2, keep));
            for b in 0..rb {
                for bit in 0..2 {
                    for i in 0..keep {
                        newcore[[b, bit, i]] = u[[b * 2 + bit, i]];
                    }
                }
            }
            cores[l] = newcore;
            let right = &cores[l + 1];
            let (qb, qe) = (right.shape()[0], right.shape()[2]);
            let mut newright = Array3::zeros((keep, 2, qe));
            for i in 0..keep {
                for bit in 0..2 {
                    for e in 0..qe {
                        let mut acc = 0.0;
                        for q in 0..qb.min(vt.ncols()) {
                            acc += s[i] * vt[[i, q]] * right[[q, bit, e]];
                        }
                        newright[[i, bit, e]] = acc;
                    }
                }
            }
            cores[l + 1] = newright;
        }
        (TensorTrain { cores }, discarded_sq.sqrt())
    }

    /// Check the isometry conditions of a left-canonical train: all cores
    /// but the last satisfy `Σ_{α,bit} G[α,bit,β] G[α,bit,β'] = δ_{ββ'}`.
    pub fn left_orthogonality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for core in &self.cores[..self.cores.len() - 1] {
            let (rb, re) = (core.shape()[0], core.shape()[2]);
            for b1 in 0..re {
                for b2 in 0..re {
                    let mut acc = 0.0;
                    for a in 0..rb {
                        for bit in 0..2 {
                            acc += core[[a, bit, b1]] * core[[a, bit, b2]];
                        }
                    }
                    let expect = if b1 == b2 { 1.0 } else { 0.0 };
                    worst = worst.max((acc - expect).abs());
                }
            }
        }
        worst
    }

    pub fn to_json(&self) -> serde_json::Value {
        let shapes: Vec<[usize; 3]> = self
            .cores
            .iter()
            .map(|c| [c.shape()[0], c.shape()[1], c.shape()[2]])
            .collect();
        let cores: Vec<Vec<f64>> = self
            .cores
            .iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        serde_json::json!({
            "n": self.n(),
            "shapes": shapes,
            "cores": cores,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<TensorTrain> {
        #[derive(Deserialize, Serialize)]
        struct TtJson {
            n: usize,
            shapes: Vec<[usize; 3]>,
            cores: Vec<Vec<f64>>,
        }
        let raw: TtJson = serde_json::from_value(value.clone())?;
        if raw.shapes.len() != raw.n || raw.cores.len() != raw.n {
            return Err(ShadowError::InvalidConfig(
                "tensor train JSON has inconsistent lengths".into(),
            ));
        }
        let cores = raw
            .shapes
            .iter()
            .zip(raw.cores)
            .map(|(shape, flat)| {
                Array3::from_shape_vec((shape[0], shape[1], shape[2]), flat)
                    .map_err(|e| ShadowError::InvalidConfig(format!("bad core shape: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        TensorTrain::from_cores(cores)
    }
}

/// Sequential reshape+SVD sweep over a dense vector. Returns the train and
/// the reported truncation error (ℓ2 combination of discarded singular
/// values; an upper bound on the actual dense residual).
pub fn tt_svd(v: &[f64], trunc: &Truncation) -> Result<(TensorTrain, f64)> {
    let len = v.len();
    if !len.is_power_of_two() || len < 2 {
        return Err(ShadowError::DimensionMismatch(format!(
            "tt_svd needs a 2^n vector with n ≥ 1, got length {len}"
        )));
    }
    let n = len.trailing_zeros() as usize;
    if n > 20 {
        return Err(ShadowError::SizeCap(format!("tt_svd at n={n}")));
    }
    let mut cores = Vec::with_capacity(n);
    let mut rest = Array2::from_shape_vec((1, len), v.to_vec()).expect("shape");
    let mut discarded_sq = 0.0;
    for _ in 0..n - 1 {
        let (rb, cols) = rest.dim();
        let m = rest
            .into_shape_with_order((rb * 2, cols / 2))
            .expect("reshape");
        let (u, s, vt) = svd_f64(&m);
        let keep = trunc.kept(&s);
        discarded_sq += s.iter().skip(keep).map(|x| x * x).sum::<f64>();
        let mut core = Array3::zeros((rb, 2, keep));
        for b in 0..rb {
            for bit in 0..2 {
                for i in 0..keep {
                    core[[b, bit, i]] = u[[b * 2 + bit, i]];
                }
            }
        }
        cores.push(core);
        let mut next = Array2::zeros((keep, m.ncols()));
        for i in 0..keep {
            for c in 0..m.ncols() {
                next[[i, c]] = s[i] * vt[[i, c]];
            }
        }
        rest = next;
    }
    let (rb, cols) = rest.dim();
    debug_assert_eq!(cols, 2);
    let mut last = Array3::zeros((rb, 2, 1));
    for b in 0..rb {
        for bit in 0..2 {
            last[[b, bit, 0]] = rest[[b, bit]];
        }
    }
    cores.push(last);
    Ok((TensorTrain { cores }, discarded_sq.sqrt()))
}

/// Streamed average of tensor trains: batched exact adds re-compressed by
/// [`TensorTrain::round`] with the given tolerance. The scalable side of
/// the recovery problem; at desk scale the dense mean is exact and cheap.
pub fn tt_streaming_mean<I>(terms: I, batch_size: usize, trunc: &Truncation) -> Result<TensorTrain>
where
    I: IntoIterator<Item = TensorTrain>,
{
    let mut acc: Option<TensorTrain> = None;
    let mut pending = 0usize;
    let mut count = 0usize;
    for term in terms {
        count += 1;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
        pending += 1;
        if pending >= batch_size {
            let (rounded, _) = acc.take().expect("accumulator").round(trunc);
            acc = Some(rounded);
            pending = 0;
        }
    }
    let acc = acc.ok_or(ShadowError::EmptyRecords)?;
    let (rounded, _) = acc.round(trunc);
    Ok(rounded.scale(1.0 / count as f64))
}

/// Target of a MALS fit.
pub enum FitTarget<'a> {
    Dense(&'a [f64]),
    Tt(&'a TensorTrain),
}

#[derive(Debug, Clone)]
pub struct MalsOptions {
    pub max_rank: usize,
    pub sweeps: usize,
    /// Stop when the relative residual improvement per sweep drops below
    /// this.
    pub rel_tol: f64,
    /// Rank adaptation: relative singular-value threshold of the two-site
    /// splits.
    pub split_rel_tol: f64,
    /// Optional absolute singular-value floor (e.g. a statistical noise
    /// level) so splits do not chase sampling fluctuations.
    pub split_abs_floor: f64,
}

impl Default for MalsOptions {
    fn default() -> Self {
        MalsOptions {
            max_rank: 16,
            sweeps: 12,
            rel_tol: 1e-10,
            split_rel_tol: 1e-8,
            split_abs_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MalsReport {
    /// Absolute ℓ2 residual after every sweep.
    pub residuals: Vec<f64>,
    pub target_norm: f64,
    pub converged: bool,
}

impl MalsReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

/// Two-site alternating least-squares fit of a low-rank train to `target`.
///
/// The fit is kept in mixed-canonical form, so each local problem is solved
/// exactly by projecting the target onto the orthonormal interfaces; the
/// merged two-site core is re-split by a truncated SVD (rank-adaptive up to
/// `max_rank`). Returns the best iterate and per-sweep residuals; if the
/// sweep budget runs out before the improvement drops below `rel_tol`, the
/// report's `converged` flag is false.
pub fn mals_fit(
    target: FitTarget,
    init: &TensorTrain,
    opts: &MalsOptions,
) -> Result<(TensorTrain, MalsReport)> {
    let target_tt_storage;
    let target_tt: &TensorTrain = match target {
        FitTarget::Tt(t) => t,
        FitTarget::Dense(v) => {
            let (t, _) = tt_svd(v, &Truncation::exact())?;
            target_tt_storage = t;
            &target_tt_storage
        }
    };
    let n = target_tt.n();
    if init.n() != n {
        return Err(ShadowError::DimensionMismatch(format!(
            "init has {} sites, target {n}",
            init.n()
        )));
    }
    if n < 2 {
        // Single site: the "fit" is the target itself.
        let report = MalsReport {
            residuals: vec![0.0],
            target_norm: target_tt.norm(),
            converged: true,
        };
        return Ok((target_tt.clone(), report));
    }

    let target_norm_sq = target_tt.inner(target_tt)?;
    let target_norm = target_norm_sq.max(0.0).sqrt();

    // Right-canonicalize the initial guess.
    let (mut fit, _) = init.round(&Truncation::exact());
    // `round` leaves the train left-canonical; flip to right-canonical by
    // one more orthogonalization pass so the first local solve sees
    // orthonormal right interfaces.
    right_canonicalize(&mut fit);

    // Right environments between target and fit: env[l] joins cores l..n-1.
    let mut right_env: Vec<Array2<f64>> = vec![Array2::from_elem((1, 1), 1.0); n + 1];
    for l in (0..n).rev() {
        right_env[l] = env_step_right(&target_tt.cores()[l], &fit.cores[l], &right_env[l + 1]);
    }
    let mut left_env: Vec<Array2<f64>> = vec![Array2::from_elem((1, 1), 1.0); n + 1];

    let mut residuals: Vec<f64> = Vec::new();
    let mut converged = false;
    let trunc = Truncation {
        max_rank: Some(opts.max_rank),
        rel_tol: opts.split_rel_tol,
        abs_floor: opts.split_abs_floor,
    };

    for _sweep in 0..opts.sweeps {
        // Left-to-right half sweep.
        for l in 0..n - 1 {
            let b = local_projection(target_tt, l, &left_env[l], &right_env[l + 2]);
            let (core_l, core_r) = split_two_site(&b, &trunc, true);
            fit.cores[l] = core_l;
            fit.cores[l + 1] = core_r;
            left_env[l + 1] = env_step_left(&target_tt.cores()[l], &fit.cores[l], &left_env[l]);
        }
        // Right-to-left half sweep.
        for l in (0..n - 1).rev() {
            let b = local_projection(target_tt, l, &left_env[l], &right_env[l + 2]);
            let (core_l, core_r) = split_two_site(&b, &trunc, false);
            fit.cores[l] = core_l;
            fit.cores[l + 1] = core_r;
            right_env[l + 1] =
                env_step_right(&target_tt.cores()[l + 1], &fit.cores[l + 1], &right_env[l + 2]);
        }

        // ‖t − f‖² = ‖t‖² − 2⟨t,f⟩ + ‖f‖².
        let cross = target_tt.inner(&fit)?;
        let fit_sq = fit.inner(&fit)?;
        let res = (target_norm_sq - 2.0 * cross + fit_sq).max(0.0).sqrt();
        if let Some(prev) = residuals.last().copied() {
            let improvement = (prev - res) / prev.max(1e-300);
            residuals.push(res);
            if improvement.abs() < opts.rel_tol {
                converged = true;
                break;
            }
        } else {
            residuals.push(res);
        }
    }

    Ok((
        fit,
        MalsReport {
            residuals,
            target_norm,
            converged,
        },
    ))
}

fn right_canonicalize(tt: &mut TensorTrain) {
    let n = tt.cores.len();
    for l in (1..n).rev() {
        let core = &tt.cores[l];
        let (rb, re) = (core.shape()[0], core.shape()[2]);
        let m = core.to_shape((rb, 2 * re)).expect("contiguous").to_owned();
        let (u, s, vt) = svd_f64(&m);
        let r = s.iter().take_while(|&&x| x > 0.0).count().max(1);
        let mut q: Array3<f64> = Array3::zeros((r, 2, re));
        for i in 0..r {
            for bit in 0..2 {
                for e in 0..re {
                    q[[i, bit, e]] = vt[[i, bit * re + e]];
                }
            }
        }
        tt.cores[l] = q;
        let left = &tt.cores[l - 1];
        let (lb, le) = (left.shape()[0], left.shape()[2]);
        let mut newleft = Array3::zeros((lb, 2, r));
        for b in 0..lb {
            for bit in 0..2 {
                for i in 0..r {
                    let mut acc = 0.0;
                    for e in 0..le {
                        acc += left[[b, bit, e]] * u[[e, i]] * s[i];
                    }
                    newleft[[b, bit, i]] = acc;
                }
            }
        }
        tt.cores[l - 1] = newleft;
    }
}

// env' [α, β] = Σ env[a, b] t[a, bit, α] f[b, bit, β]
fn env_step_left(t: &Array3<f64>, f: &Array3<f64>, env: &Array2<f64>) -> Array2<f64> {
    let (ta, te) = (t.shape()[0], t.shape()[2]);
    let (fa, fe) = (f.shape()[0], f.shape()[2]);
    let mut out = Array2::zeros((te, fe));
    for a in 0..ta {
        for b in 0..fa {
            let e = env[[a, b]];
            if e == 0.0 {
                continue;
            }
            for bit in 0..2 {
                for al in 0..te {
                    let tv = t[[a, bit, al]];
                    if tv == 0.0 {
                        continue;
                    }
                    for be in 0..fe {
                        out[[al, be]] += e * tv * f[[b, bit, be]];
                    }
                }
            }
        }
    }
    out
}

// env'[α, β] = Σ t[α, bit, a] f[β, bit, b] env[a, b]
fn env_step_right(t: &Array3<f64>, f: &Array3<f64>, env: &Array2<f64>) -> Array2<f64> {
    let (ta, te) = (t.shape()[0], t.shape()[2]);
    let (fa, fe) = (f.shape()[0], f.shape()[2]);
    let mut out = Array2::zeros((ta, fa));
    for a in 0..ta {
        for b in 0..fa {
            let mut acc = 0.0;
            for bit in 0..2 {
                for al in 0..te {
                    let tv = t[[a, bit, al]];
                    if tv == 0.0 {
                        continue;
                    }
                    for be in 0..fe {
                        acc += tv * f[[b, bit, be]] * env[[al, be]];
                    }
                }
            }
            out[[a, b]] = acc;
        }
    }
    out
}

// Projected two-site target B[α, bit_l, bit_{l+1}, β] as a matrix
// (α·2 × 2·β) where α, β are fit bond dims at l and l+2.
fn local_projection(
    target: &TensorTrain,
    l: usize,
    left: &Array2<f64>,
    right: &Array2<f64>,
) -> Array2<f64> {
    let tl = &target.cores()[l];
    let tr = &target.cores()[l + 1];
    let (ta, tm) = (tl.shape()[0], tl.shape()[2]);
    let tb = tr.shape()[2];
    let fa = left.ncols();
    let fb = right.ncols();
    // left[a, α] tl[a, b0, m] tr[m, b1, c] right[c, β]
    let mut h = ndarray::Array3::<f64>::zeros((fa, 2, tm));
    for a in 0..ta {
        for alpha in 0..fa {
            let lv = left[[a, alpha]];
            if lv == 0.0 {
                continue;
            }
            for bit in 0..2 {
                for m in 0..tm {
                    h[[alpha, bit, m]] += lv * tl[[a, bit, m]];
                }
            }
        }
    }
    let mut out = Array2::zeros((fa * 2, 2 * fb));
    for alpha in 0..fa {
        for b0 in 0..2 {
            for m in 0..tm {
                let hv = h[[alpha, b0, m]];
                if hv == 0.0 {
                    continue;
                }
                for b1 in 0..2 {
                    for c in 0..tb {
                        let tv = tr[[m, b1, c]];
                        if tv == 0.0 {
                            continue;
                        }
                        for beta in 0..fb {
                            out[[alpha * 2 + b0, b1 * fb + beta]] += hv * tv * right[[c, beta]];
                        }
                    }
                }
            }
        }
    }
    out
}

// Split the two-site core; `left_canonical` controls which side absorbs the
// singular values.
fn split_two_site(
    b: &Array2<f64>,
    trunc: &Truncation,
    left_canonical: bool,
) -> (Array3<f64>, Array3<f64>) {
    let (rows, cols) = b.dim();
    let fa = rows / 2;
    let fb = cols / 2;
    let (u, s, vt) = svd_f64(b);
    let keep = trunc.kept(&s);
    let mut core_l = Array3::zeros((fa, 2, keep));
    let mut core_r = Array3::zeros((keep, 2, fb));
    for i in 0..keep {
        for a in 0..fa {
            for bit in 0..2 {
                let val = u[[a * 2 + bit, i]];
                core_l[[a, bit, i]] = if left_canonical { val } else { val * s[i] };
            }
        }
        for bit in 0..2 {
            for beta in 0..fb {
                let val = vt[[i, bit * fb + beta]];
                core_r[[i, bit, beta]] = if left_canonical { val * s[i] } else { val };
            }
        }
    }
    (core_l, core_r)
}

/// Fit a train `g` with `g_k ≈ 1/f_k`: truncated SVD of the dense inverse
/// refined by MALS, plus a probe report. Fails if any probed magnitude is
/// below the guard.
pub fn tt_elementwise_inverse_fit(
    f: &TensorTrain,
    max_rank: usize,
    guard: f64,
    probes: usize,
    seed: u64,
) -> Result<(TensorTrain, f64)> {
    let n = f.n();
    let dense = f.to_dense()?;
    let min_abs = dense.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_abs < guard {
        return Err(ShadowError::NonInvertibleSector(format!(
            "min |f_k| = {min_abs:.3e} below guard {guard:.3e}"
        )));
    }
    let inverse: Vec<f64> = dense.iter().map(|v| 1.0 / v).collect();
    let (init, _) = tt_svd(&inverse, &Truncation::rank(max_rank))?;
    let opts = MalsOptions {
        max_rank,
        sweeps: 8,
        ..MalsOptions::default()
    };
    let (fit, _) = mals_fit(FitTarget::Dense(&inverse), &init, &opts)?;

    let mut rng = crate::derive_rng(seed, crate::Stream::Bootstrap, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let k = rng.random_range(0..(1usize << n));
        let err = (f.entry(k) * fit.entry(k) - 1.0).abs();
        worst = worst.max(err);
    }
    Ok((fit, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{derive_rng, Stream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = derive_rng(seed, Stream::Bootstrap, 7);
        (0..(1usize << n)).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_tt(n: usize, rank: usize, seed: u64) -> TensorTrain {
        let mut rng = derive_rng(seed, Stream::Bootstrap, 11);
        let mut cores = Vec::new();
        let mut rb = 1;
        for l in 0..n {
            let re = if l == n - 1 {
                1
            } else {
                rank.min(1 << (l + 1)).min(1 << (n - l - 1))
            };
            let mut c = Array3::zeros((rb, 2, re));
            for v in c.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            cores.push(c);
            rb = re;
        }
        TensorTrain::from_cores(cores).unwrap()
    }

    #[test]
    fn product_spectrum_has_rank_one() {
        let n = 6;
        let factors = vec![[1.0, 1.0 / 3.0]; n];
        let dense = TensorTrain::product(&factors).to_dense().unwrap();
        let (tt, err) = tt_svd(&dense, &Truncation::exact()).unwrap();
        assert!(tt.ranks().iter().all(|&r| r == 1), "ranks {:?}", tt.ranks());
        assert!(err < 1e-12);
        assert_abs_diff_eq!(tt.entry(0b101000), 1.0 / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tt.entry(0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_vector_gives_zero_train_with_rank_one() {
        let v = vec![0.0; 16];
        let (tt, _) = tt_svd(&v, &Truncation::exact()).unwrap();
        assert!(tt.ranks().iter().all(|&r| r == 1));
        assert_eq!(tt.to_dense().unwrap(), v);
    }

    #[test]
    fn full_rank_round_trip() {
        for n in 2..=8usize {
            let v = random_vec(n, n as u64);
            let (tt, err) = tt_svd(&v, &Truncation::exact()).unwrap();
            let back = tt.to_dense().unwrap();
            for (a, b) in v.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn entries_match_dense() {
        let tt = random_tt(7, 5, 3);
        let dense = tt.to_dense().unwrap();
        for k in [0usize, 1, 17, 63, 127] {
            assert_abs_diff_eq!(tt.entry(k), dense[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn add_ranks_then_cancel() {
        let a = random_tt(5, 3, 1);
        let sum = a.add(&a.scale(-1.0)).unwrap();
        let ra: Vec<usize> = a.ranks();
        let rs: Vec<usize> = sum.ranks();
        for (x, y) in ra.iter().zip(&rs) {
            assert_eq!(2 * x, *y, "ranks add before rounding");
        }
        let (rounded, _) = sum.round(&Truncation::tolerance(1e-12));
        let dense = rounded.to_dense().unwrap();
        for v in dense {
            assert!(v.abs() < 1e-10);
        }
        // With an absolute floor the numerically-zero remainder collapses.
        let floored = Truncation {
            max_rank: None,
            rel_tol: 1e-12,
            abs_floor: 1e-12,
        };
        let (collapsed, _) = sum.round(&floored);
        assert!(collapsed.max_rank() <= 1);
    }

    #[test]
    fn rounding_at_original_rank_is_lossless() {
        let tt = random_tt(6, 4, 9);
        let dense = tt.to_dense().unwrap();
        let (rounded, _) = tt.round(&Truncation::rank(4));
        let back = rounded.to_dense().unwrap();
        for (a, b) in dense.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(rounded.left_orthogonality_defect() < 1e-10);
    }

    #[test]
    fn reported_truncation_error_bounds_actual() {
        // Rank-4 signal plus small noise: the reported error is an upper
        // bound on the dense residual and stays within the quasi-optimality
        // factor √(n-1) of the noise norm (which bounds the best rank-4
        // approximation error).
        let n = 8;
        let signal = random_tt(n, 4, 21);
        let mut v = signal.to_dense().unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut rng = derive_rng(22, Stream::Bootstrap, 0);
        let eps = 1e-4 * norm;
        let noise: Vec<f64> = (0..v.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let noise_norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (slot, nv) in v.iter_mut().zip(&noise) {
            *slot += eps * nv / noise_norm;
        }

        let (tt, reported) = tt_svd(&v, &Truncation::rank(4)).unwrap();
        let back = tt.to_dense().unwrap();
        let actual = v
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(reported >= actual - 1e-12, "reported {reported} < actual {actual}");
        let best_bound = eps;
        assert!(
            actual <= ((n - 1) as f64).sqrt() * best_bound + 1e-12,
            "actual {actual} vs quasi-optimal bound {}",
            ((n - 1) as f64).sqrt() * best_bound
        );
    }

    #[test]
    fn mals_recovers_exactly_representable_target() {
        let n = 7;
        let target = random_tt(n, 4, 33);
        let dense = target.to_dense().unwrap();
        let init = TensorTrain::product(&vec![[1.0, 1.0 / 3.0]; n]);
        let opts = MalsOptions {
            max_rank: 4,
            sweeps: 10,
            ..MalsOptions::default()
        };
        let (fit, report) = mals_fit(FitTarget::Dense(&dense), &init, &opts).unwrap();
        assert!(
            report.final_residual() < 1e-8,
            "residual {}",
            report.final_residual()
        );
        assert!(fit.max_rank() <= 4);
        // Residuals never increase between sweeps.
        for w in report.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * report.target_norm.max(1.0));
        }
    }

    #[test]
    fn mals_rank_one_matches_tt_svd_truncation() {
        let n = 6;
        let target = random_tt(n, 2, 44);
        let dense = target.to_dense().unwrap();
        let (svd_tt, _) = tt_svd(&dense, &Truncation::rank(1)).unwrap();
        let svd_back = svd_tt.to_dense().unwrap();
        let svd_residual = dense
            .iter()
            .zip(&svd_back)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();

        let init = TensorTrain::constant(n, 1.0);
        let opts = MalsOptions {
            max_rank: 1,
            sweeps: 24,
            ..MalsOptions::default()
        };
        let (_, report) = mals_fit(FitTarget::Dense(&dense), &init, &opts).unwrap();
        assert!(
            report.final_residual() <= svd_residual + 1e-6,
            "MALS {} vs TT-SVD {}",
            report.final_residual(),
            svd_residual
        );
    }

    #[test]
    fn streamed_mean_matches_dense_mean() {
        let n = 5;
        let terms: Vec<TensorTrain> = (0..50).map(|i| random_tt(n, 2, 100 + i)).collect();
        let dense_mean: Vec<f64> = {
            let mut acc = vec![0.0; 1 << n];
            for t in &terms {
                for (a, v) in acc.iter_mut().zip(t.to_dense().unwrap()) {
                    *a += v;
                }
            }
            acc.into_iter().map(|v| v / terms.len() as f64).collect()
        };
        let streamed =
            tt_streaming_mean(terms.into_iter(), 8, &Truncation::tolerance(1e-12)).unwrap();
        let back = streamed.to_dense().unwrap();
        for (a, b) in dense_mean.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_fit_examples() {
        let n = 5;
        let f = TensorTrain::product(&vec![[1.0, 1.0 / 3.0]; n]);
        let (inv, probe) = tt_elementwise_inverse_fit(&f, 4, 1e-6, 1000, 7).unwrap();
        assert!(inv.max_rank() <= 1, "rank {:?}", inv.ranks());
        assert!(probe < 1e-10);
        assert_abs_diff_eq!(inv.entry(0b11111), 243.0, epsilon = 1e-6);

        let c = TensorTrain::constant(4, 0.25);
        let (inv, probe) = tt_elementwise_inverse_fit(&c, 2, 1e-6, 1000, 8).unwrap();
        assert!(probe < 1e-10);
        assert_abs_diff_eq!(inv.entry(3), 4.0, epsilon = 1e-9);

        let g = TensorTrain::product(&vec![[1.0, 0.0]; 4]);
        assert!(tt_elementwise_inverse_fit(&g, 2, 1e-6, 100, 9).is_err());
    }

    #[test]
    fn json_round_trip() {
        let tt = random_tt(5, 3, 55);
        let json = tt.to_json();
        let back = TensorTrain::from_json(&json).unwrap();
        let a = tt.to_dense().unwrap();
        let b = back.to_dense().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tt_svd_round_trip_prop(v in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let (tt, _) = tt_svd(&v, &Truncation::exact()).unwrap();
            let back = tt.to_dense().unwrap();
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
