//! Lock certificates and the three-valued lock status of a partition.
//!
//! The impossibility side of the story rests on one reduction: across a cut
//! that isolates a single party, three of the set's states restrict to
//! three pairwise-orthogonal maximally entangled states of an effective
//! two-qubit system (qubit j on one side, a two-dimensional subspace of the
//! remaining parties on the other). Three such Bell-like states are known
//! to be LOCC-indistinguishable, which is taken as an axiom here. A
//! [`BellTripleCertificate`] is the machine-checked witness of that
//! structure.
//!
//! A partition's status is then:
//!
//! - `Locked` when the partition refines a one-vs-rest cut carrying a valid
//!   certificate — in particular whenever it has a singleton block;
//! - `Open` when it coarsens a registry partition on which a discrimination
//!   protocol has been verified to succeed with probability 1 (coarser
//!   locality can only help);
//! - `Unknown` otherwise. No claim is made either way.

use crate::partitions::Partition;
use crate::qstate::{StateVector, PROB_TOL};
use crate::sets::StateSet;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("no three-state subset of the set forms a Bell triple across party {cut_party}")]
    CertificateNotFound { cut_party: usize },
    #[error("cut party {party} out of range 1..={m}")]
    CutOutOfRange { party: usize, m: usize },
    #[error("exhaustive audit capped at {max} parties, got {got}")]
    AuditGuard { got: usize, max: usize },
    #[error(transparent)]
    Partition(#[from] crate::partitions::PartitionError),
}

pub type CertifyResult<T> = Result<T, CertifyError>;

/// Exhaustive audits enumerate every partition; cap the party count.
pub const AUDIT_LIMIT: usize = 8;

/// Witness that three states of a set restrict to three orthogonal
/// maximally entangled states of an effective 2⊗2 system across the cut
/// isolating `cut_party`.
#[derive(Clone, Debug)]
pub struct BellTripleCertificate {
    pub cut_party: usize,
    /// Indices of the three states within the set.
    pub triple: [usize; 3],
    /// Orthonormal vectors spanning the support of the triple on the
    /// (m−1)-qubit side of the cut.
    pub side_basis: [Vec<Complex64>; 2],
    /// Fidelity of each effective state to its nearest canonical Bell
    /// state, up to global phase.
    pub bell_fidelities: [f64; 3],
}

/// How a `Locked` verdict is justified.
#[derive(Clone, Debug)]
pub enum LockEvidence {
    /// A one-vs-rest Bell-triple certificate the partition refines.
    BellTriple(Box<BellTripleCertificate>),
    /// Baseline rule for sets taken to be locally indistinguishable across
    /// every bipartition; no concrete certificate exists for those.
    EveryBipartition,
}

/// Why an `Open` verdict holds: the partition coarsens `via`, on which a
/// protocol was verified with the stated worst-case success.
#[derive(Clone, Debug)]
pub struct OpenEvidence {
    pub via: Partition,
    pub worst_case_success: f64,
}

/// Lock status of one partition for one set.
#[derive(Clone, Debug)]
pub enum LockStatus {
    Locked(LockEvidence),
    Open(OpenEvidence),
    Unknown,
}

impl LockStatus {
    pub fn is_locked(&self) -> bool {
        matches!(self, LockStatus::Locked(_))
    }

    pub fn is_open(&self) -> bool {
        matches!(self, LockStatus::Open(_))
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, LockStatus::Unknown)
    }

    pub fn word(&self) -> &'static str {
        match self {
            LockStatus::Locked(_) => "LOCKED",
            LockStatus::Open(_) => "OPEN",
            LockStatus::Unknown => "UNKNOWN",
        }
    }
}

/// Partitions on which a discrimination protocol has been verified to
/// succeed with probability 1, together with that evaluated success.
#[derive(Clone, Debug, Default)]
pub struct OpenRegistry {
    entries: Vec<OpenEvidence>,
}

impl OpenRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a partition whose protocol evaluation reported the given
    /// worst-case success. Callers are expected to have run the evaluation;
    /// see `resources::profile_s1`.
    pub fn push_verified(&mut self, partition: Partition, worst_case_success: f64) {
        self.entries.push(OpenEvidence {
            via: partition,
            worst_case_success,
        });
    }

    pub fn entries(&self) -> &[OpenEvidence] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The four canonical Bell states as 2×2 coefficient matrices
/// (row: near qubit, column: side-basis vector).
fn bell_matrices() -> [[[Complex64; 2]; 2]; 4] {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let z = Complex64::ZERO;
    [
        [[h, z], [z, h]],   // |00⟩ + |11⟩
        [[h, z], [z, -h]],  // |00⟩ − |11⟩
        [[z, h], [h, z]],   // |01⟩ + |10⟩
        [[z, h], [-h, z]],  // |01⟩ − |10⟩
    ]
}

/// Split a state across the cut isolating `cut_party`: returns the 2 ×
/// 2^(m−1) coefficient matrix, row = cut qubit value, column = index over
/// the remaining parties in ascending order.
fn cut_rows(state: &StateVector, cut_party: usize) -> [Vec<Complex64>; 2] {
    let m = state.num_qubits();
    let side_dim = 1usize << (m - 1);
    let mut rows = [vec![Complex64::ZERO; side_dim], vec![Complex64::ZERO; side_dim]];
    for (g, &amp) in state.amplitudes().iter().enumerate() {
        let near = (g >> (m - cut_party)) & 1;
        let mut side = 0usize;
        for p in 1..=m {
            if p != cut_party {
                side = (side << 1) | ((g >> (m - p)) & 1);
            }
        }
        rows[near][side] = amp;
    }
    rows
}

fn side_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Project a state's cut rows onto a 2-vector side basis, giving the
/// effective 2×2 matrix and the weight left outside the spanned space.
fn effective_matrix(
    rows: &[Vec<Complex64>; 2],
    side_basis: &[Vec<Complex64>; 2],
) -> ([[Complex64; 2]; 2], f64) {
    let mut eff = [[Complex64::ZERO; 2]; 2];
    let mut inside = 0.0;
    for r in 0..2 {
        for (k, basis_vec) in side_basis.iter().enumerate() {
            let coeff = side_inner(basis_vec, &rows[r]);
            eff[r][k] = coeff;
            inside += coeff.norm_sqr();
        }
    }
    let total: f64 = rows.iter().flatten().map(|a| a.norm_sqr()).sum();
    (eff, total - inside)
}

fn matrix_inner(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for r in 0..2 {
        for k in 0..2 {
            acc += a[r][k].conj() * b[r][k];
        }
    }
    acc
}

/// Singular values of a 2×2 complex matrix, descending.
fn singular_values_2x2(m: &[[Complex64; 2]; 2]) -> [f64; 2] {
    let t: f64 = m.iter().flatten().map(|a| a.norm_sqr()).sum();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (t * t - 4.0 * det.norm_sqr()).max(0.0).sqrt();
    let hi = ((t + disc) / 2.0).max(0.0).sqrt();
    let lo = ((t - disc) / 2.0).max(0.0).sqrt();
    [hi, lo]
}

/// Try to certify one particular triple with one particular side basis.
fn try_triple(
    set: &StateSet,
    cut_party: usize,
    triple: [usize; 3],
    side_basis: [Vec<Complex64>; 2],
) -> Option<BellTripleCertificate> {
    let bells = bell_matrices();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut effs = Vec::with_capacity(3);
    let mut fidelities = [0.0f64; 3];
    for (slot, &idx) in triple.iter().enumerate() {
        let rows = cut_rows(set.state(idx)?, cut_party);
        let (eff, residual) = effective_matrix(&rows, &side_basis);
        if residual > PROB_TOL {
            return None;
        }
        let fid = bells
            .iter()
            .map(|b| matrix_inner(b, &eff).norm())
            .fold(0.0f64, f64::max);
        if (fid - 1.0).abs() > PROB_TOL {
            return None;
        }
        let sv = singular_values_2x2(&eff);
        if (sv[0] - half).abs() > PROB_TOL || (sv[1] - half).abs() > PROB_TOL {
            return None;
        }
        fidelities[slot] = fid;
        effs.push(eff);
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            if matrix_inner(&effs[i], &effs[j]).norm() > PROB_TOL {
                return None;
            }
        }
    }
    Some(BellTripleCertificate {
        cut_party,
        triple,
        side_basis,
        bell_fidelities: fidelities,
    })
}

/// Orthonormal basis of the side-space support of a triple of states, if
/// that support is exactly two-dimensional.
fn side_support_basis(
    set: &StateSet,
    cut_party: usize,
    triple: [usize; 3],
) -> Option<[Vec<Complex64>; 2]> {
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    for &idx in &triple {
        let rows = cut_rows(set.state(idx)?, cut_party);
        for row in rows {
            // Gram-Schmidt against what we have so far
            let mut v = row;
            for b in &basis {
                let coeff = side_inner(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= coeff * y;
                }
            }
            let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-7 {
                if basis.len() == 2 {
                    return None; // support exceeds two dimensions
                }
                for x in &mut v {
                    *x /= norm;
                }
                basis.push(v);
            }
        }
    }
    if basis.len() != 2 {
        return None;
    }
    let mut it = basis.into_iter();
    let b0 = it.next().unwrap();
    let b1 = it.next().unwrap();
    Some([b0, b1])
}

/// Find a Bell-triple certificate for the cut isolating `cut_party`.
///
/// The canonical candidate — the ± pair together with the state flipped at
/// the cut party, against the side basis {|0…0⟩, |1…1⟩} — is tried first;
/// for sets without that structure every 3-subset is searched.
pub fn bell_triple_certificate(
    set: &StateSet,
    cut_party: usize,
) -> CertifyResult<BellTripleCertificate> {
    let m = set.num_qubits();
    if cut_party == 0 || cut_party > m {
        return Err(CertifyError::CutOutOfRange {
            party: cut_party,
            m,
        });
    }

    // canonical triple: the ± pair plus the flip state at the cut party
    let canonical = [0usize, 1, 1 + cut_party];
    if canonical[2] < set.len() {
        let side_dim = 1usize << (m - 1);
        let mut zeros = vec![Complex64::ZERO; side_dim];
        let mut ones = vec![Complex64::ZERO; side_dim];
        zeros[0] = Complex64::ONE;
        ones[side_dim - 1] = Complex64::ONE;
        if let Some(cert) = try_triple(set, cut_party, canonical, [zeros, ones]) {
            return Ok(cert);
        }
    }

    // structural search over all 3-subsets
    let n = set.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let triple = [a, b, c];
                let Some(basis) = side_support_basis(set, cut_party, triple) else {
                    continue;
                };
                if let Some(cert) = try_triple(set, cut_party, triple, basis) {
                    return Ok(cert);
                }
            }
        }
    }
    Err(CertifyError::CertificateNotFound { cut_party })
}

/// Lock status of `partition` for `set`, given previously verified open
/// partitions.
///
/// `Locked` and `Open` cannot both apply: a partition coarsening a
/// verified-open partition has no singleton block whose certificate could
/// lock it (that would contradict the verified protocol), which the audit
/// tests confirm exhaustively.
pub fn lock_status(set: &StateSet, partition: &Partition, registry: &OpenRegistry) -> LockStatus {
    for block in partition.blocks() {
        if block.len() == 1 {
            if let Ok(cert) = bell_triple_certificate(set, block[0]) {
                return LockStatus::Locked(LockEvidence::BellTriple(Box::new(cert)));
            }
        }
    }
    for entry in registry.entries() {
        if partition
            .is_coarsening_of(&entry.via)
            .unwrap_or(false)
        {
            return LockStatus::Open(entry.clone());
        }
    }
    LockStatus::Unknown
}

/// One row of an exhaustive audit.
#[derive(Clone, Debug)]
pub struct AuditRow {
    pub partition: Partition,
    pub status: LockStatus,
}

/// Exhaustive audit over every partition of the parties.
#[derive(Clone, Debug)]
pub struct AuditTable {
    pub rows: Vec<AuditRow>,
    pub locked: usize,
    pub open: usize,
    pub unknown: usize,
}

/// Classify every partition of `{1..m}` for the given set. Certificates
/// are computed once per cut party and shared across rows.
pub fn audit_all(set: &StateSet, registry: &OpenRegistry) -> CertifyResult<AuditTable> {
    let m = set.num_qubits();
    if m > AUDIT_LIMIT {
        return Err(CertifyError::AuditGuard {
            got: m,
            max: AUDIT_LIMIT,
        });
    }
    let certs: Vec<Option<BellTripleCertificate>> = (1..=m)
        .map(|j| bell_triple_certificate(set, j).ok())
        .collect();

    let mut rows = Vec::new();
    let (mut locked, mut open, mut unknown) = (0, 0, 0);
    for partition in crate::partitions::enumerate_partitions(m)? {
        let status = 'status: {
            for block in partition.blocks() {
                if block.len() == 1 {
                    if let Some(cert) = &certs[block[0] - 1] {
                        break 'status LockStatus::Locked(LockEvidence::BellTriple(Box::new(
                            cert.clone(),
                        )));
                    }
                }
            }
            for entry in registry.entries() {
                if partition.is_coarsening_of(&entry.via).unwrap_or(false) {
                    break 'status LockStatus::Open(entry.clone());
                }
            }
            LockStatus::Unknown
        };
        match &status {
            LockStatus::Locked(_) => locked += 1,
            LockStatus::Open(_) => open += 1,
            LockStatus::Unknown => unknown += 1,
        }
        rows.push(AuditRow { partition, status });
    }
    Ok(AuditTable {
        rows,
        locked,
        open,
        unknown,
    })
}
