//! Exact pure-state mechanics for small m-qubit registers.
//!
//! States are dense complex amplitude vectors over the computational basis.
//! Party indices are 1-based and party 1 owns the most significant bit of a
//! basis index, so `|0110⟩` on four parties sits at index 6. Everything here
//! is a pure function on immutable values; measurement operations return
//! probabilities together with renormalized post-measurement states instead
//! of mutating in place.
//!
//! The module covers exactly what the rest of the crate needs: basis states
//! and superpositions, inner products, block-local projective measurement,
//! single-qubit product (Z/X) measurement, Schmidt coefficients across a
//! bipartition, and a Bell-pair teleportation circuit used to validate the
//! one-Bell-pair-per-merge cost model. It is not a general circuit simulator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Tolerance for norms and orthogonality checks.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance for probabilities and fidelities.
pub const PROB_TOL: f64 = 1e-9;
/// Measurement branches below this probability are treated as dead.
pub const BRANCH_TOL: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum QStateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("amplitude vector has length {got}, expected {expected}")]
    BadAmplitudeLength { got: usize, expected: usize },
    #[error("state vector is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("superposition has vanishing norm")]
    AllZero,
    #[error("superposition terms are empty")]
    EmptyTerms,
    #[error("duplicate bitstring {0} in superposition terms")]
    DuplicateBitstring(Bitstring),
    #[error("party index {party} out of range 1..={num_qubits}")]
    PartyOutOfRange { party: usize, num_qubits: usize },
    #[error("source and destination party must differ")]
    SameParty,
    #[error("projector block is empty or contains duplicates")]
    BadBlock,
    #[error("projector basis vectors are not orthonormal")]
    NotOrthonormal,
    #[error("projector rank {rank} out of range 1..={max}")]
    BadRank { rank: usize, max: usize },
    #[error("left block must be a proper nonempty subset of the parties")]
    BadCut,
}

pub type QResult<T> = Result<T, QStateError>;

/// A computational-basis label: `bits[0]` is party 1's bit.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring(Vec<u8>);

impl Bitstring {
    pub fn new(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Bitstring(bits)
    }

    /// All-zero string of length `m`.
    pub fn zeros(m: usize) -> Self {
        Bitstring(vec![0; m])
    }

    /// All-one string of length `m`.
    pub fn ones(m: usize) -> Self {
        Bitstring(vec![1; m])
    }

    /// Zero string with the bit of `party` (1-based) flipped to 1.
    pub fn unit(m: usize, party: usize) -> Self {
        let mut bits = vec![0; m];
        bits[party - 1] = 1;
        Bitstring(bits)
    }

    /// Decode `index` into an `m`-bit string, party 1 most significant.
    pub fn from_index(index: usize, m: usize) -> Self {
        let bits = (0..m).map(|p| ((index >> (m - 1 - p)) & 1) as u8).collect();
        Bitstring(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Bit of `party` (1-based).
    pub fn bit(&self, party: usize) -> u8 {
        self.0[party - 1]
    }

    /// Basis index with party 1 as the most significant bit.
    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    /// Bitwise complement.
    pub fn complement(&self) -> Self {
        Bitstring(self.0.iter().map(|&b| 1 - b).collect())
    }

    /// Number of set bits.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::str::FromStr for Bitstring {
    type Err = QStateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits: Result<Vec<u8>, _> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(QStateError::DimensionMismatch(format!(
                    "invalid bit character {c:?}"
                ))),
            })
            .collect();
        Ok(Bitstring(bits?))
    }
}

/// Normalized pure state of `num_qubits` qubits.
///
/// Index `i` of the amplitude vector is read as the bitstring of `i` with
/// party 1 as the most significant bit.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Build from raw amplitudes, enforcing length and unit norm.
    pub fn new(num_qubits: usize, amps: Vec<Complex64>) -> QResult<Self> {
        let expected = 1usize << num_qubits;
        if amps.len() != expected {
            return Err(QStateError::BadAmplitudeLength {
                got: amps.len(),
                expected,
            });
        }
        let norm = vec_norm(&amps);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QStateError::NotNormalized { norm });
        }
        Ok(StateVector { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, bits: &Bitstring) -> Complex64 {
        self.amps[bits.index()]
    }

    pub fn norm(&self) -> f64 {
        vec_norm(&self.amps)
    }

    /// Basis labels carrying amplitude above `BRANCH_TOL` in modulus squared.
    pub fn support(&self) -> Vec<Bitstring> {
        self.amps
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > BRANCH_TOL)
            .map(|(i, _)| Bitstring::from_index(i, self.num_qubits))
            .collect()
    }

    /// |⟨self|other⟩|.
    pub fn fidelity(&self, other: &StateVector) -> QResult<f64> {
        Ok(inner_product(self, other)?.norm())
    }
}

fn vec_norm(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

fn check_party(party: usize, num_qubits: usize) -> QResult<()> {
    if party == 0 || party > num_qubits {
        return Err(QStateError::PartyOutOfRange { party, num_qubits });
    }
    Ok(())
}

fn check_block(block: &[usize], num_qubits: usize) -> QResult<()> {
    if block.is_empty() || block.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QStateError::BadBlock);
    }
    for &p in block {
        check_party(p, num_qubits)?;
    }
    Ok(())
}

/// Bit positions (shift amounts) of the given parties, and index spreading
/// tables used to recombine block-local and rest-local indices into global
/// ones.
struct IndexSplit {
    spread_block: Vec<usize>,
    spread_rest: Vec<usize>,
}

impl IndexSplit {
    fn new(m: usize, block: &[usize]) -> Self {
        let block_pos: Vec<usize> = block.iter().map(|&p| m - p).collect();
        let rest_pos: Vec<usize> = (1..=m)
            .filter(|p| !block.contains(p))
            .map(|p| m - p)
            .collect();
        let spread = |positions: &[usize]| -> Vec<usize> {
            let k = positions.len();
            (0..1usize << k)
                .map(|local| {
                    positions
                        .iter()
                        .enumerate()
                        .fold(0usize, |acc, (j, &pos)| {
                            acc | (((local >> (k - 1 - j)) & 1) << pos)
                        })
                })
                .collect()
        };
        IndexSplit {
            spread_block: spread(&block_pos),
            spread_rest: spread(&rest_pos),
        }
    }
}

/// Projector onto a subspace of one block's local Hilbert space.
///
/// `block` lists the acting parties in ascending order; each basis vector is
/// a 2^|block| amplitude vector, with the first listed party most
/// significant, spanning the image of the projector.
#[derive(Clone, Debug)]
pub struct LocalProjector {
    block: Vec<usize>,
    basis: Vec<Vec<Complex64>>,
}

impl LocalProjector {
    pub fn new(block: Vec<usize>, basis: Vec<Vec<Complex64>>) -> QResult<Self> {
        if block.is_empty() || block.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QStateError::BadBlock);
        }
        let dim = 1usize << block.len();
        let rank = basis.len();
        if rank == 0 || rank > dim {
            return Err(QStateError::BadRank { rank, max: dim });
        }
        for v in &basis {
            if v.len() != dim {
                return Err(QStateError::BadAmplitudeLength {
                    got: v.len(),
                    expected: dim,
                });
            }
        }
        for (i, u) in basis.iter().enumerate() {
            for (j, v) in basis.iter().enumerate() {
                let ip: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (ip.norm() - target).abs() > NORM_TOL {
                    return Err(QStateError::NotOrthonormal);
                }
            }
        }
        Ok(LocalProjector { block, basis })
    }

    /// Projector onto the span of the listed block-local basis kets.
    pub fn span_of_bits(block: Vec<usize>, kets: &[Bitstring]) -> QResult<Self> {
        let dim = 1usize << block.len();
        let basis = kets
            .iter()
            .map(|bits| {
                let mut v = vec![Complex64::ZERO; dim];
                v[bits.index()] = Complex64::ONE;
                v
            })
            .collect();
        LocalProjector::new(block, basis)
    }

    pub fn block(&self) -> &[usize] {
        &self.block
    }

    pub fn basis_vectors(&self) -> &[Vec<Complex64>] {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

/// Measurement basis of a single qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalBasis {
    Z,
    X,
}

/// A product of single-qubit Z/X measurements over a set of parties.
///
/// Product measurements factor into one action per party, so they respect
/// every locality structure regardless of how parties are grouped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductObservable {
    bases: BTreeMap<usize, LocalBasis>,
}

impl ProductObservable {
    pub fn new(bases: BTreeMap<usize, LocalBasis>) -> QResult<Self> {
        if bases.is_empty() {
            return Err(QStateError::BadBlock);
        }
        Ok(ProductObservable { bases })
    }

    pub fn all_z(parties: impl IntoIterator<Item = usize>) -> QResult<Self> {
        Self::uniform(parties, LocalBasis::Z)
    }

    pub fn all_x(parties: impl IntoIterator<Item = usize>) -> QResult<Self> {
        Self::uniform(parties, LocalBasis::X)
    }

    fn uniform(parties: impl IntoIterator<Item = usize>, basis: LocalBasis) -> QResult<Self> {
        let bases: BTreeMap<usize, LocalBasis> =
            parties.into_iter().map(|p| (p, basis)).collect();
        Self::new(bases)
    }

    /// Acting parties in ascending order.
    pub fn block(&self) -> Vec<usize> {
        self.bases.keys().copied().collect()
    }

    pub fn basis_of(&self, party: usize) -> Option<LocalBasis> {
        self.bases.get(&party).copied()
    }
}

/// One branch of a product measurement.
#[derive(Clone, Debug)]
pub struct ProductOutcome {
    /// Outcome bits over the observable's block, lowest party first.
    pub bits: Bitstring,
    pub probability: f64,
    pub post_state: StateVector,
}

/// Computational basis ket for `bits`.
pub fn basis_state(bits: &Bitstring) -> StateVector {
    let m = bits.len();
    let mut amps = vec![Complex64::ZERO; 1 << m];
    amps[bits.index()] = Complex64::ONE;
    StateVector { num_qubits: m, amps }
}

/// Normalized superposition of the given weighted basis kets.
///
/// Relative phases are preserved exactly; the overall normalization factor
/// is inserted here so callers can state sets the way they are usually
/// written, without normalization.
pub fn superpose(terms: &[(Complex64, Bitstring)]) -> QResult<StateVector> {
    if terms.is_empty() {
        return Err(QStateError::EmptyTerms);
    }
    let m = terms[0].1.len();
    let mut amps = vec![Complex64::ZERO; 1 << m];
    let mut seen = std::collections::HashSet::new();
    for (coeff, bits) in terms {
        if bits.len() != m {
            return Err(QStateError::DimensionMismatch(format!(
                "bitstring {bits} has length {}, expected {m}",
                bits.len()
            )));
        }
        if !seen.insert(bits.clone()) {
            return Err(QStateError::DuplicateBitstring(bits.clone()));
        }
        amps[bits.index()] += coeff;
    }
    let norm = vec_norm(&amps);
    if norm < NORM_TOL {
        return Err(QStateError::AllZero);
    }
    for a in &mut amps {
        *a /= norm;
    }
    Ok(StateVector { num_qubits: m, amps })
}

/// ⟨a|b⟩, conjugate-linear in the first argument.
pub fn inner_product(a: &StateVector, b: &StateVector) -> QResult<Complex64> {
    if a.num_qubits != b.num_qubits {
        return Err(QStateError::DimensionMismatch(format!(
            "{} vs {} qubits",
            a.num_qubits, b.num_qubits
        )));
    }
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}

/// Apply a block-local projector: Born probability plus the renormalized
/// post-measurement state, or `None` when the branch is numerically dead.
pub fn apply_projector(
    state: &StateVector,
    proj: &LocalProjector,
) -> QResult<(f64, Option<StateVector>)> {
    let m = state.num_qubits;
    check_block(&proj.block, m)?;
    let split = IndexSplit::new(m, &proj.block);
    let dim_rest = split.spread_rest.len();
    let mut out = vec![Complex64::ZERO; state.amps.len()];
    for v in &proj.basis {
        for r in 0..dim_rest {
            let base = split.spread_rest[r];
            let mut coeff = Complex64::ZERO;
            for (b, &vb) in v.iter().enumerate() {
                coeff += vb.conj() * state.amps[split.spread_block[b] | base];
            }
            if coeff.norm_sqr() == 0.0 {
                continue;
            }
            for (b, &vb) in v.iter().enumerate() {
                out[split.spread_block[b] | base] += vb * coeff;
            }
        }
    }
    let prob = out.iter().map(|a| a.norm_sqr()).sum::<f64>();
    if prob < BRANCH_TOL {
        return Ok((prob, None));
    }
    let norm = prob.sqrt();
    for a in &mut out {
        *a /= norm;
    }
    Ok((
        prob,
        Some(StateVector {
            num_qubits: m,
            amps: out,
        }),
    ))
}

fn apply_h_inplace(amps: &mut [Complex64], m: usize, party: usize) {
    let pos = m - party;
    let step = 1usize << pos;
    let factor = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut i = 0;
    while i < amps.len() {
        for off in 0..step {
            let j = i + off;
            let k = j | step;
            let a = amps[j];
            let b = amps[k];
            amps[j] = factor * (a + b);
            amps[k] = factor * (a - b);
        }
        i += 2 * step;
    }
}

fn apply_x_inplace(amps: &mut [Complex64], m: usize, party: usize) {
    let step = 1usize << (m - party);
    let mut i = 0;
    while i < amps.len() {
        for off in 0..step {
            amps.swap(i + off, i + off + step);
        }
        i += 2 * step;
    }
}

fn apply_z_inplace(amps: &mut [Complex64], m: usize, party: usize) {
    let mask = 1usize << (m - party);
    for (i, a) in amps.iter_mut().enumerate() {
        if i & mask != 0 {
            *a = -*a;
        }
    }
}

fn apply_cnot_inplace(amps: &mut [Complex64], m: usize, control: usize, target: usize) {
    let cmask = 1usize << (m - control);
    let tmask = 1usize << (m - target);
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

/// Amplitudes rotated so that every X-measured qubit can be read off in
/// the computational basis, plus the list of rotated parties.
fn rotate_for_observable(
    state: &StateVector,
    obs: &ProductObservable,
) -> QResult<(Vec<Complex64>, Vec<usize>)> {
    let m = state.num_qubits;
    let block = obs.block();
    check_block(&block, m)?;
    let mut rotated = state.amps.clone();
    let x_parties: Vec<usize> = block
        .iter()
        .copied()
        .filter(|&p| obs.basis_of(p) == Some(LocalBasis::X))
        .collect();
    for &p in &x_parties {
        apply_h_inplace(&mut rotated, m, p);
    }
    Ok((rotated, x_parties))
}

/// Measure every listed qubit in its assigned Z or X basis.
///
/// Returns one entry per outcome with nonzero probability, sorted by
/// outcome bits; probabilities sum to 1.
pub fn measure_product(
    state: &StateVector,
    obs: &ProductObservable,
) -> QResult<Vec<ProductOutcome>> {
    let m = state.num_qubits;
    let (rotated, x_parties) = rotate_for_observable(state, obs)?;
    let block = obs.block();
    let split = IndexSplit::new(m, &block);
    let k = block.len();
    let mut outcomes = Vec::new();
    for y in 0..1usize << k {
        let base = split.spread_block[y];
        let prob: f64 = split
            .spread_rest
            .iter()
            .map(|&r| rotated[base | r].norm_sqr())
            .sum();
        if prob < BRANCH_TOL {
            continue;
        }
        let mut post = vec![Complex64::ZERO; rotated.len()];
        let norm = prob.sqrt();
        for &r in &split.spread_rest {
            post[base | r] = rotated[base | r] / norm;
        }
        for &p in &x_parties {
            apply_h_inplace(&mut post, m, p);
        }
        outcomes.push(ProductOutcome {
            bits: Bitstring::from_index(y, k),
            probability: prob,
            post_state: StateVector {
                num_qubits: m,
                amps: post,
            },
        });
    }
    Ok(outcomes)
}

/// Outcome probabilities of a product measurement without the cost of
/// building each post-measurement state. Zero-probability outcomes are
/// omitted; probabilities sum to 1.
pub fn product_outcome_probabilities(
    state: &StateVector,
    obs: &ProductObservable,
) -> QResult<Vec<(Bitstring, f64)>> {
    let m = state.num_qubits;
    let (rotated, _) = rotate_for_observable(state, obs)?;
    let block = obs.block();
    let split = IndexSplit::new(m, &block);
    let k = block.len();
    let mut out = Vec::new();
    for y in 0..1usize << k {
        let base = split.spread_block[y];
        let prob: f64 = split
            .spread_rest
            .iter()
            .map(|&r| rotated[base | r].norm_sqr())
            .sum();
        if prob >= BRANCH_TOL {
            out.push((Bitstring::from_index(y, k), prob));
        }
    }
    Ok(out)
}

/// Renormalized post-measurement state of one product-measurement outcome,
/// or `None` when the branch is numerically dead.
pub fn collapse_product_outcome(
    state: &StateVector,
    obs: &ProductObservable,
    outcome: &Bitstring,
) -> QResult<Option<StateVector>> {
    let m = state.num_qubits;
    let (rotated, x_parties) = rotate_for_observable(state, obs)?;
    let block = obs.block();
    if outcome.len() != block.len() {
        return Err(QStateError::DimensionMismatch(format!(
            "outcome has {} bits, block has {}",
            outcome.len(),
            block.len()
        )));
    }
    let split = IndexSplit::new(m, &block);
    let base = split.spread_block[outcome.index()];
    let prob: f64 = split
        .spread_rest
        .iter()
        .map(|&r| rotated[base | r].norm_sqr())
        .sum();
    if prob < BRANCH_TOL {
        return Ok(None);
    }
    let norm = prob.sqrt();
    let mut post = vec![Complex64::ZERO; rotated.len()];
    for &r in &split.spread_rest {
        post[base | r] = rotated[base | r] / norm;
    }
    for &p in &x_parties {
        apply_h_inplace(&mut post, m, p);
    }
    Ok(Some(StateVector {
        num_qubits: m,
        amps: post,
    }))
}

/// Schmidt coefficients of the state across `left_block` vs the rest,
/// descending, with numerically-zero values dropped.
pub fn schmidt_coefficients(state: &StateVector, left_block: &[usize]) -> QResult<Vec<f64>> {
    let m = state.num_qubits;
    check_block(left_block, m)?;
    if left_block.len() >= m {
        return Err(QStateError::BadCut);
    }
    let split = IndexSplit::new(m, left_block);
    let rows = split.spread_block.len();
    let cols = split.spread_rest.len();
    let mat = DMatrix::from_fn(rows, cols, |i, j| {
        state.amps[split.spread_block[i] | split.spread_rest[j]]
    });
    let svd = mat.svd(false, false);
    let mut coeffs: Vec<f64> = svd.singular_values.iter().copied().collect();
    coeffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    coeffs.retain(|&c| c > PROB_TOL);
    Ok(coeffs)
}

/// Logical relocation of one party's qubit to another party's site.
///
/// Amplitudes are untouched: the global state is the same vector before and
/// after. Which qubits are co-located is ownership metadata kept by the
/// caller (the harness's ownership map); this function only validates the
/// move. `exact_teleport_circuit` justifies treating the move as exact.
pub fn teleport_merge(
    state: &StateVector,
    source_party: usize,
    dest_party: usize,
) -> QResult<StateVector> {
    let m = state.num_qubits;
    check_party(source_party, m)?;
    check_party(dest_party, m)?;
    if source_party == dest_party {
        return Err(QStateError::SameParty);
    }
    Ok(state.clone())
}

/// Outcome of running the Bell-pair teleportation circuit on one qubit.
#[derive(Clone, Debug)]
pub struct TeleportCircuitCheck {
    /// Fidelity between input and reconstructed state for each of the four
    /// Bell-measurement outcomes, indexed by (z, x).
    pub branch_fidelities: [f64; 4],
    pub min_fidelity: f64,
    /// Reconstructed state from the (0, 0) branch, teleported qubit moved
    /// back into the source slot.
    pub reconstructed: StateVector,
}

/// Run the standard Bell-pair teleportation circuit on `source_party`'s
/// qubit of `state` and compare the result against the input.
///
/// The register is extended by an ancilla Bell pair, a Bell measurement is
/// taken on the source qubit and the near ancilla, Pauli corrections are
/// applied to the far ancilla for every one of the four outcomes, and the
/// measured qubits are discarded. A correct circuit reproduces the input on
/// every branch with fidelity 1, including all entanglement with the
/// untouched qubits.
pub fn exact_teleport_circuit(
    state: &StateVector,
    source_party: usize,
) -> QResult<TeleportCircuitCheck> {
    let m = state.num_qubits;
    check_party(source_party, m)?;
    let me = m + 2; // extended register: parties 1..m, near ancilla, far ancilla
    let near = m + 1;
    let far = m + 2;

    // state ⊗ (|00⟩ + |11⟩)/√2 on the ancilla pair
    let mut ext = vec![Complex64::ZERO; 1 << me];
    let half = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    for (g, &a) in state.amps.iter().enumerate() {
        ext[g << 2] = a * half;
        ext[(g << 2) | 0b11] = a * half;
    }

    apply_cnot_inplace(&mut ext, me, source_party, near);
    apply_h_inplace(&mut ext, me, source_party);

    let src_mask = 1usize << (me - source_party);
    let near_mask = 1usize << (me - near);

    let mut fidelities = [0.0f64; 4];
    let mut reconstructed = None;
    for z in 0..2usize {
        for x in 0..2usize {
            // collapse the measured qubits onto (z, x)
            let mut branch = vec![Complex64::ZERO; ext.len()];
            let mut prob = 0.0;
            for (i, &a) in ext.iter().enumerate() {
                let bz = usize::from(i & src_mask != 0);
                let bx = usize::from(i & near_mask != 0);
                if bz == z && bx == x {
                    branch[i] = a;
                    prob += a.norm_sqr();
                }
            }
            debug_assert!((prob - 0.25).abs() < PROB_TOL);
            let norm = prob.sqrt();
            for a in &mut branch {
                *a /= norm;
            }
            if x == 1 {
                apply_x_inplace(&mut branch, me, far);
            }
            if z == 1 {
                apply_z_inplace(&mut branch, me, far);
            }

            // Drop the measured qubits and move the far ancilla back into
            // the source slot, giving an m-qubit state aligned with the
            // input's party order.
            let mut out = vec![Complex64::ZERO; 1 << m];
            for (i, &a) in branch.iter().enumerate() {
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                let far_bit = i & 1;
                let mut g = 0usize;
                for p in 1..=m {
                    let bit = if p == source_party {
                        far_bit
                    } else {
                        (i >> (me - p)) & 1
                    };
                    g = (g << 1) | bit;
                }
                out[g] += a;
            }
            let out_state = StateVector {
                num_qubits: m,
                amps: out,
            };
            let fid = out_state.fidelity(state)?;
            fidelities[(z << 1) | x] = fid;
            if z == 0 && x == 0 {
                reconstructed = Some(out_state);
            }
        }
    }
    let min_fidelity = fidelities.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TeleportCircuitCheck {
        branch_fidelities: fidelities,
        min_fidelity,
        reconstructed: reconstructed.expect("branch (0,0) always produced"),
    })
}
