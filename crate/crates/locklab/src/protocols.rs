//! Discrimination protocols as measurement trees, their generators, exact
//! evaluation, and seeded sampling.
//!
//! A protocol is a rooted tree: each internal node measures one block (a
//! projective measurement local to a block of the declared partition, or a
//! product of single-qubit Z/X measurements, which is local under any
//! partition), with one subtree per outcome; leaves guess a state index or
//! abstain. Evaluation enumerates every branch exactly — probabilities are
//! multiplied along paths and summed per guessed state — so a report of
//! success probability 1 is a proof over the set, not a sample estimate.
//!
//! The generated peel protocols mirror the constructive discrimination
//! procedure for the built-in sets: blocks take turns measuring the parity
//! subspaces `span{|00⟩,|11⟩}` vs `span{|01⟩,|10⟩}` (a four-outcome variant
//! for a triple block), an odd outcome pins the two candidate states with
//! disjoint global supports (finished by all-Z readout), and the final even
//! branch leaves the ± pair (finished by all-X parity readout).

use crate::partitions::Partition;
use crate::qstate::{
    self, Bitstring, LocalProjector, ProductObservable, StateVector, BRANCH_TOL, PROB_TOL,
};
use crate::sets::StateSet;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("partition {partition} does not have the required block shape: {reason}")]
    Shape { partition: String, reason: String },
    #[error("protocol generation requires the built-in set family in canonical order")]
    UnsupportedSet,
    #[error("node acting on {block:?} crosses the blocks of partition {partition}")]
    Locality { block: Vec<usize>, partition: String },
    #[error("incomplete node: {0}")]
    Incomplete(String),
    #[error("projectors on block {block:?} do not sum to the identity (deviation {deviation:.3e})")]
    NotAResolution { block: Vec<usize>, deviation: f64 },
    #[error("candidate states {0} and {1} share support; z-readout cannot split them")]
    SupportOverlap(usize, usize),
    #[error("state index {index} out of range for a set of {len} states")]
    BadStateIndex { index: usize, len: usize },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    State(#[from] qstate::QStateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ProtocolResult<T> = Result<T, ProtocolError>;

/// Leaf decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guess {
    State(usize),
    Abstain,
}

/// Outcome label of a measurement: an index for projective measurements, a
/// bitstring over the acting block for product measurements.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutcomeLabel {
    Index(usize),
    Bits(Bitstring),
}

impl std::fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeLabel::Index(i) => write!(f, "{i}"),
            OutcomeLabel::Bits(b) => write!(f, "{b}"),
        }
    }
}

/// The measurement performed at a node.
///
/// The first four kinds are the staples of the peel protocols and are
/// complete by construction; `Custom` carries explicit projectors.
#[derive(Clone, Debug)]
pub enum Measurement {
    /// Two outcomes on a pair block: even `span{|00⟩,|11⟩}` then odd
    /// `span{|01⟩,|10⟩}`.
    PairParity,
    /// Four outcomes on a triple block: `span{|000⟩,|111⟩}`, then the
    /// flipped-at-one-position spans in block-position order.
    Triple4,
    /// Every qubit of the block read out in the computational basis.
    ZBasis,
    /// Every qubit of the block read out in the X basis.
    XBasis,
    Custom(Vec<LocalProjector>),
}

impl Measurement {
    pub fn is_product(&self) -> bool {
        matches!(self, Measurement::ZBasis | Measurement::XBasis)
    }

    /// Number of outcomes on a block of the given size.
    pub fn num_outcomes(&self, block_len: usize) -> usize {
        match self {
            Measurement::PairParity => 2,
            Measurement::Triple4 => 4,
            Measurement::ZBasis | Measurement::XBasis => 1 << block_len,
            Measurement::Custom(projs) => projs.len(),
        }
    }

    /// Materialize the projective form, if this is a projective kind.
    pub fn projectors(&self, block: &[usize]) -> ProtocolResult<Option<Vec<LocalProjector>>> {
        let span = |kets: &[&str]| -> ProtocolResult<LocalProjector> {
            let kets: Vec<Bitstring> = kets.iter().map(|s| s.parse().unwrap()).collect();
            Ok(LocalProjector::span_of_bits(block.to_vec(), &kets)?)
        };
        match self {
            Measurement::PairParity => {
                if block.len() != 2 {
                    return Err(ProtocolError::Shape {
                        partition: format!("{block:?}"),
                        reason: "pairparity needs a block of size 2".into(),
                    });
                }
                Ok(Some(vec![span(&["00", "11"])?, span(&["01", "10"])?]))
            }
            Measurement::Triple4 => {
                if block.len() != 3 {
                    return Err(ProtocolError::Shape {
                        partition: format!("{block:?}"),
                        reason: "triple4 needs a block of size 3".into(),
                    });
                }
                Ok(Some(vec![
                    span(&["000", "111"])?,
                    span(&["100", "011"])?,
                    span(&["010", "101"])?,
                    span(&["001", "110"])?,
                ]))
            }
            Measurement::Custom(projs) => Ok(Some(projs.clone())),
            Measurement::ZBasis | Measurement::XBasis => Ok(None),
        }
    }

    /// Materialize the product-observable form, if this is a product kind.
    pub fn observable(&self, block: &[usize]) -> ProtocolResult<Option<ProductObservable>> {
        match self {
            Measurement::ZBasis => Ok(Some(ProductObservable::all_z(block.iter().copied())?)),
            Measurement::XBasis => Ok(Some(ProductObservable::all_x(block.iter().copied())?)),
            _ => Ok(None),
        }
    }
}

/// Internal node: one measurement with a child per outcome. Outcomes not
/// listed explicitly fall through to `default_child`.
#[derive(Clone, Debug)]
pub struct MeasureNode {
    pub block: Vec<usize>,
    pub measurement: Measurement,
    children: Vec<(OutcomeLabel, ProtocolNode)>,
    default_child: Option<Box<ProtocolNode>>,
}

impl MeasureNode {
    pub fn new(
        block: Vec<usize>,
        measurement: Measurement,
        mut children: Vec<(OutcomeLabel, ProtocolNode)>,
        default_child: Option<ProtocolNode>,
    ) -> Self {
        children.sort_by(|a, b| a.0.cmp(&b.0));
        MeasureNode {
            block,
            measurement,
            children,
            default_child: default_child.map(Box::new),
        }
    }

    pub fn children(&self) -> &[(OutcomeLabel, ProtocolNode)] {
        &self.children
    }

    pub fn default_child(&self) -> Option<&ProtocolNode> {
        self.default_child.as_deref()
    }

    pub fn child_for(&self, label: &OutcomeLabel) -> Option<&ProtocolNode> {
        self.children
            .binary_search_by(|(l, _)| l.cmp(label))
            .ok()
            .map(|i| &self.children[i].1)
            .or(self.default_child.as_deref())
    }
}

#[derive(Clone, Debug)]
pub enum ProtocolNode {
    Measure(MeasureNode),
    Leaf(Guess),
}

impl ProtocolNode {
    pub fn leaf(guess: Guess) -> Self {
        ProtocolNode::Leaf(guess)
    }

    /// True when no abstain leaf appears anywhere in the subtree.
    pub fn is_complete(&self) -> bool {
        match self {
            ProtocolNode::Leaf(Guess::Abstain) => false,
            ProtocolNode::Leaf(_) => true,
            ProtocolNode::Measure(node) => {
                node.children.iter().all(|(_, c)| c.is_complete())
                    && node.default_child.as_deref().is_none_or(|c| c.is_complete())
            }
        }
    }
}

/// How the tree was constructed; odd-m peel protocols are this crate's
/// extension of the published even-m procedure and are flagged as derived
/// in every report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    PairingPeel,
    OddPeelDerived,
    Custom,
}

/// An executable discrimination strategy: a measurement tree plus the
/// partition whose locality it must respect.
#[derive(Clone, Debug)]
pub struct ProtocolTree {
    pub partition: Partition,
    pub root: ProtocolNode,
    pub provenance: Provenance,
}

impl ProtocolTree {
    pub fn is_complete(&self) -> bool {
        self.root.is_complete()
    }
}

/// Exact per-state scores of a protocol over a set.
#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub per_state_success: Vec<f64>,
    pub worst_case_success: f64,
    /// Leaves reached across all states during enumeration.
    pub branch_count: u64,
}

/// All-Z readout of the whole register, decoding by support membership:
/// each listed `(state, guess)` pair routes every support string of that
/// state to the guess. Distinct guesses on overlapping supports are
/// rejected. Unmatched outcomes abstain.
pub fn z_support_decoder(
    set: &StateSet,
    assignments: &[(usize, usize)],
) -> ProtocolResult<ProtocolNode> {
    let m = set.num_qubits();
    let mut routes: Vec<(Bitstring, usize)> = Vec::new();
    for &(state_idx, guess) in assignments {
        let state = set
            .state(state_idx)
            .ok_or(ProtocolError::BadStateIndex {
                index: state_idx,
                len: set.len(),
            })?;
        for bits in state.support() {
            if let Some((_, prev)) = routes.iter().find(|(b, _)| *b == bits) {
                if *prev != guess {
                    return Err(ProtocolError::SupportOverlap(*prev, guess));
                }
            } else {
                routes.push((bits, guess));
            }
        }
    }
    let children = routes
        .into_iter()
        .map(|(bits, guess)| (OutcomeLabel::Bits(bits), ProtocolNode::Leaf(Guess::State(guess))))
        .collect();
    Ok(ProtocolNode::Measure(MeasureNode::new(
        (1..=m).collect(),
        Measurement::ZBasis,
        children,
        Some(ProtocolNode::Leaf(Guess::Abstain)),
    )))
}

/// Two-state finisher for candidates with disjoint global supports.
pub fn z_support_finisher(set: &StateSet, candidates: &[usize]) -> ProtocolResult<ProtocolNode> {
    let assignments: Vec<(usize, usize)> = candidates.iter().map(|&c| (c, c)).collect();
    z_support_decoder(set, &assignments)
}

/// All-X readout of the whole register: even parity of the outcome bits
/// decodes to `plus_guess`, odd parity to `minus_guess`. This separates
/// `|u⟩ + |ū⟩` from `|u⟩ − |ū⟩` for any bitstring u.
pub fn x_parity_finisher(m: usize, plus_guess: usize, minus_guess: usize) -> ProtocolNode {
    let children = (0..1usize << m)
        .filter_map(|y| {
            let bits = Bitstring::from_index(y, m);
            if bits.weight() % 2 != 0 {
                return None;
            }
            Some((
                OutcomeLabel::Bits(bits),
                ProtocolNode::Leaf(Guess::State(plus_guess)),
            ))
        })
        .collect();
    ProtocolNode::Measure(MeasureNode::new(
        (1..=m).collect(),
        Measurement::XBasis,
        children,
        Some(ProtocolNode::Leaf(Guess::State(minus_guess))),
    ))
}

fn require_builtin(set: &StateSet) -> ProtocolResult<()> {
    if crate::sets::matches_builtin(set) {
        Ok(())
    } else {
        Err(ProtocolError::UnsupportedSet)
    }
}

/// Peel chain over `order` (indices into the partition's blocks): each pair
/// block separates its even/odd parity subspaces, each triple block its
/// four parity-like subspaces; odd outcomes terminate in support or leaf
/// guesses and the final even branch resolves the ± pair by X parity.
pub fn generate_peel_protocol(
    set: &StateSet,
    partition: &Partition,
    order: &[usize],
) -> ProtocolResult<ProtocolTree> {
    require_builtin(set)?;
    let m = set.num_qubits();
    if partition.num_parties() != m {
        return Err(ProtocolError::Shape {
            partition: partition.to_string(),
            reason: format!("partition is over {} parties, set over {m}", partition.num_parties()),
        });
    }
    let mut seen = vec![false; partition.num_blocks()];
    for &idx in order {
        if idx >= partition.num_blocks() || seen[idx] {
            return Err(ProtocolError::Shape {
                partition: partition.to_string(),
                reason: "peel order must be a permutation of the block indices".into(),
            });
        }
        seen[idx] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(ProtocolError::Shape {
            partition: partition.to_string(),
            reason: "peel order must cover every block".into(),
        });
    }

    let root = build_chain(set, partition, order)?;
    Ok(ProtocolTree {
        partition: partition.clone(),
        root,
        provenance: Provenance::Custom,
    })
}

fn build_chain(
    set: &StateSet,
    partition: &Partition,
    order: &[usize],
) -> ProtocolResult<ProtocolNode> {
    let m = set.num_qubits();
    let Some((&first, rest)) = order.split_first() else {
        return Ok(x_parity_finisher(m, 0, 1));
    };
    let block = partition.blocks()[first].clone();
    match block.len() {
        2 => {
            let even = build_chain(set, partition, rest)?;
            let odd = z_support_finisher(set, &[1 + block[0], 1 + block[1]])?;
            Ok(ProtocolNode::Measure(MeasureNode::new(
                block,
                Measurement::PairParity,
                vec![
                    (OutcomeLabel::Index(0), even),
                    (OutcomeLabel::Index(1), odd),
                ],
                None,
            )))
        }
        3 => {
            let even = build_chain(set, partition, rest)?;
            let children = vec![
                (OutcomeLabel::Index(0), even),
                (
                    OutcomeLabel::Index(1),
                    ProtocolNode::Leaf(Guess::State(1 + block[0])),
                ),
                (
                    OutcomeLabel::Index(2),
                    ProtocolNode::Leaf(Guess::State(1 + block[1])),
                ),
                (
                    OutcomeLabel::Index(3),
                    ProtocolNode::Leaf(Guess::State(1 + block[2])),
                ),
            ];
            Ok(ProtocolNode::Measure(MeasureNode::new(
                block,
                Measurement::Triple4,
                children,
                None,
            )))
        }
        len => Err(ProtocolError::Shape {
            partition: partition.to_string(),
            reason: format!("peel blocks must have size 2 or 3, found {len}"),
        }),
    }
}

/// Descending-canonical-order block indices: the proofs peel the last block
/// first.
fn descending_order(partition: &Partition) -> Vec<usize> {
    (0..partition.num_blocks()).rev().collect()
}

/// The constructive protocol for a pairing partition of the built-in set:
/// peel pair blocks last-to-first.
pub fn generate_pairing_protocol(
    set: &StateSet,
    partition: &Partition,
) -> ProtocolResult<ProtocolTree> {
    if partition.blocks().iter().any(|b| b.len() != 2) {
        return Err(ProtocolError::Shape {
            partition: partition.to_string(),
            reason: "every block of a pairing has size 2".into(),
        });
    }
    let mut tree = generate_peel_protocol(set, partition, &descending_order(partition))?;
    tree.provenance = Provenance::PairingPeel;
    Ok(tree)
}

/// Derived construction for odd m: the triple block measures first, then
/// the pair blocks peel last-to-first. Not part of the published even-m
/// procedure; reports flag it as derived.
pub fn generate_odd_protocol(
    set: &StateSet,
    partition: &Partition,
) -> ProtocolResult<ProtocolTree> {
    let triples: Vec<usize> = (0..partition.num_blocks())
        .filter(|&i| partition.blocks()[i].len() == 3)
        .collect();
    let pairs_ok = partition
        .blocks()
        .iter()
        .all(|b| b.len() == 2 || b.len() == 3);
    if triples.len() != 1 || !pairs_ok {
        return Err(ProtocolError::Shape {
            partition: partition.to_string(),
            reason: "expected pair blocks plus exactly one triple".into(),
        });
    }
    let mut order = vec![triples[0]];
    order.extend((0..partition.num_blocks()).rev().filter(|i| *i != triples[0]));
    let mut tree = generate_peel_protocol(set, partition, &order)?;
    tree.provenance = Provenance::OddPeelDerived;
    Ok(tree)
}

/// Static checks: locality of every projective node against the declared
/// partition, resolution-of-identity for projective measurements, and
/// outcome coverage at every node.
pub fn validate(tree: &ProtocolTree) -> ProtocolResult<()> {
    validate_node(&tree.root, &tree.partition)
}

fn validate_node(node: &ProtocolNode, partition: &Partition) -> ProtocolResult<()> {
    let ProtocolNode::Measure(node) = node else {
        return Ok(());
    };
    let m = partition.num_parties();
    if node.block.is_empty() || node.block.iter().any(|&p| p == 0 || p > m) {
        return Err(ProtocolError::Locality {
            block: node.block.clone(),
            partition: partition.to_string(),
        });
    }
    // Product readouts factor into single-qubit actions and are local under
    // any partition; projective measurements must stay inside one block.
    if !node.measurement.is_product() {
        let inside_one_block = partition.blocks().iter().any(|b| {
            node.block.iter().all(|p| b.binary_search(p).is_ok())
        });
        if !inside_one_block {
            return Err(ProtocolError::Locality {
                block: node.block.clone(),
                partition: partition.to_string(),
            });
        }
    }

    let num_outcomes = node.measurement.num_outcomes(node.block.len());
    if let Some(projs) = node.measurement.projectors(&node.block)? {
        // completeness: Σ |v⟩⟨v| over all outcomes = identity on the block
        let dim = 1usize << node.block.len();
        let mut sum = vec![vec![Complex64::ZERO; dim]; dim];
        for proj in &projs {
            for v in proj.basis_vectors() {
                for r in 0..dim {
                    for c in 0..dim {
                        sum[r][c] += v[r] * v[c].conj();
                    }
                }
            }
        }
        let mut deviation = 0.0f64;
        for (r, row) in sum.iter().enumerate() {
            for (c, val) in row.iter().enumerate() {
                let target = if r == c { Complex64::ONE } else { Complex64::ZERO };
                deviation = deviation.max((val - target).norm());
            }
        }
        if deviation > PROB_TOL {
            return Err(ProtocolError::NotAResolution {
                block: node.block.clone(),
                deviation,
            });
        }
    }

    if node.default_child.is_none() {
        let covered = node.children.len();
        let labels_valid = node.children.iter().all(|(l, _)| match l {
            OutcomeLabel::Index(i) => *i < num_outcomes,
            OutcomeLabel::Bits(b) => b.len() == node.block.len(),
        });
        if covered != num_outcomes || !labels_valid {
            return Err(ProtocolError::Incomplete(format!(
                "node on {:?} lists {covered} of {num_outcomes} outcomes and has no default",
                node.block
            )));
        }
    }

    for (_, child) in &node.children {
        validate_node(child, partition)?;
    }
    if let Some(child) = node.default_child.as_deref() {
        validate_node(child, partition)?;
    }
    Ok(())
}

/// Exact branch enumeration: per-state success probabilities at the stated
/// branch-pruning tolerance.
pub fn evaluate(set: &StateSet, tree: &ProtocolTree) -> ProtocolResult<EvaluationReport> {
    validate(tree)?;
    let mut per_state_success = Vec::with_capacity(set.len());
    let mut branch_count = 0u64;
    for (true_index, state) in set.states().iter().enumerate() {
        let mut success = 0.0f64;
        walk_branches(&tree.root, state, 1.0, true_index, &mut success, &mut branch_count)?;
        per_state_success.push(success);
    }
    let worst_case_success = per_state_success
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(EvaluationReport {
        per_state_success,
        worst_case_success,
        branch_count,
    })
}

fn walk_branches(
    node: &ProtocolNode,
    state: &StateVector,
    acc: f64,
    true_index: usize,
    success: &mut f64,
    branch_count: &mut u64,
) -> ProtocolResult<()> {
    match node {
        ProtocolNode::Leaf(guess) => {
            *branch_count += 1;
            if *guess == Guess::State(true_index) {
                *success += acc;
            }
            Ok(())
        }
        ProtocolNode::Measure(mnode) => {
            if let Some(projs) = mnode.measurement.projectors(&mnode.block)? {
                for (k, proj) in projs.iter().enumerate() {
                    let (prob, post) = qstate::apply_projector(state, proj)?;
                    if prob < BRANCH_TOL {
                        continue;
                    }
                    let post = post.expect("probability above threshold has a post state");
                    let label = OutcomeLabel::Index(k);
                    let child = mnode.child_for(&label).ok_or_else(|| {
                        ProtocolError::Incomplete(format!("no child for outcome {label}"))
                    })?;
                    walk_branches(child, &post, acc * prob, true_index, success, branch_count)?;
                }
                Ok(())
            } else {
                let obs = mnode
                    .measurement
                    .observable(&mnode.block)?
                    .expect("non-projective measurements are product kinds");
                for (bits, prob) in qstate::product_outcome_probabilities(state, &obs)? {
                    let label = OutcomeLabel::Bits(bits.clone());
                    let child = mnode.child_for(&label).ok_or_else(|| {
                        ProtocolError::Incomplete(format!("no child for outcome {label}"))
                    })?;
                    match child {
                        ProtocolNode::Leaf(guess) => {
                            *branch_count += 1;
                            if *guess == Guess::State(true_index) {
                                *success += acc * prob;
                            }
                        }
                        deeper => {
                            let post = qstate::collapse_product_outcome(state, &obs, &bits)?
                                .expect("outcome above threshold has a post state");
                            walk_branches(
                                deeper,
                                &post,
                                acc * prob,
                                true_index,
                                success,
                                branch_count,
                            )?;
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// One recorded measurement of a sampled run.
#[derive(Clone, Debug)]
pub struct TranscriptEvent {
    pub block: Vec<usize>,
    pub outcome: OutcomeLabel,
    pub probability: f64,
}

/// Outcome of one Monte-Carlo pass through a protocol.
#[derive(Clone, Debug)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
    pub guess: Guess,
}

/// Sample a single run on `set.states[true_state_index]`, drawing outcomes
/// with their exact conditional probabilities. Deterministic per seed.
pub fn sample_run(
    set: &StateSet,
    tree: &ProtocolTree,
    true_state_index: usize,
    seed: u64,
) -> ProtocolResult<Transcript> {
    validate(tree)?;
    let state = set
        .state(true_state_index)
        .ok_or(ProtocolError::BadStateIndex {
            index: true_state_index,
            len: set.len(),
        })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut node = &tree.root;
    let mut current = state.clone();
    loop {
        match node {
            ProtocolNode::Leaf(guess) => {
                return Ok(Transcript {
                    events,
                    guess: *guess,
                })
            }
            ProtocolNode::Measure(mnode) => {
                let mut branches: Vec<(OutcomeLabel, f64, StateVector)> = Vec::new();
                if let Some(projs) = mnode.measurement.projectors(&mnode.block)? {
                    for (k, proj) in projs.iter().enumerate() {
                        let (prob, post) = qstate::apply_projector(&current, proj)?;
                        if prob >= BRANCH_TOL {
                            branches.push((OutcomeLabel::Index(k), prob, post.unwrap()));
                        }
                    }
                } else {
                    let obs = mnode
                        .measurement
                        .observable(&mnode.block)?
                        .expect("product kind");
                    for o in qstate::measure_product(&current, &obs)? {
                        branches.push((OutcomeLabel::Bits(o.bits), o.probability, o.post_state));
                    }
                }
                let total: f64 = branches.iter().map(|(_, p, _)| *p).sum();
                let mut draw = rng.gen::<f64>() * total;
                let mut chosen = branches.len() - 1;
                for (i, (_, p, _)) in branches.iter().enumerate() {
                    if draw < *p {
                        chosen = i;
                        break;
                    }
                    draw -= *p;
                }
                let (label, prob, post) = branches.swap_remove(chosen);
                let child = mnode.child_for(&label).ok_or_else(|| {
                    ProtocolError::Incomplete(format!("no child for outcome {label}"))
                })?;
                events.push(TranscriptEvent {
                    block: mnode.block.clone(),
                    outcome: label,
                    probability: prob,
                });
                node = child;
                current = post;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// text format
// ---------------------------------------------------------------------------

fn fmt_complex(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.im < 0.0 {
        format!("{}{}i", c.re, c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

fn parse_complex(text: &str) -> Option<Complex64> {
    let text = text.trim();
    if let Some(body) = text.strip_suffix('i') {
        // split re and im at the last +/- that is not an exponent sign
        let bytes = body.as_bytes();
        for pos in (1..bytes.len()).rev() {
            let ch = bytes[pos] as char;
            if (ch == '+' || ch == '-') && bytes[pos - 1] as char != 'e' {
                let re: f64 = body[..pos].parse().ok()?;
                let im: f64 = body[pos..].parse().ok()?;
                return Some(Complex64::new(re, im));
            }
        }
        let im: f64 = body.parse().ok()?;
        return Some(Complex64::new(0.0, im));
    }
    text.parse::<f64>().ok().map(|re| Complex64::new(re, 0.0))
}

fn fmt_block(block: &[usize]) -> String {
    block
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_measurement(measurement: &Measurement) -> String {
    match measurement {
        Measurement::PairParity => "pairparity".into(),
        Measurement::Triple4 => "triple4".into(),
        Measurement::ZBasis => "zbasis".into(),
        Measurement::XBasis => "xbasis".into(),
        Measurement::Custom(projs) => {
            let body = projs
                .iter()
                .map(|proj| {
                    proj.basis_vectors()
                        .iter()
                        .map(|v| {
                            v.iter().map(|&c| fmt_complex(c)).collect::<Vec<_>>().join(",")
                        })
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .collect::<Vec<_>>()
                .join("|");
            format!("custom({body})")
        }
    }
}

fn write_leaf(out: &mut String, guess: &Guess) {
    match guess {
        Guess::State(i) => write!(out, "guess={i}").unwrap(),
        Guess::Abstain => write!(out, "abstain").unwrap(),
    }
}

fn write_node(out: &mut String, node: &ProtocolNode, depth: usize) {
    let indent = "  ".repeat(depth);
    match node {
        ProtocolNode::Leaf(guess) => {
            out.push_str(&indent);
            write_leaf(out, guess);
            out.push('\n');
        }
        ProtocolNode::Measure(mnode) => {
            writeln!(
                out,
                "{indent}node block={} measure={}",
                fmt_block(&mnode.block),
                fmt_measurement(&mnode.measurement)
            )
            .unwrap();
            for (label, child) in &mnode.children {
                match child {
                    ProtocolNode::Leaf(guess) => {
                        write!(out, "{indent}outcome {label} ").unwrap();
                        write_leaf(out, guess);
                        out.push('\n');
                    }
                    deeper => {
                        writeln!(out, "{indent}outcome {label}").unwrap();
                        write_node(out, deeper, depth + 1);
                    }
                }
            }
            if let Some(child) = mnode.default_child.as_deref() {
                match child {
                    ProtocolNode::Leaf(guess) => {
                        write!(out, "{indent}default ").unwrap();
                        write_leaf(out, guess);
                        out.push('\n');
                    }
                    deeper => {
                        writeln!(out, "{indent}default").unwrap();
                        write_node(out, deeper, depth + 1);
                    }
                }
            }
            writeln!(out, "{indent}end").unwrap();
        }
    }
}

/// Render a protocol in the line-based text format.
pub fn protocol_to_string(tree: &ProtocolTree) -> String {
    let mut out = String::new();
    out.push_str("# discrimination protocol\n");
    writeln!(out, "partition={}", tree.partition).unwrap();
    write_node(&mut out, &tree.root, 0);
    out
}

struct LineStream<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineStream<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        LineStream { lines, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied();
        self.pos += 1;
        item
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_leaf(line: usize, text: &str) -> ProtocolResult<Guess> {
    let text = text.trim();
    if text == "abstain" {
        Ok(Guess::Abstain)
    } else if let Some(idx) = text.strip_prefix("guess=") {
        idx.trim()
            .parse::<usize>()
            .map(Guess::State)
            .map_err(|_| parse_err(line, format!("bad guess index {idx:?}")))
    } else {
        Err(parse_err(line, format!("expected leaf, got {text:?}")))
    }
}

fn parse_measurement(line: usize, text: &str, block: &[usize]) -> ProtocolResult<Measurement> {
    match text {
        "pairparity" => Ok(Measurement::PairParity),
        "triple4" => Ok(Measurement::Triple4),
        "zbasis" => Ok(Measurement::ZBasis),
        "xbasis" => Ok(Measurement::XBasis),
        custom => {
            let body = custom
                .strip_prefix("custom(")
                .and_then(|rest| rest.strip_suffix(')'))
                .ok_or_else(|| parse_err(line, format!("unknown measurement {custom:?}")))?;
            let projs = body
                .split('|')
                .map(|proj_text| {
                    let basis = proj_text
                        .split(';')
                        .map(|vec_text| {
                            vec_text
                                .split(',')
                                .map(|c| {
                                    parse_complex(c).ok_or_else(|| {
                                        parse_err(line, format!("bad amplitude {c:?}"))
                                    })
                                })
                                .collect::<ProtocolResult<Vec<Complex64>>>()
                        })
                        .collect::<ProtocolResult<Vec<_>>>()?;
                    LocalProjector::new(block.to_vec(), basis).map_err(|e| {
                        parse_err(line, format!("bad custom projector: {e}"))
                    })
                })
                .collect::<ProtocolResult<Vec<_>>>()?;
            Ok(Measurement::Custom(projs))
        }
    }
}

fn parse_element(stream: &mut LineStream<'_>) -> ProtocolResult<ProtocolNode> {
    let (line, text) = stream
        .next()
        .ok_or_else(|| parse_err(0, "unexpected end of input"))?;
    if !text.starts_with("node ") {
        return parse_leaf(line, text).map(ProtocolNode::Leaf);
    }

    let rest = text.strip_prefix("node ").unwrap();
    let (block_part, measure_part) = rest
        .split_once(" measure=")
        .ok_or_else(|| parse_err(line, "node line needs `block=` and `measure=`"))?;
    let block_text = block_part
        .trim()
        .strip_prefix("block=")
        .ok_or_else(|| parse_err(line, "node line needs `block=`"))?;
    let block: Vec<usize> = block_text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad party index {t:?}")))
        })
        .collect::<ProtocolResult<_>>()?;
    let measurement = parse_measurement(line, measure_part.trim(), &block)?;

    let mut children = Vec::new();
    let mut default_child = None;
    loop {
        let Some((line, text)) = stream.peek() else {
            return Err(parse_err(0, "missing `end`"));
        };
        if text == "end" {
            stream.next();
            break;
        }
        if let Some(rest) = text.strip_prefix("outcome ") {
            stream.next();
            let rest = rest.trim();
            let (label_text, inline) = match rest.split_once(' ') {
                Some((l, tail)) => (l, Some(tail)),
                None => (rest, None),
            };
            let label = if label_text.chars().all(|c| c == '0' || c == '1')
                && label_text.len() == block.len()
                && matches!(
                    measurement,
                    Measurement::ZBasis | Measurement::XBasis
                ) {
                OutcomeLabel::Bits(label_text.parse().unwrap())
            } else {
                label_text
                    .parse::<usize>()
                    .map(OutcomeLabel::Index)
                    .map_err(|_| parse_err(line, format!("bad outcome label {label_text:?}")))?
            };
            let child = match inline {
                Some(leaf_text) => ProtocolNode::Leaf(parse_leaf(line, leaf_text)?),
                None => parse_element(stream)?,
            };
            children.push((label, child));
        } else if let Some(rest) = text.strip_prefix("default") {
            stream.next();
            let rest = rest.trim();
            let child = if rest.is_empty() {
                parse_element(stream)?
            } else {
                ProtocolNode::Leaf(parse_leaf(line, rest)?)
            };
            default_child = Some(child);
        } else {
            return Err(parse_err(line, format!("unexpected line {text:?}")));
        }
    }
    Ok(ProtocolNode::Measure(MeasureNode::new(
        block,
        measurement,
        children,
        default_child,
    )))
}

/// Parse the protocol text format. Loaded protocols carry `Custom`
/// provenance.
pub fn protocol_from_string(text: &str) -> ProtocolResult<ProtocolTree> {
    let mut stream = LineStream::new(text);
    let (line, header) = stream
        .next()
        .ok_or_else(|| parse_err(0, "empty protocol file"))?;
    let partition_text = header
        .strip_prefix("partition=")
        .ok_or_else(|| parse_err(line, "first line must be `partition=...`"))?;
    let partition = Partition::parse(partition_text)
        .map_err(|e| parse_err(line, format!("bad partition: {e}")))?;
    let root = parse_element(&mut stream)?;
    if let Some((line, text)) = stream.peek() {
        return Err(parse_err(line, format!("trailing content {text:?}")));
    }
    Ok(ProtocolTree {
        partition,
        root,
        provenance: Provenance::Custom,
    })
}

pub fn save_protocol(tree: &ProtocolTree, path: impl AsRef<Path>) -> ProtocolResult<()> {
    std::fs::write(path, protocol_to_string(tree))?;
    Ok(())
}

pub fn load_protocol(path: impl AsRef<Path>) -> ProtocolResult<ProtocolTree> {
    protocol_from_string(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitions::pairings;
    use crate::sets::build_locked_set;

    fn pt(text: &str) -> Partition {
        Partition::parse(text).unwrap()
    }

    #[test]
    fn pairing_protocol_discriminates_four_qubit_set() {
        let set = build_locked_set(4).unwrap();
        let tree = generate_pairing_protocol(&set, &pt("12|34")).unwrap();
        assert_eq!(tree.provenance, Provenance::PairingPeel);
        let report = evaluate(&set, &tree).unwrap();
        assert_eq!(report.per_state_success.len(), 6);
        for (i, s) in report.per_state_success.iter().enumerate() {
            assert!((s - 1.0).abs() < PROB_TOL, "state {i}: success {s}");
        }
    }

    #[test]
    fn pairing_protocol_every_pairing_and_size() {
        for m in [4usize, 6] {
            let set = build_locked_set(m).unwrap();
            for p in pairings(m).unwrap() {
                let tree = generate_pairing_protocol(&set, &p).unwrap();
                let report = evaluate(&set, &tree).unwrap();
                assert!(
                    report.worst_case_success > 1.0 - PROB_TOL,
                    "m={m} pairing {p}: {}",
                    report.worst_case_success
                );
            }
        }
    }

    #[test]
    fn odd_protocol_discriminates() {
        let set5 = build_locked_set(5).unwrap();
        let tree = generate_odd_protocol(&set5, &pt("12|345")).unwrap();
        assert_eq!(tree.provenance, Provenance::OddPeelDerived);
        let report = evaluate(&set5, &tree).unwrap();
        assert!(report.worst_case_success > 1.0 - PROB_TOL);
        assert_eq!(report.per_state_success.len(), 7);

        let set7 = build_locked_set(7).unwrap();
        let tree = generate_odd_protocol(&set7, &pt("12|34|567")).unwrap();
        let report = evaluate(&set7, &tree).unwrap();
        assert!(report.worst_case_success > 1.0 - PROB_TOL);
        assert_eq!(report.per_state_success.len(), 9);
    }

    #[test]
    fn peel_order_does_not_matter() {
        let set = build_locked_set(5).unwrap();
        let p = pt("12|345");
        // triple first (the default for odd partitions)
        let t1 = generate_peel_protocol(&set, &p, &[1, 0]).unwrap();
        // pair first
        let t2 = generate_peel_protocol(&set, &p, &[0, 1]).unwrap();
        for tree in [t1, t2] {
            let report = evaluate(&set, &tree).unwrap();
            assert!(report.worst_case_success > 1.0 - PROB_TOL);
        }

        let set6 = build_locked_set(6).unwrap();
        let p6 = pt("12|34|56");
        for order in [[0usize, 1, 2], [2, 0, 1], [1, 2, 0]] {
            let tree = generate_peel_protocol(&set6, &p6, &order).unwrap();
            let report = evaluate(&set6, &tree).unwrap();
            assert!(report.worst_case_success > 1.0 - PROB_TOL, "order {order:?}");
        }
    }

    #[test]
    fn shape_errors() {
        let set = build_locked_set(4).unwrap();
        assert!(matches!(
            generate_pairing_protocol(&set, &pt("123|4")),
            Err(ProtocolError::Shape { .. })
        ));
        let set5 = build_locked_set(5).unwrap();
        assert!(matches!(
            generate_odd_protocol(&set5, &pt("1|2345")),
            Err(ProtocolError::Shape { .. })
        ));

        let custom = crate::sets::set_from_string(
            "m=4 N=2\n+1/sqrt2*0000;+1/sqrt2*1111\n+1/sqrt2*0000;-1/sqrt2*1111\n",
        )
        .unwrap();
        assert!(matches!(
            generate_pairing_protocol(&custom, &pt("12|34")),
            Err(ProtocolError::UnsupportedSet)
        ));
    }

    #[test]
    fn truncated_tree_halves_the_sign_pair() {
        // peel protocol with the X-parity finisher replaced by a one-qubit
        // X coin: flips decode perfectly, the ± pair becomes a fair guess
        let set = build_locked_set(4).unwrap();
        let coin = ProtocolNode::Measure(MeasureNode::new(
            vec![1],
            Measurement::XBasis,
            vec![
                (
                    OutcomeLabel::Bits("0".parse().unwrap()),
                    ProtocolNode::Leaf(Guess::State(0)),
                ),
                (
                    OutcomeLabel::Bits("1".parse().unwrap()),
                    ProtocolNode::Leaf(Guess::State(1)),
                ),
            ],
            None,
        ));
        let inner = ProtocolNode::Measure(MeasureNode::new(
            vec![1, 2],
            Measurement::PairParity,
            vec![
                (OutcomeLabel::Index(0), coin),
                (
                    OutcomeLabel::Index(1),
                    z_support_finisher(&set, &[2, 3]).unwrap(),
                ),
            ],
            None,
        ));
        let root = ProtocolNode::Measure(MeasureNode::new(
            vec![3, 4],
            Measurement::PairParity,
            vec![
                (OutcomeLabel::Index(0), inner),
                (
                    OutcomeLabel::Index(1),
                    z_support_finisher(&set, &[4, 5]).unwrap(),
                ),
            ],
            None,
        ));
        let tree = ProtocolTree {
            partition: pt("12|34"),
            root,
            provenance: Provenance::Custom,
        };
        let report = evaluate(&set, &tree).unwrap();
        // hand-computable branch sum: 1/2 for each ± state, 1 for flips
        assert!((report.per_state_success[0] - 0.5).abs() < PROB_TOL);
        assert!((report.per_state_success[1] - 0.5).abs() < PROB_TOL);
        for s in &report.per_state_success[2..] {
            assert!((s - 1.0).abs() < PROB_TOL);
        }
    }

    #[test]
    fn single_leaf_scores_one_state() {
        let set = build_locked_set(4).unwrap();
        let tree = ProtocolTree {
            partition: Partition::singletons(4),
            root: ProtocolNode::Leaf(Guess::State(0)),
            provenance: Provenance::Custom,
        };
        let report = evaluate(&set, &tree).unwrap();
        assert!((report.per_state_success[0] - 1.0).abs() < PROB_TOL);
        for s in &report.per_state_success[1..] {
            assert!(s.abs() < PROB_TOL);
        }
    }

    #[test]
    fn locality_violations_are_rejected() {
        let set = build_locked_set(4).unwrap();
        let tree = generate_pairing_protocol(&set, &pt("12|34")).unwrap();
        // declare a partition that splits the measured pair blocks
        let bad = ProtocolTree {
            partition: pt("13|24"),
            root: tree.root.clone(),
            provenance: Provenance::Custom,
        };
        assert!(matches!(
            evaluate(&set, &bad),
            Err(ProtocolError::Locality { .. })
        ));
    }

    #[test]
    fn incomplete_nodes_are_rejected() {
        let set = build_locked_set(4).unwrap();
        let root = ProtocolNode::Measure(MeasureNode::new(
            vec![3, 4],
            Measurement::PairParity,
            vec![(OutcomeLabel::Index(0), ProtocolNode::Leaf(Guess::State(0)))],
            None,
        ));
        let tree = ProtocolTree {
            partition: pt("12|34"),
            root,
            provenance: Provenance::Custom,
        };
        assert!(matches!(
            evaluate(&set, &tree),
            Err(ProtocolError::Incomplete(_))
        ));
    }

    #[test]
    fn custom_projectors_must_resolve_identity() {
        let set = build_locked_set(4).unwrap();
        let half_only = LocalProjector::span_of_bits(
            vec![3, 4],
            &["00".parse().unwrap(), "11".parse().unwrap()],
        )
        .unwrap();
        let root = ProtocolNode::Measure(MeasureNode::new(
            vec![3, 4],
            Measurement::Custom(vec![half_only]),
            vec![(OutcomeLabel::Index(0), ProtocolNode::Leaf(Guess::State(0)))],
            None,
        ));
        let tree = ProtocolTree {
            partition: pt("12|34"),
            root,
            provenance: Provenance::Custom,
        };
        assert!(matches!(
            evaluate(&set, &tree),
            Err(ProtocolError::NotAResolution { .. })
        ));
    }

    #[test]
    fn finishers_work_in_isolation() {
        // z-support splits every disjoint-support pair perfectly
        for m in [4usize, 6] {
            let set = build_locked_set(m).unwrap();
            for a in 0..set.len() {
                for b in (a + 1)..set.len() {
                    if a == 0 && b == 1 {
                        continue; // the ± pair shares support
                    }
                    let node = z_support_finisher(&set, &[a, b]).unwrap();
                    let tree = ProtocolTree {
                        partition: Partition::singletons(m),
                        root: node,
                        provenance: Provenance::Custom,
                    };
                    let report = evaluate(&set, &tree).unwrap();
                    assert!((report.per_state_success[a] - 1.0).abs() < PROB_TOL);
                    assert!((report.per_state_success[b] - 1.0).abs() < PROB_TOL);
                }
            }
            // and the ± pair is rejected
            assert!(matches!(
                z_support_finisher(&set, &[0, 1]),
                Err(ProtocolError::SupportOverlap(0, 1))
            ));
        }

        // x-parity splits the ± pair for every size up to 12
        for m in 3..=12 {
            let set = build_locked_set(m).unwrap();
            let tree = ProtocolTree {
                partition: Partition::singletons(m),
                root: x_parity_finisher(m, 0, 1),
                provenance: Provenance::Custom,
            };
            let report = evaluate(&set, &tree).unwrap();
            assert!((report.per_state_success[0] - 1.0).abs() < PROB_TOL, "m={m}");
            assert!((report.per_state_success[1] - 1.0).abs() < PROB_TOL, "m={m}");
        }
    }

    #[test]
    fn sampling_agrees_with_exact_evaluation() {
        let set = build_locked_set(4).unwrap();
        let tree = generate_pairing_protocol(&set, &pt("12|34")).unwrap();
        for true_state in 0..set.len() {
            for seed in 0..20u64 {
                let t = sample_run(&set, &tree, true_state, seed).unwrap();
                assert_eq!(t.guess, Guess::State(true_state), "seed {seed}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let set = build_locked_set(6).unwrap();
        let tree = generate_pairing_protocol(&set, &pt("12|34|56")).unwrap();
        let a = sample_run(&set, &tree, 0, 99).unwrap();
        let b = sample_run(&set, &tree, 0, 99).unwrap();
        assert_eq!(a.guess, b.guess);
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!(x.block, y.block);
            assert_eq!(x.outcome, y.outcome);
        }
    }

    #[test]
    fn truncated_tree_sampling_matches_the_half_rate() {
        let set = build_locked_set(4).unwrap();
        let coin = ProtocolNode::Measure(MeasureNode::new(
            vec![1],
            Measurement::XBasis,
            vec![
                (
                    OutcomeLabel::Bits("0".parse().unwrap()),
                    ProtocolNode::Leaf(Guess::State(0)),
                ),
                (
                    OutcomeLabel::Bits("1".parse().unwrap()),
                    ProtocolNode::Leaf(Guess::State(1)),
                ),
            ],
            None,
        ));
        let tree = ProtocolTree {
            partition: Partition::singletons(4),
            root: coin,
            provenance: Provenance::Custom,
        };
        let runs = 1000;
        let correct = (0..runs)
            .filter(|&seed| {
                sample_run(&set, &tree, 0, seed).unwrap().guess == Guess::State(0)
            })
            .count();
        // binomial(1000, 1/2): five sigma is about 79
        assert!((correct as i64 - 500).abs() < 80, "correct={correct}");
    }

    #[test]
    fn protocol_text_round_trip() {
        let set = build_locked_set(6).unwrap();
        let tree = generate_pairing_protocol(&set, &pt("12|34|56")).unwrap();
        let text = protocol_to_string(&tree);
        let loaded = protocol_from_string(&text).unwrap();
        assert_eq!(loaded.partition, tree.partition);
        let before = evaluate(&set, &tree).unwrap();
        let after = evaluate(&set, &loaded).unwrap();
        assert_eq!(before.per_state_success.len(), after.per_state_success.len());
        for (x, y) in before
            .per_state_success
            .iter()
            .zip(&after.per_state_success)
        {
            assert!((x - y).abs() < PROB_TOL);
        }
    }

    #[test]
    fn custom_measurement_round_trip() {
        let set = build_locked_set(4).unwrap();
        let even = LocalProjector::span_of_bits(
            vec![3, 4],
            &["00".parse().unwrap(), "11".parse().unwrap()],
        )
        .unwrap();
        let odd = LocalProjector::span_of_bits(
            vec![3, 4],
            &["01".parse().unwrap(), "10".parse().unwrap()],
        )
        .unwrap();
        let root = ProtocolNode::Measure(MeasureNode::new(
            vec![3, 4],
            Measurement::Custom(vec![even, odd]),
            vec![
                (OutcomeLabel::Index(0), ProtocolNode::Leaf(Guess::Abstain)),
                (
                    OutcomeLabel::Index(1),
                    z_support_finisher(&set, &[4, 5]).unwrap(),
                ),
            ],
            None,
        ));
        let tree = ProtocolTree {
            partition: pt("12|34"),
            root,
            provenance: Provenance::Custom,
        };
        let text = protocol_to_string(&tree);
        let loaded = protocol_from_string(&text).unwrap();
        let before = evaluate(&set, &tree).unwrap();
        let after = evaluate(&set, &loaded).unwrap();
        for (x, y) in before
            .per_state_success
            .iter()
            .zip(&after.per_state_success)
        {
            assert!((x - y).abs() < PROB_TOL);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(
            protocol_from_string("node block=1 measure=zbasis\nend\n"),
            Err(ProtocolError::Parse { line: 1, .. })
        ));
        let missing_end = "partition=12|34\nnode block=3,4 measure=pairparity\noutcome 0 guess=0\n";
        assert!(matches!(
            protocol_from_string(missing_end),
            Err(ProtocolError::Parse { .. })
        ));
        let bad_measure = "partition=12|34\nnode block=3,4 measure=bogus\nend\n";
        assert!(matches!(
            protocol_from_string(bad_measure),
            Err(ProtocolError::Parse { line: 2, .. })
        ));
    }
}
