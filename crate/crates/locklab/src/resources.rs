//! Entanglement accounting: distinguishability profiles, teleportation
//! plans, minimum Bell-pair costs, and the even/odd resource gap.
//!
//! The cost model is one Bell pair = one teleportation = one two-party
//! merge. Merges form a forest over the parties, so reaching a partition P
//! from all-singletons consumes exactly m − |P| pairs. The minimum cost of
//! complete extraction is therefore the minimum of m − |P| over partitions
//! P certified open, and the gap between the everywhere-locked baseline
//! (cost m − 1) and the built-in family (cost m/2 even, (m+1)/2 odd) grows
//! linearly with m.

use crate::certify::{
    self, BellTripleCertificate, LockEvidence, LockStatus, OpenEvidence, OpenRegistry,
};
use crate::partitions::{odd_canonical_partitions, pairings, Partition};
use crate::protocols;
use crate::qstate::PROB_TOL;
use crate::sets::{build_locked_set, StateSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("profiles require at least {min} parties, got {got}")]
    TooFewParties { got: usize, min: usize },
    #[error("profile has no certified-open partition")]
    NoOpenPartition,
    #[error("resource gap is defined for m >= 3, got {0}")]
    DeltaDomain(usize),
    #[error("ledger over budget: granted {granted}, requested total {requested}")]
    BudgetExceeded { granted: usize, requested: usize },
    #[error(
        "verification failed on {partition}: worst-case success {success} (soundness bug)"
    )]
    VerificationFailed { partition: String, success: f64 },
    #[error(transparent)]
    Partition(#[from] crate::partitions::PartitionError),
    #[error(transparent)]
    Protocol(#[from] protocols::ProtocolError),
    #[error(transparent)]
    Set(#[from] crate::sets::SetError),
}

pub type ResourceResult<T> = Result<T, ResourceError>;

/// Where a profile's statuses come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    /// The built-in GHZ-type family, backed by certificates and verified
    /// protocols.
    S1,
    /// Abstract baseline for a set locally indistinguishable across every
    /// bipartition: open only when all parties merge.
    S2Baseline,
    /// User-supplied set and registry.
    Custom,
}

/// Lock-status function over partitions for one set (or the baseline rule).
#[derive(Clone, Debug)]
pub struct Profile {
    m: usize,
    kind: ProfileKind,
    set: Option<StateSet>,
    registry: OpenRegistry,
}

impl Profile {
    pub fn num_parties(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn set(&self) -> Option<&StateSet> {
        self.set.as_ref()
    }

    pub fn registry(&self) -> &OpenRegistry {
        &self.registry
    }

    /// Lock status of a partition under this profile.
    pub fn status(&self, partition: &Partition) -> LockStatus {
        match self.kind {
            ProfileKind::S2Baseline => {
                if partition.num_blocks() == 1 {
                    LockStatus::Open(OpenEvidence {
                        via: Partition::single_block(self.m),
                        worst_case_success: 1.0,
                    })
                } else {
                    LockStatus::Locked(LockEvidence::EveryBipartition)
                }
            }
            ProfileKind::S1 | ProfileKind::Custom => {
                let set = self.set.as_ref().expect("set-backed profile has a set");
                certify::lock_status(set, partition, &self.registry)
            }
        }
    }

    /// Certified-open partitions: the registry entries (plus the all-merged
    /// partition for the baseline). Coarsenings of these are open too, but
    /// they only cost more, so cost searches range over this list.
    pub fn open_candidates(&self) -> Vec<OpenEvidence> {
        match self.kind {
            ProfileKind::S2Baseline => vec![OpenEvidence {
                via: Partition::single_block(self.m),
                worst_case_success: 1.0,
            }],
            _ => self.registry.entries().to_vec(),
        }
    }
}

/// Verify the peel protocol on one partition and record it in the registry.
fn verify_into(
    registry: &mut OpenRegistry,
    set: &StateSet,
    partition: Partition,
) -> ResourceResult<()> {
    let tree = if partition.blocks().iter().all(|b| b.len() == 2) {
        protocols::generate_pairing_protocol(set, &partition)?
    } else if partition.blocks().iter().any(|b| b.len() == 3) {
        protocols::generate_odd_protocol(set, &partition)?
    } else {
        // single-block and other layouts run through the generic engine
        let order: Vec<usize> = (0..partition.num_blocks()).rev().collect();
        protocols::generate_peel_protocol(set, &partition, &order)?
    };
    let report = protocols::evaluate(set, &tree)?;
    if report.worst_case_success < 1.0 - PROB_TOL {
        return Err(ResourceError::VerificationFailed {
            partition: partition.to_string(),
            success: report.worst_case_success,
        });
    }
    registry.push_verified(partition, report.worst_case_success);
    Ok(())
}

/// Largest m whose full pairing (or pairs-plus-triple) family is verified
/// eagerly when building the built-in profile. Beyond this, only the
/// canonical partition is verified; other partitions report `Unknown`
/// rather than claim an unverified `Open`.
pub const EXHAUSTIVE_PROFILE_LIMIT: usize = 10;

/// Profile of the built-in family on m qubits.
///
/// Every registry partition is protocol-verified at construction: all
/// pairings for even m, all pairs-plus-triple layouts for odd m ≥ 5, and
/// the single joint block for m = 3 (where collaboration of all parties is
/// the only opening).
pub fn profile_s1(m: usize) -> ResourceResult<Profile> {
    if m < 3 {
        return Err(ResourceError::TooFewParties { got: m, min: 3 });
    }
    let set = build_locked_set(m)?;
    let mut registry = OpenRegistry::new();
    if m == 3 {
        verify_into(&mut registry, &set, Partition::single_block(3))?;
    } else if m <= EXHAUSTIVE_PROFILE_LIMIT {
        let family = if m.is_multiple_of(2) {
            pairings(m)?
        } else {
            odd_canonical_partitions(m)?
        };
        for partition in family {
            verify_into(&mut registry, &set, partition)?;
        }
    } else {
        verify_into(&mut registry, &set, canonical_partition(m)?)?;
    }
    Ok(Profile {
        m,
        kind: ProfileKind::S1,
        set: Some(set),
        registry,
    })
}

/// The canonical open partition: consecutive pairs, with a trailing triple
/// when m is odd.
pub fn canonical_partition(m: usize) -> ResourceResult<Partition> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    if m.is_multiple_of(2) {
        for p in (1..=m).step_by(2) {
            blocks.push(vec![p, p + 1]);
        }
    } else if m == 3 {
        blocks.push(vec![1, 2, 3]);
    } else {
        for p in (1..=m - 3).step_by(2) {
            blocks.push(vec![p, p + 1]);
        }
        blocks.push(vec![m - 2, m - 1, m]);
    }
    Ok(Partition::new(m, blocks)?)
}

/// Abstract baseline profile for a set locally indistinguishable across
/// every bipartition. No construction of such a set is attempted; the
/// defining property is taken as the rule.
pub fn profile_s2(m: usize) -> ResourceResult<Profile> {
    if m < 2 {
        return Err(ResourceError::TooFewParties { got: m, min: 2 });
    }
    Ok(Profile {
        m,
        kind: ProfileKind::S2Baseline,
        set: None,
        registry: OpenRegistry::new(),
    })
}

/// Profile over a user-supplied set with a caller-verified registry.
pub fn profile_custom(set: StateSet, registry: OpenRegistry) -> Profile {
    Profile {
        m: set.num_qubits(),
        kind: ProfileKind::Custom,
        set: Some(set),
        registry,
    }
}

/// Minimum Bell pairs needed to reach a certified-open partition, and a
/// partition achieving it. `Unknown` partitions are excluded: the reported
/// cost is always achievable with a verified protocol.
pub fn min_bell_cost(profile: &Profile) -> ResourceResult<(usize, Partition)> {
    let m = profile.num_parties();
    profile
        .open_candidates()
        .into_iter()
        .map(|e| (m - e.via.num_blocks(), e.via))
        .min_by_key(|(cost, _)| *cost)
        .ok_or(ResourceError::NoOpenPartition)
}

/// Exploratory lower bound that also admits `Unknown` partitions as
/// targets. Anything below the certified cost is *not* backed by a
/// protocol; callers must label it accordingly.
pub fn min_bell_cost_optimistic(profile: &Profile) -> ResourceResult<(usize, Partition)> {
    let m = profile.num_parties();
    let certified = min_bell_cost(profile)?;
    let mut best = certified;
    for partition in crate::partitions::enumerate_partitions(m)? {
        let cost = m - partition.num_blocks();
        if cost < best.0 && !profile.status(&partition).is_locked() {
            best = (cost, partition);
        }
    }
    Ok(best)
}

/// One teleportation: `source`'s qubit moves to `dest`'s site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeleportMove {
    pub source: usize,
    pub dest: usize,
}

/// Teleportation schedule reaching a target partition from all-singletons.
#[derive(Clone, Debug)]
pub struct ExtractionPlan {
    pub target: Partition,
    pub moves: Vec<TeleportMove>,
    pub bell_cost: usize,
}

impl ExtractionPlan {
    /// Replay the moves from the all-singletons partition; used to check
    /// plan validity.
    pub fn apply_from_singletons(&self) -> Partition {
        let m = self.target.num_parties();
        let mut location: Vec<usize> = (0..=m).collect(); // qubit -> hosting party
        for mv in &self.moves {
            location[mv.source] = location[mv.dest];
        }
        let mut blocks: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for q in 1..=m {
            blocks.entry(location[q]).or_default().push(q);
        }
        Partition::new(m, blocks.into_values().collect())
            .expect("locations group qubits into a partition")
    }
}

/// Deterministic plan for the cheapest certified extraction: inside each
/// target block every member teleports to the block's lowest-indexed
/// party; moves are ordered by source.
pub fn plan_extraction(profile: &Profile) -> ResourceResult<ExtractionPlan> {
    let (cost, target) = min_bell_cost(profile)?;
    Ok(plan_for_target(&target, cost))
}

fn plan_for_target(target: &Partition, cost: usize) -> ExtractionPlan {
    let mut moves = Vec::new();
    for block in target.blocks() {
        let dest = block[0];
        for &source in &block[1..] {
            moves.push(TeleportMove { source, dest });
        }
    }
    moves.sort_by_key(|mv| mv.source);
    debug_assert_eq!(moves.len(), cost);
    ExtractionPlan {
        target: target.clone(),
        moves,
        bell_cost: cost,
    }
}

/// The resource gap between the everywhere-locked baseline and the
/// built-in family: (m−2)/2 for even m, (m−3)/2 for odd m ≥ 5, and 0 at
/// m = 3 where three parties admit no advantage.
pub fn delta_e(m: usize) -> ResourceResult<usize> {
    match m {
        0..=2 => Err(ResourceError::DeltaDomain(m)),
        3 => Ok(0),
        _ if m.is_multiple_of(2) => Ok((m - 2) / 2),
        _ => Ok((m - 3) / 2),
    }
}

/// Why a budget is insufficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcedStructure {
    /// Too few merges: every reachable partition keeps a singleton block,
    /// whose one-vs-rest certificate locks it.
    SingletonBlock,
    /// Baseline rule: anything short of merging all parties leaves at
    /// least two blocks, across which the set stays locked.
    MultipleBlocks,
}

/// Insufficiency verdict with its pigeonhole justification.
#[derive(Clone, Debug)]
pub struct InsufficiencyReport {
    pub budget: usize,
    pub min_cost: usize,
    /// `budget` merges from all-singletons leave at least this many blocks.
    pub min_blocks_reachable: usize,
    pub forced: ForcedStructure,
    /// A best reachable partition under the budget.
    pub witness_partition: Partition,
    /// Lock certificate for the witness, when the profile carries a set.
    pub certificate: Option<Box<BellTripleCertificate>>,
}

/// Verdict of [`insufficiency_check`].
#[derive(Clone, Debug)]
pub enum Verdict {
    Sufficient(ExtractionPlan),
    Insufficient(InsufficiencyReport),
}

impl Verdict {
    pub fn is_sufficient(&self) -> bool {
        matches!(self, Verdict::Sufficient(_))
    }
}

/// Decide whether `budget` Bell pairs suffice for certified extraction
/// under this profile.
///
/// A partition is reachable with b merges iff it has at least m − b
/// blocks. Below the minimum cost, every reachable partition is locked:
/// for the built-in family, more than m/2 blocks over m parties force a
/// singleton block; for the baseline, anything with two or more blocks is
/// locked outright.
pub fn insufficiency_check(profile: &Profile, budget: usize) -> ResourceResult<Verdict> {
    let m = profile.num_parties();
    let (min_cost, _) = min_bell_cost(profile)?;
    if budget >= min_cost {
        let mut plan = plan_extraction(profile)?;
        debug_assert!(plan.bell_cost <= budget);
        plan.bell_cost = plan.moves.len();
        return Ok(Verdict::Sufficient(plan));
    }

    let forced = match profile.kind() {
        ProfileKind::S2Baseline => ForcedStructure::MultipleBlocks,
        _ => ForcedStructure::SingletonBlock,
    };
    // best reachable: greedily merge consecutive pairs with the budget
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut next = 1usize;
    let mut merges_left = budget;
    match forced {
        ForcedStructure::SingletonBlock => {
            while merges_left > 0 && next < m {
                blocks.push(vec![next, next + 1]);
                next += 2;
                merges_left -= 1;
            }
        }
        ForcedStructure::MultipleBlocks => {
            if budget > 0 {
                blocks.push((1..=budget + 1).collect());
                next = budget + 2;
            }
        }
    }
    for p in next..=m {
        blocks.push(vec![p]);
    }
    let witness_partition = Partition::new(m, blocks)?;
    let certificate = profile.set().and_then(|set| {
        witness_partition
            .blocks()
            .iter()
            .find(|b| b.len() == 1)
            .and_then(|b| certify::bell_triple_certificate(set, b[0]).ok())
            .map(Box::new)
    });
    Ok(Verdict::Insufficient(InsufficiencyReport {
        budget,
        min_cost,
        min_blocks_reachable: m - budget,
        forced,
        witness_partition,
        certificate,
    }))
}

/// Bell-pair bookkeeping for a harness run.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ledger {
    granted: usize,
    consumed: usize,
}

impl Ledger {
    pub fn new(granted: usize) -> Self {
        Ledger {
            granted,
            consumed: 0,
        }
    }

    pub fn granted(&self) -> usize {
        self.granted
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn remaining(&self) -> usize {
        self.granted - self.consumed
    }

    pub fn consume(&mut self, pairs: usize) -> ResourceResult<()> {
        let requested = self.consumed + pairs;
        if requested > self.granted {
            return Err(ResourceError::BudgetExceeded {
                granted: self.granted,
                requested,
            });
        }
        self.consumed = requested;
        Ok(())
    }
}
