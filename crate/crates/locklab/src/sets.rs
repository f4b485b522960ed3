//! The locked state families and their serialization.
//!
//! The built-in family on m qubits encodes an (m+2)-level message into
//! GHZ-type states, each the equal superposition of a bitstring and its
//! bitwise complement:
//!
//! ```text
//! index 0      |0..0⟩ + |1..1⟩
//! index 1      |0..0⟩ − |1..1⟩
//! index 1+i    |e_i⟩  + |ē_i⟩      e_i = only bit i set, i = 1..m
//! ```
//!
//! The order is frozen: it defines the message encoding, the guess labels
//! used by protocols, and the row order of the set file format.

use crate::qstate::{self, Bitstring, StateVector, NORM_TOL};
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetError {
    #[error("locked sets require at least 3 parties, got {0}")]
    TooFewParties(usize),
    #[error("state construction failed: {0}")]
    State(#[from] qstate::QStateError),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("loaded set violates orthogonality (max overlap {max_overlap:.3e})")]
    Invariant { max_overlap: f64 },
    #[error("state {index} cannot be written in the ±1/sqrt2 term format")]
    UnsupportedAmplitude { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SetResult<T> = Result<T, SetError>;

/// An ordered list of pairwise-orthogonal states encoding the message
/// symbols `0..N-1`.
#[derive(Clone, Debug)]
pub struct StateSet {
    num_qubits: usize,
    states: Vec<StateVector>,
    /// False when the set is exactly the built-in family in canonical order.
    custom: bool,
}

impl StateSet {
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Message symbols, one per state.
    pub fn labels(&self) -> impl Iterator<Item = usize> {
        0..self.states.len()
    }

    pub fn state(&self, label: usize) -> Option<&StateVector> {
        self.states.get(label)
    }

    pub fn is_custom(&self) -> bool {
        self.custom
    }
}

/// Build the locked family on `m ≥ 3` qubits in canonical order.
pub fn build_locked_set(m: usize) -> SetResult<StateSet> {
    if m < 3 {
        return Err(SetError::TooFewParties(m));
    }
    let one = Complex64::ONE;
    let neg = -Complex64::ONE;
    let zeros = Bitstring::zeros(m);
    let ones = Bitstring::ones(m);
    let mut states = Vec::with_capacity(m + 2);
    states.push(qstate::superpose(&[
        (one, zeros.clone()),
        (one, ones.clone()),
    ])?);
    states.push(qstate::superpose(&[(one, zeros), (neg, ones)])?);
    for i in 1..=m {
        let flip = Bitstring::unit(m, i);
        let comp = flip.complement();
        states.push(qstate::superpose(&[(one, flip), (one, comp)])?);
    }
    Ok(StateSet {
        num_qubits: m,
        states,
        custom: false,
    })
}

/// Result of an orthogonality audit over a set.
#[derive(Clone, Copy, Debug)]
pub struct OrthogonalityReport {
    pub max_overlap: f64,
    pub pass: bool,
}

/// Largest |⟨ψ_a|ψ_b⟩| over distinct pairs, checked against the
/// orthogonality tolerance.
pub fn check_orthogonality(set: &StateSet) -> OrthogonalityReport {
    let mut max_overlap: f64 = 0.0;
    for (i, a) in set.states.iter().enumerate() {
        for b in set.states.iter().skip(i + 1) {
            let overlap = qstate::inner_product(a, b)
                .expect("states in a set share a dimension")
                .norm();
            max_overlap = max_overlap.max(overlap);
        }
    }
    OrthogonalityReport {
        max_overlap,
        pass: max_overlap < NORM_TOL,
    }
}

const COEFF_PLUS: &str = "+1/sqrt2";
const COEFF_MINUS: &str = "-1/sqrt2";

/// Render a set in the text format: a `m=<int> N=<int>` header, then one
/// line per state of semicolon-separated `<sign>1/sqrt2*<bitstring>` terms.
///
/// Only states whose nonzero amplitudes are all ±1/√2 are representable,
/// which covers the built-in family; coefficients are stored symbolically
/// so a round trip reproduces amplitudes exactly.
pub fn set_to_string(set: &StateSet) -> SetResult<String> {
    let mut out = String::new();
    writeln!(out, "# locked state set, party 1 leftmost").unwrap();
    writeln!(out, "m={} N={}", set.num_qubits, set.states.len()).unwrap();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for (index, state) in set.states.iter().enumerate() {
        let mut terms = Vec::new();
        for (g, amp) in state.amplitudes().iter().enumerate() {
            if amp.norm_sqr() < NORM_TOL * NORM_TOL {
                continue;
            }
            let coeff = if (amp.re - half).abs() < NORM_TOL && amp.im.abs() < NORM_TOL {
                COEFF_PLUS
            } else if (amp.re + half).abs() < NORM_TOL && amp.im.abs() < NORM_TOL {
                COEFF_MINUS
            } else {
                return Err(SetError::UnsupportedAmplitude { index });
            };
            let bits = Bitstring::from_index(g, set.num_qubits);
            terms.push(format!("{coeff}*{bits}"));
        }
        if terms.len() != 2 {
            return Err(SetError::UnsupportedAmplitude { index });
        }
        writeln!(out, "{}", terms.join(";")).unwrap();
    }
    Ok(out)
}

/// Parse the set file format. See [`set_to_string`].
pub fn set_from_string(text: &str) -> SetResult<StateSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| SetError::Parse {
            line: 0,
            reason: "missing header".into(),
        })?;
    let parse_header = |text: &str| -> Option<(usize, usize)> {
        let mut m = None;
        let mut n = None;
        for field in text.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "m" => m = value.parse().ok(),
                "N" => n = value.parse().ok(),
                _ => return None,
            }
        }
        Some((m?, n?))
    };
    let (m, n) = parse_header(header).ok_or_else(|| SetError::Parse {
        line: header_line,
        reason: format!("bad header {header:?}, expected `m=<int> N=<int>`"),
    })?;

    let mut states = Vec::new();
    for (line, content) in lines {
        let mut terms = Vec::new();
        for raw in content.split(';') {
            let raw = raw.trim();
            let (coeff_text, bits_text) =
                raw.split_once('*').ok_or_else(|| SetError::Parse {
                    line,
                    reason: format!("term {raw:?} is missing `*`"),
                })?;
            let sign = match coeff_text {
                COEFF_PLUS | "1/sqrt2" => Complex64::ONE,
                COEFF_MINUS => -Complex64::ONE,
                other => {
                    return Err(SetError::Parse {
                        line,
                        reason: format!("malformed coefficient token {other:?}"),
                    })
                }
            };
            let bits: Bitstring = bits_text.parse().map_err(|_| SetError::Parse {
                line,
                reason: format!("malformed bitstring {bits_text:?}"),
            })?;
            if bits.len() != m {
                return Err(SetError::Parse {
                    line,
                    reason: format!("bitstring {bits_text:?} has length {}, expected {m}", bits.len()),
                });
            }
            terms.push((sign, bits));
        }
        let state = qstate::superpose(&terms).map_err(|e| SetError::Parse {
            line,
            reason: e.to_string(),
        })?;
        states.push(state);
    }
    if states.len() != n {
        return Err(SetError::Parse {
            line: 0,
            reason: format!("header declares N={n} but {} states follow", states.len()),
        });
    }

    let set = StateSet {
        num_qubits: m,
        states,
        custom: true,
    };
    let report = check_orthogonality(&set);
    if !report.pass {
        return Err(SetError::Invariant {
            max_overlap: report.max_overlap,
        });
    }
    Ok(StateSet {
        custom: !matches_builtin(&set),
        ..set
    })
}

/// True when the set is exactly the built-in family in canonical order.
pub fn matches_builtin(set: &StateSet) -> bool {
    let Ok(builtin) = build_locked_set(set.num_qubits) else {
        return false;
    };
    builtin.states.len() == set.states.len()
        && builtin
            .states
            .iter()
            .zip(&set.states)
            .all(|(a, b)| a == b)
}

pub fn save_set(set: &StateSet, path: impl AsRef<Path>) -> SetResult<()> {
    std::fs::write(path, set_to_string(set)?)?;
    Ok(())
}

pub fn load_set(path: impl AsRef<Path>) -> SetResult<StateSet> {
    set_from_string(&std::fs::read_to_string(path)?)
}
