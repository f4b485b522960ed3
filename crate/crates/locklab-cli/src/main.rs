//! Command-line surface of the information-locking simulator.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error, 3 internal
//! soundness violation (a certified property falsified at runtime — never
//! expected, CI-fatal).

use clap::{Parser, Subcommand, ValueEnum};
use locklab::certify::{LockEvidence, LockStatus};
use locklab::netharness::{self, HarnessError, Scenario};
use locklab::partitions::Partition;
use locklab::protocols::{self, Provenance};
use locklab::resources::{self, ResourceError};
use locklab::sets;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "locklab",
    version,
    about = "Multiparty information locking with GHZ-type state sets: build locked sets, certify partitions, run and score LOCC discrimination protocols, account Bell-pair costs, and simulate the full distribution task."
)]
struct Cli {
    /// Output rendering; values are identical in both.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    S1,
    S2,
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in locked set for m parties.
    GenSet {
        #[arg(short)]
        m: usize,
        /// Output path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Produce Bell-triple lock certificates for one-vs-rest cuts.
    Certify {
        #[arg(short)]
        m: usize,
        /// Cut party; all parties when omitted.
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Lock status of one partition for the built-in set.
    Status {
        #[arg(short)]
        m: usize,
        /// Partition, e.g. "12|3|4" (commas for parties above 9).
        #[arg(short)]
        partition: String,
    },
    /// Exhaustive status table over every partition (m <= 8).
    Audit {
        #[arg(short)]
        m: usize,
    },
    /// Generate the constructive discrimination protocol for a partition.
    Protocol {
        #[arg(short)]
        m: usize,
        #[arg(short)]
        partition: String,
        /// Output path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Exact per-state evaluation of a protocol file against a set file.
    Eval {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        proto: PathBuf,
    },
    /// Minimum Bell-pair extraction plan.
    Plan {
        #[arg(short)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Baseline::S1)]
        baseline: Baseline,
        /// Also admit unverified partitions as targets (exploratory, not
        /// certified).
        #[arg(long)]
        optimistic: bool,
    },
    /// Entanglement costs E(S1), E(S2) and the gap per party count.
    DeltaTable {
        #[arg(long, default_value_t = 12)]
        m_max: usize,
        /// Add odd party counts (derived construction).
        #[arg(long)]
        include_odd: bool,
    },
    /// Run a full scenario from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Also write the event log to this path (for `replay`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-execute a logged run and verify it byte-for-byte.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn domain(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 1,
        }
    }
}

macro_rules! domain_error_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::domain(e.to_string())
            }
        })*
    };
}

domain_error_from!(
    locklab::partitions::PartitionError,
    locklab::sets::SetError,
    locklab::certify::CertifyError,
    locklab::protocols::ProtocolError,
    locklab::qstate::QStateError,
    std::io::Error
);

impl From<ResourceError> for CliError {
    fn from(e: ResourceError) -> Self {
        let code = match e {
            ResourceError::VerificationFailed { .. } => 3,
            _ => 1,
        };
        CliError {
            message: e.to_string(),
            code,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::SoundnessViolation(_) => 3,
            HarnessError::Resource(ResourceError::VerificationFailed { .. }) => 3,
            _ => 1,
        };
        CliError {
            message: e.to_string(),
            code,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSet { m, output } => gen_set(m, output),
        Command::Certify { m, cut } => certify_cmd(m, cut, cli.format),
        Command::Status { m, partition } => status_cmd(m, &partition, cli.format),
        Command::Audit { m } => audit_cmd(m, cli.format),
        Command::Protocol {
            m,
            partition,
            output,
        } => protocol_cmd(m, &partition, output),
        Command::Eval { set, proto } => eval_cmd(&set, &proto, cli.format),
        Command::Plan {
            m,
            baseline,
            optimistic,
        } => plan_cmd(m, baseline, optimistic, cli.format),
        Command::DeltaTable { m_max, include_odd } => {
            delta_table_cmd(m_max, include_odd, cli.format)
        }
        Command::Simulate { config, output } => simulate_cmd(&config, output, cli.format),
        Command::Replay { log } => replay_cmd(&log, cli.format),
    }
}

fn parse_partition(text: &str, m: usize) -> Result<Partition, CliError> {
    let partition = Partition::parse(text)?;
    if partition.num_parties() != m {
        return Err(CliError::domain(format!(
            "partition {partition} covers {} parties, -m says {m}",
            partition.num_parties()
        )));
    }
    Ok(partition)
}

fn gen_set(m: usize, output: Option<PathBuf>) -> Result<(), CliError> {
    let set = sets::build_locked_set(m)?;
    let text = sets::set_to_string(&set)?;
    match output {
        Some(path) => {
            std::fs::write(&path, text)?;
            println!("wrote {} states over {m} qubits to {}", set.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn fmt_triple(triple: [usize; 3]) -> String {
    format!("{},{},{}", triple[0], triple[1], triple[2])
}

fn certify_cmd(m: usize, cut: Option<usize>, format: Format) -> Result<(), CliError> {
    let set = sets::build_locked_set(m)?;
    let cuts: Vec<usize> = match cut {
        Some(j) => vec![j],
        None => (1..=m).collect(),
    };
    for j in cuts {
        let cert = locklab::certify::bell_triple_certificate(&set, j)?;
        match format {
            Format::Records => println!(
                "certificate cut={} triple={} f0={:.9} f1={:.9} f2={:.9}",
                cert.cut_party,
                fmt_triple(cert.triple),
                cert.bell_fidelities[0],
                cert.bell_fidelities[1],
                cert.bell_fidelities[2]
            ),
            Format::Table => println!(
                "cut party {}: triple {{{}}}, bell fidelities {:.9} {:.9} {:.9}",
                cert.cut_party,
                fmt_triple(cert.triple),
                cert.bell_fidelities[0],
                cert.bell_fidelities[1],
                cert.bell_fidelities[2]
            ),
        }
    }
    Ok(())
}

fn render_status(partition: &Partition, status: &LockStatus, format: Format) {
    match (status, format) {
        (LockStatus::Locked(LockEvidence::BellTriple(cert)), Format::Table) => println!(
            "partition {partition}: LOCKED (certificate at cut party {}, triple {{{}}})",
            cert.cut_party,
            fmt_triple(cert.triple)
        ),
        (LockStatus::Locked(LockEvidence::BellTriple(cert)), Format::Records) => println!(
            "status partition={partition} verdict=LOCKED cut={} triple={}",
            cert.cut_party,
            fmt_triple(cert.triple)
        ),
        (LockStatus::Locked(LockEvidence::EveryBipartition), Format::Table) => {
            println!("partition {partition}: LOCKED (locked across every bipartition)")
        }
        (LockStatus::Locked(LockEvidence::EveryBipartition), Format::Records) => {
            println!("status partition={partition} verdict=LOCKED rule=every-bipartition")
        }
        (LockStatus::Open(e), Format::Table) => println!(
            "partition {partition}: OPEN (verified protocol on {}, worst-case success {:.9})",
            e.via, e.worst_case_success
        ),
        (LockStatus::Open(e), Format::Records) => println!(
            "status partition={partition} verdict=OPEN via={} success={:.9}",
            e.via, e.worst_case_success
        ),
        (LockStatus::Unknown, Format::Table) => {
            println!("partition {partition}: UNKNOWN (no certificate, no verified protocol)")
        }
        (LockStatus::Unknown, Format::Records) => {
            println!("status partition={partition} verdict=UNKNOWN")
        }
    }
}

fn status_cmd(m: usize, partition_text: &str, format: Format) -> Result<(), CliError> {
    let partition = parse_partition(partition_text, m)?;
    let profile = resources::profile_s1(m)?;
    let status = profile.status(&partition);
    render_status(&partition, &status, format);
    Ok(())
}

fn audit_cmd(m: usize, format: Format) -> Result<(), CliError> {
    let profile = resources::profile_s1(m)?;
    let set = profile.set().expect("built-in profile carries its set");
    let table = locklab::certify::audit_all(set, profile.registry())?;
    for row in &table.rows {
        render_status(&row.partition, &row.status, format);
    }
    match format {
        Format::Table => println!(
            "total {}: {} locked, {} open, {} unknown",
            table.rows.len(),
            table.locked,
            table.open,
            table.unknown
        ),
        Format::Records => println!(
            "audit m={m} partitions={} locked={} open={} unknown={}",
            table.rows.len(),
            table.locked,
            table.open,
            table.unknown
        ),
    }
    Ok(())
}

fn generate_for_shape(
    set: &locklab::StateSet,
    partition: &Partition,
) -> Result<locklab::ProtocolTree, CliError> {
    let tree = if partition.blocks().iter().all(|b| b.len() == 2) {
        protocols::generate_pairing_protocol(set, partition)?
    } else if partition.blocks().iter().any(|b| b.len() == 3) {
        protocols::generate_odd_protocol(set, partition)?
    } else {
        let order: Vec<usize> = (0..partition.num_blocks()).rev().collect();
        protocols::generate_peel_protocol(set, partition, &order)?
    };
    Ok(tree)
}

fn protocol_cmd(m: usize, partition_text: &str, output: Option<PathBuf>) -> Result<(), CliError> {
    let partition = parse_partition(partition_text, m)?;
    let set = sets::build_locked_set(m)?;
    let tree = generate_for_shape(&set, &partition)?;
    let note = match tree.provenance {
        Provenance::OddPeelDerived => " (derived construction)",
        _ => "",
    };
    let text = protocols::protocol_to_string(&tree);
    match output {
        Some(path) => {
            std::fs::write(&path, text)?;
            println!(
                "wrote protocol for {partition}{note} to {}",
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn eval_cmd(set_path: &PathBuf, proto_path: &PathBuf, format: Format) -> Result<(), CliError> {
    let set = sets::load_set(set_path)?;
    let tree = protocols::load_protocol(proto_path)?;
    let report = protocols::evaluate(&set, &tree)?;
    for (i, s) in report.per_state_success.iter().enumerate() {
        match format {
            Format::Table => println!("state {i}: success {s:.9}"),
            Format::Records => println!("eval state={i} success={s:.9}"),
        }
    }
    match format {
        Format::Table => println!("worst-case success {:.9}", report.worst_case_success),
        Format::Records => println!(
            "eval worst_case={:.9} branches={}",
            report.worst_case_success, report.branch_count
        ),
    }
    Ok(())
}

fn plan_cmd(
    m: usize,
    baseline: Baseline,
    optimistic: bool,
    format: Format,
) -> Result<(), CliError> {
    let profile = match baseline {
        Baseline::S1 => resources::profile_s1(m)?,
        Baseline::S2 => resources::profile_s2(m)?,
    };
    let name = match baseline {
        Baseline::S1 => "s1",
        Baseline::S2 => "s2",
    };
    let plan = resources::plan_extraction(&profile)?;
    let moves: Vec<String> = plan
        .moves
        .iter()
        .map(|mv| match format {
            Format::Table => format!("{}->{}", mv.source, mv.dest),
            Format::Records => format!("{}>{}", mv.source, mv.dest),
        })
        .collect();
    match format {
        Format::Table => {
            println!(
                "baseline {name}, m={m}: minimum cost {} Bell pairs, witness {}",
                plan.bell_cost, plan.target
            );
            println!("moves: {}", moves.join(", "));
        }
        Format::Records => println!(
            "plan baseline={name} m={m} cost={} witness={} moves={}",
            plan.bell_cost,
            plan.target,
            moves.join(",")
        ),
    }
    if optimistic {
        let (cost, witness) = resources::min_bell_cost_optimistic(&profile)?;
        match format {
            Format::Table => println!(
                "optimistic (non-certified): cost {cost} Bell pairs, witness {witness}"
            ),
            Format::Records => {
                println!("plan-optimistic certified=false cost={cost} witness={witness}")
            }
        }
    }
    Ok(())
}

fn delta_table_cmd(m_max: usize, include_odd: bool, format: Format) -> Result<(), CliError> {
    if m_max < 4 {
        return Err(CliError::domain(format!(
            "delta table starts at m=4, got m-max {m_max}"
        )));
    }
    if format == Format::Table {
        println!("{:>3} {:>6} {:>6} {:>4}  construction", "m", "E(S1)", "E(S2)", "dE");
    }
    for m in 4..=m_max {
        let odd = m % 2 == 1;
        if odd && !include_odd {
            continue;
        }
        let e1 = if odd { m.div_ceil(2) } else { m / 2 };
        let e2 = m - 1;
        let de = resources::delta_e(m)?;
        debug_assert_eq!(e2 - e1, de);
        let construction = if odd { "derived" } else { "proven" };
        match format {
            Format::Table => {
                println!("{m:>3} {e1:>6} {e2:>6} {de:>4}  {construction}")
            }
            Format::Records => println!(
                "delta m={m} e1={e1} e2={e2} de={de} construction={construction}"
            ),
        }
    }
    Ok(())
}

fn resolve_seed(scenario: &mut Scenario) {
    if scenario.seed.is_none() {
        if let Some(seed) = std::env::var("LOCKLAB_SEED")
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
        {
            scenario.seed = Some(seed);
        }
    }
}

fn simulate_cmd(
    config: &PathBuf,
    output: Option<PathBuf>,
    format: Format,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config)?;
    let mut scenario = Scenario::from_config_str(&text)?;
    resolve_seed(&mut scenario);
    let (report, log) = netharness::run_scenario(&scenario)?;
    print!("{}", log.to_text());
    if format == Format::Table {
        let v = &report.verdict;
        if v.sufficient {
            println!(
                "# extraction decoded symbol {} with {} Bell pairs ({})",
                v.decoded.expect("sufficient runs decode"),
                v.bell_consumed,
                if v.exact { "exact" } else { "MISMATCH" }
            );
        } else {
            println!("# budget insufficient; message stays locked");
        }
    }
    if let Some(path) = output {
        std::fs::write(&path, log.to_text())?;
    }
    Ok(())
}

fn replay_cmd(log_path: &PathBuf, format: Format) -> Result<(), CliError> {
    let text = std::fs::read_to_string(log_path)?;
    let report = netharness::replay(&text)?;
    match format {
        Format::Table => println!(
            "replay ok: {} records verified; decoded={:?} secret={} exact={}",
            report.events_checked,
            report.verdict.decoded,
            report.verdict.secret,
            report.verdict.exact
        ),
        Format::Records => println!(
            "replay records={} decoded={} secret={} exact={}",
            report.events_checked,
            report
                .verdict
                .decoded
                .map_or("none".to_string(), |d| d.to_string()),
            report.verdict.secret,
            report.verdict.exact
        ),
    }
    Ok(())
}
