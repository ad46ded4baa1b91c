//! Argument handling and report rendering for the `shapval` binary.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use serde_json::{json, Value};
use shapval_core::analyzer::classify;
use shapval_core::counting::{fgmc_vector, fmc_vector, pqe, Config, CountVector, Strategy};
use shapval_core::dbformat::{parse_fact, parse_fact_list, DatabaseFile};
use shapval_core::error::Error;
use shapval_core::query::{parse_query, Query};
use shapval_core::rational::{format_decimal, format_rational, parse_rational, Rational};
use shapval_core::reduction::{fgmc_via_shapley, Mode, Options, ReductionReport};
use shapval_core::relational::{Constant, ConstantSet, Fact, FactSet, PartitionedDatabase};
use shapval_core::shapley::{
    max_shapley, max_shapley_fast, shapley_all, shapley_constants, shapley_permutations, shapley_subsets, ConstantPartition, QueryGame,
};
use shapval_core::verify::{verify, VerifyOptions};

/// Exit status for malformed input.
pub const EXIT_INPUT: i32 = 2;
/// Exit status when an engine limit or hypothesis check fails.
pub const EXIT_LIMIT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "shapval", version, about = "Exact Shapley values of database facts for Boolean queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Also print a decimal approximation next to every exact value.
    #[arg(long, global = true)]
    approx: bool,
    /// Maximum number of subsets an enumeration may visit.
    #[arg(long, global = true, env = "SHAPVAL_BUDGET")]
    budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Debug, Clone)]
struct QueryArgs {
    /// Query text, e.g. `R(x), S(x,y), T(y)`.
    #[arg(long, conflicts_with = "query_file")]
    query: Option<String>,
    /// File holding the query text.
    #[arg(long)]
    query_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Instance {
    /// Database file: `R(a,b)` endogenous, `!R(a,b)` exogenous, `R(a,b) @ 1/2` probabilistic.
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    query: QueryArgs,
}

#[derive(Args, Debug, Clone)]
struct Counting {
    #[command(flatten)]
    instance: Instance,
    /// Count only subsets of this size.
    #[arg(long, conflicts_with = "vector")]
    size: Option<usize>,
    /// Print the counts for every size.
    #[arg(long)]
    vector: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    PseudoConnected,
    Leak,
    Decomposable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    /// Sum over coalitions.
    Subsets,
    /// Average over orderings (at most 9 players).
    Permutations,
}

#[derive(Args, Debug, Clone)]
struct LeakArgs {
    /// Second query `q'` of the leak construction.
    #[arg(long)]
    q_prime: Option<String>,
    /// Minimal support `S'` of `q'`, as a comma-separated fact list.
    #[arg(long)]
    s_prime: Option<String>,
    /// Word-length bound for regular path queries.
    #[arg(long)]
    bound: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shapley value of one endogenous fact, or of all of them.
    Shapley {
        #[command(flatten)]
        instance: Instance,
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        fact: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// A fact of maximum Shapley value.
    MaxShapley {
        #[command(flatten)]
        instance: Instance,
        /// Return a fact that alone satisfies the query when there is one.
        #[arg(long)]
        fast: bool,
    },
    /// Shapley value of constants; the listed constants are the players.
    ShapleyConst {
        #[command(flatten)]
        instance: Instance,
        /// Comma-separated endogenous constants; all others are exogenous.
        #[arg(long, value_delimiter = ',', required = true)]
        players: Vec<String>,
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        constant: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Subsets of all facts satisfying the query.
    Mc(Counting),
    /// Subsets of the endogenous facts that together with the exogenous ones satisfy the query.
    Gmc(Counting),
    /// Same as `mc --size`, or the whole vector with `--vector`.
    Fmc(Counting),
    /// Same as `gmc --size`, or the whole vector with `--vector`.
    Fgmc(Counting),
    /// Probability of the query on a tuple-independent database.
    Pqe {
        #[command(flatten)]
        instance: Instance,
        /// Probability of every endogenous fact without an annotation.
        #[arg(long)]
        p: Option<String>,
    },
    /// Complexity classification of the query.
    Classify {
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Count vector computed only from Shapley values through a reduction.
    Reduce {
        #[command(flatten)]
        instance: Instance,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = OracleArg::Subsets)]
        oracle: OracleArg,
        #[command(flatten)]
        leak: LeakArgs,
        /// Only duplicate a constant that occurs in a single fact.
        #[arg(long)]
        endogenous_only: bool,
        /// Allow constructions only sketched for queries with constants.
        #[arg(long)]
        experimental: bool,
        /// Dump every gadget database with the oracle answer and derived values.
        #[arg(long)]
        trace: bool,
    },
    /// Runs the invariant suites on the instance.
    Verify {
        #[command(flatten)]
        instance: Instance,
        #[command(flatten)]
        leak: LeakArgs,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Engine(Error),
    /// A verification report naming a failed property.
    Failed { report: String, property: &'static str },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => f.write_str(m),
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Failed { property, .. } => write!(f, "property {property} failed"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

struct Ctx {
    format: Format,
    approx: bool,
    cfg: Config,
}

impl Ctx {
    fn rational_text(&self, r: &Rational) -> String {
        if self.approx {
            format!("{} (~{})", format_rational(r), format_decimal(r, 6))
        } else {
            format_rational(r)
        }
    }

    fn rational_json(&self, r: &Rational) -> Value {
        let mut v = json!({ "num": r.numer().to_string(), "den": r.denom().to_string() });
        if self.approx {
            v["approx"] = Value::String(format_decimal(r, 6));
        }
        v
    }
}

fn load_query(args: &QueryArgs) -> CliResult<Query> {
    let text = match (&args.query, &args.query_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?,
        (None, None) => return Err(input("one of --query or --query-file is required")),
    };
    parse_query(text.trim()).map_err(|e| input(format!("query: {e}")))
}

fn load_file(path: &PathBuf) -> CliResult<DatabaseFile> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    DatabaseFile::parse(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load(inst: &Instance) -> CliResult<(Query, DatabaseFile, PartitionedDatabase)> {
    let q = load_query(&inst.query)?;
    let file = load_file(&inst.db)?;
    let db = file.partitioned().map_err(input)?;
    Ok((q, file, db))
}

fn leak_mode(args: &LeakArgs) -> CliResult<Option<(Query, FactSet)>> {
    match (&args.q_prime, &args.s_prime) {
        (Some(q), Some(s)) => {
            let q = parse_query(q).map_err(|e| input(format!("--q-prime: {e}")))?;
            let s = parse_fact_list(s).map_err(|e| input(format!("--s-prime: {e}")))?;
            Ok(Some((q, s.into_iter().collect())))
        }
        (None, None) => Ok(None),
        _ => Err(input("--q-prime and --s-prime must be given together")),
    }
}

fn endogenous_fact(db: &PartitionedDatabase, text: &str) -> CliResult<Fact> {
    let f = parse_fact(text).map_err(|e| input(format!("--fact: {e}")))?;
    if !db.endo().contains(&f) {
        return Err(input(format!("{f} is not an endogenous fact of the database")));
    }
    Ok(f)
}

fn counts_json(v: &CountVector) -> Value {
    Value::Array(v.0.iter().map(|c| Value::String(c.to_string())).collect())
}

fn count_at(v: &CountVector, k: usize) -> BigUint {
    v.get(k)
}

/// Parses `argv`, runs the command and writes the report to `out`.
/// Diagnostics go to stderr. Returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            let _ = writeln!(out, "{text}");
            0
        }
        Err(CliError::Failed { report, property }) => {
            let _ = writeln!(out, "{report}");
            eprintln!("error: property {property} failed");
            EXIT_LIMIT
        }
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            EXIT_INPUT
        }
        Err(CliError::Engine(e)) => {
            eprintln!("error: {e}");
            if e.is_limit() {
                EXIT_LIMIT
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn execute(cli: Cli) -> CliResult<String> {
    let mut cfg = Config::default();
    if let Some(b) = cli.budget {
        cfg = Config::with_budget(b).strategy(Strategy::default());
    }
    let ctx = Ctx {
        format: cli.format,
        approx: cli.approx,
        cfg,
    };
    let json = ctx.format == Format::Json;
    match cli.command {
        Command::Shapley { instance, fact, all } => {
            let (q, _, db) = load(&instance)?;
            let g = QueryGame::new(q, db.clone());
            if all {
                let values = shapley_all(&g, &ctx.cfg)?;
                if json {
                    let rows: Vec<Value> = values
                        .iter()
                        .map(|(f, v)| json!({ "fact": f.to_string(), "value": ctx.rational_json(v) }))
                        .collect();
                    return Ok(json!({ "values": rows }).to_string());
                }
                let lines: Vec<String> = values.iter().map(|(f, v)| format!("{f}\t{}", ctx.rational_text(v))).collect();
                return Ok(lines.join("\n"));
            }
            let f = endogenous_fact(&db, fact.as_deref().expect("clap requires --fact"))?;
            let v = shapley_subsets(&g, &f, &ctx.cfg)?;
            Ok(if json {
                json!({ "fact": f.to_string(), "value": ctx.rational_json(&v) }).to_string()
            } else {
                ctx.rational_text(&v)
            })
        }
        Command::MaxShapley { instance, fast } => {
            let (q, _, db) = load(&instance)?;
            let g = QueryGame::new(q, db);
            let (f, v) = if fast { max_shapley_fast(&g, &ctx.cfg)? } else { max_shapley(&g, &ctx.cfg)? };
            Ok(if json {
                json!({ "fact": f.to_string(), "value": ctx.rational_json(&v) }).to_string()
            } else {
                format!("{f}\t{}", ctx.rational_text(&v))
            })
        }
        Command::ShapleyConst { instance, players, constant, all } => {
            let (q, file, _) = load(&instance)?;
            let facts: FactSet = file.partitioned().map_err(input)?.all_facts();
            let endo: ConstantSet = players.iter().map(|p| Constant::new(p.trim())).collect();
            let present = shapval_core::relational::constants_of(&facts);
            if let Some(c) = endo.iter().find(|c| !present.contains(*c)) {
                return Err(input(format!("constant {c} does not occur in the database")));
            }
            let cp = ConstantPartition::for_database(&facts, endo.clone());
            let targets: Vec<Constant> = if all {
                endo.into_iter().collect()
            } else {
                let c = Constant::new(constant.expect("clap requires --constant").trim());
                if !cp.endo.contains(&c) {
                    return Err(input(format!("{c} is not one of the --players constants")));
                }
                vec![c]
            };
            let mut rows = Vec::new();
            for c in targets {
                let v = shapley_constants(&q, &facts, &cp, &c, &ctx.cfg)?;
                rows.push((c, v));
            }
            if json {
                let rows: Vec<Value> = rows
                    .iter()
                    .map(|(c, v)| json!({ "constant": c.to_string(), "value": ctx.rational_json(v) }))
                    .collect();
                return Ok(json!({ "values": rows }).to_string());
            }
            if rows.len() == 1 && !all {
                return Ok(ctx.rational_text(&rows[0].1));
            }
            Ok(rows.iter().map(|(c, v)| format!("{c}\t{}", ctx.rational_text(v))).collect::<Vec<_>>().join("\n"))
        }
        Command::Mc(c) | Command::Fmc(c) => {
            let (q, _, db) = load(&c.instance)?;
            let v = fmc_vector(&q, &db.all_facts(), &ctx.cfg)?;
            Ok(render_counts(&ctx, &c, &v))
        }
        Command::Gmc(c) | Command::Fgmc(c) => {
            let (q, _, db) = load(&c.instance)?;
            let v = fgmc_vector(&q, &db, &ctx.cfg)?;
            Ok(render_counts(&ctx, &c, &v))
        }
        Command::Pqe { instance, p } => {
            let (q, file, _) = load(&instance)?;
            let default = p
                .map(|t| parse_rational(&t).map_err(|e| input(format!("--p: {e}"))))
                .transpose()?;
            if let Some(p) = &default {
                if *p <= Rational::default() || *p > Rational::from_integer(1.into()) {
                    return Err(input(format!("--p must lie in (0, 1], got {}", format_rational(p))));
                }
            }
            let pd = file.probabilistic(default.as_ref()).map_err(input)?;
            let v = pqe(&q, &pd, &ctx.cfg)?;
            Ok(if json { json!({ "probability": ctx.rational_json(&v) }).to_string() } else { ctx.rational_text(&v) })
        }
        Command::Classify { query } => {
            let q = load_query(&query)?;
            let v = classify(&q)?;
            Ok(if json { v.to_json().to_string() } else { v.to_string() })
        }
        Command::Reduce {
            instance,
            mode,
            oracle,
            leak,
            endogenous_only,
            experimental,
            trace,
        } => {
            let (q, _, db) = load(&instance)?;
            let mode = match mode {
                ModeArg::PseudoConnected => Mode::PseudoConnected,
                ModeArg::Decomposable => Mode::Decomposable,
                ModeArg::Leak => {
                    let (q_prime, s_prime) = leak_mode(&leak)?.ok_or_else(|| input("leak mode needs --q-prime and --s-prime"))?;
                    Mode::Leak { q_prime, s_prime }
                }
            };
            let opts = Options {
                bound: leak.bound,
                endogenous_only,
                experimental,
            };
            let cfg = ctx.cfg.clone();
            let report = fgmc_via_shapley(&q, &mode, &db, &opts, |q, d, f| {
                let g = QueryGame::new(q.clone(), d.clone());
                match oracle {
                    OracleArg::Subsets => shapley_subsets(&g, f, &cfg),
                    OracleArg::Permutations => shapley_permutations(&g, f),
                }
            })?;
            Ok(render_reduction(&ctx, &report, trace))
        }
        Command::Verify { instance, leak } => {
            let (q, _, db) = load(&instance)?;
            let opts = VerifyOptions {
                config: ctx.cfg.clone(),
                leak: leak_mode(&leak)?,
                bound: leak.bound,
            };
            let report = verify(&q, &db, &opts);
            let text = if json { report.to_json().to_string() } else { report.to_string() };
            if let Some(c) = report.first_failure() {
                return Err(CliError::Failed { report: text, property: c.name });
            }
            Ok(text)
        }
    }
}

fn render_counts(ctx: &Ctx, c: &Counting, v: &CountVector) -> String {
    let json = ctx.format == Format::Json;
    match (c.size, c.vector) {
        (Some(k), _) => {
            let n = count_at(v, k);
            if json {
                json!({ "size": k, "count": n.to_string() }).to_string()
            } else {
                n.to_string()
            }
        }
        (None, true) => {
            if json {
                json!({ "vector": counts_json(v) }).to_string()
            } else {
                v.to_string()
            }
        }
        (None, false) => {
            let n = v.total();
            if json {
                json!({ "count": n.to_string() }).to_string()
            } else {
                n.to_string()
            }
        }
    }
}

fn render_reduction(ctx: &Ctx, r: &ReductionReport, trace: bool) -> String {
    if ctx.format == Format::Json {
        let mut v = json!({
            "vector": counts_json(&r.vector),
            "oracle_calls": r.oracle_calls,
            "notes": r.notes,
        });
        if trace {
            v["trace"] = Value::Array(
                r.steps
                    .iter()
                    .map(|s| {
                        json!({
                            "part": s.label,
                            "i": s.i,
                            "pivot": s.pivot.to_string(),
                            "database": s.database.to_text(),
                            "oracle": ctx.rational_json(&s.oracle),
                            "z": ctx.rational_json(&s.z),
                            "sh": ctx.rational_json(&s.sh),
                        })
                    })
                    .collect(),
            );
        }
        return v.to_string();
    }
    if trace {
        format!("{}{}", r.trace_text(), r.vector)
    } else {
        r.vector.to_string()
    }
}
