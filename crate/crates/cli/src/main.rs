use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use smrcheck::annotator::repair_streaming;
use smrcheck::automata::{load_builtin, parse_automaton, with_base, SmrAutomaton};
use smrcheck::corpus;
use smrcheck::inference::typecheck;
use smrcheck::instrument::instrument;
use smrcheck::lang::{parse_program, pretty_print, Program};
use smrcheck::oracle::{explore, Budget, Mode};
use smrcheck::rules::SafeCallTable;
use smrcheck::types::TypeContext;

#[derive(Parser)]
#[command(name = "smrcheck", version, about = "Type checking and bounded exploration for code using safe memory reclamation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Infer guarantee types; exit 1 if some command gets Top.
    Typecheck {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        smr: Smr,
        /// On failure, try to repair the annotations (log as JSON lines on stderr).
        #[arg(long)]
        repair: bool,
        #[arg(long, default_value_t = 8)]
        rounds: usize,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        out: Output,
    },
    /// Print the assertion-instrumented program.
    Instrument {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        out: Output,
    },
    /// Explore all interleavings within a bound; exit 1 on a violation.
    Explore {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        smr: Smr,
        #[arg(long, default_value = "races")]
        mode: Mode,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        out: Output,
    },
    /// Repair the annotations of a program; exit 1 if that fails.
    Repair {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        smr: Smr,
        #[arg(long, default_value_t = 8)]
        rounds: usize,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        out: Output,
    },
    /// Inspect an automaton.
    Automaton {
        query: Query,
        #[command(flatten)]
        smr: Smr,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Query {
    /// The largest closed set of locations that cannot free the tracked address.
    Safeloc,
    /// Every location with its markers.
    Locations,
    /// The automaton in its source syntax.
    Show,
}

#[derive(Args)]
struct Input {
    /// Program file; `corpus/NAME.prog` and `corpus/micro/NAME.prog` fall back to the shipped corpus.
    #[arg(long)]
    program: PathBuf,
}

#[derive(Args)]
struct Smr {
    /// Built-in automaton name (base, ebr, hp2) or a `.smr` file.
    #[arg(long, default_value = "base")]
    smr: String,
    /// Do not multiply with the base automaton.
    #[arg(long)]
    no_base: bool,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 2)]
    threads: usize,
    #[arg(long, default_value_t = 3)]
    addresses: usize,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Explorer worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Let the environment free and reuse every address.
    #[arg(long)]
    frees: bool,
}

#[derive(Args)]
struct Output {
    #[arg(long)]
    json: bool,
    /// Write the main output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Fail(u8, String);

impl Fail {
    fn usage(msg: impl ToString) -> Fail {
        Fail(2, msg.to_string())
    }
}

impl BudgetArgs {
    fn budget(&self) -> Budget {
        let b = Budget {
            threads: self.threads,
            addresses: self.addresses,
            steps: self.steps,
            jobs: self.jobs,
            ..Budget::default()
        };
        if self.frees {
            b.with_frees()
        } else {
            b
        }
    }
}

impl Output {
    fn emit(&self, text: &str) -> Result<(), Fail> {
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|e| Fail::usage(format!("{}: {e}", p.display()))),
            None => {
                print!("{text}");
                if !text.ends_with('\n') {
                    println!();
                }
                Ok(())
            }
        }
    }

    fn value(&self, v: &Value) -> Result<(), Fail> {
        self.emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")))
    }
}

fn embedded(path: &Path) -> Option<&'static str> {
    let s = path.to_str()?.replace('\\', "/");
    let name = Path::new(&s).file_stem()?.to_str()?.to_string();
    if s.ends_with(&format!("corpus/micro/{name}.prog")) {
        corpus::micro(&name).map(|e| e.source)
    } else if s.ends_with(&format!("corpus/{name}.prog")) {
        corpus::structure(&name).map(|e| e.source)
    } else {
        None
    }
}

fn load_program(input: &Input) -> Result<Program, Fail> {
    let text = match std::fs::read_to_string(&input.program) {
        Ok(t) => t,
        Err(e) => match embedded(&input.program) {
            Some(t) => t.to_string(),
            None => return Err(Fail::usage(format!("{}: {e}", input.program.display()))),
        },
    };
    let prog = parse_program(&text).map_err(|e| Fail::usage(format!("{}: {e}", input.program.display())))?;
    smrcheck::lang::validate(&prog).map_err(|e| Fail::usage(format!("{}: {e}", input.program.display())))?;
    Ok(prog)
}

fn load_smr(s: &Smr) -> Result<SmrAutomaton, Fail> {
    if let Some(o) = load_builtin(&s.smr, !s.no_base) {
        return Ok(o);
    }
    let text = std::fs::read_to_string(&s.smr).map_err(|e| Fail::usage(format!("unknown automaton `{}`: {e}", s.smr)))?;
    let o = parse_automaton(&text).map_err(|e| Fail::usage(format!("{}: {e}", s.smr)))?;
    if s.no_base {
        Ok(o)
    } else {
        with_base(&o).map_err(|e| Fail::usage(format!("{}: {e}", s.smr)))
    }
}

fn run_repair(prog: &Program, o: &SmrAutomaton, b: &BudgetArgs, rounds: usize, out: &Output) -> Result<u8, Fail> {
    let r = repair_streaming(prog, o, &b.budget(), rounds, &mut |v| eprintln!("{v}"));
    out.emit(&pretty_print(&r.program))?;
    Ok(if r.repaired { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<u8, Fail> {
    match cli.cmd {
        Cmd::Typecheck { input, smr, repair, rounds, budget, out } => {
            let prog = load_program(&input)?;
            let o = load_smr(&smr)?;
            let table = SafeCallTable::from_automaton(&o);
            let ctx = TypeContext::new(o.clone());
            let report = typecheck(&prog, &ctx, &table).map_err(Fail::usage)?;
            if !report.ok() && repair {
                return run_repair(&prog, &o, &budget, rounds, &out);
            }
            if out.json {
                out.value(&report.to_json(&ctx))?;
            } else {
                out.emit(&report.render(&ctx, false))?;
            }
            Ok(if report.ok() { 0 } else { 1 })
        }
        Cmd::Instrument { input, out } => {
            let prog = load_program(&input)?;
            out.emit(&pretty_print(&instrument(&prog)))?;
            Ok(0)
        }
        Cmd::Explore { input, smr, mode, budget, out } => {
            let prog = load_program(&input)?;
            let o = load_smr(&smr)?;
            let r = explore(&prog, &o, &budget.budget(), mode).map_err(Fail::usage)?;
            if out.json {
                out.value(&r.to_json())?;
            } else {
                out.emit(&r.render())?;
            }
            Ok(if r.clean() { 0 } else { 1 })
        }
        Cmd::Repair { input, smr, rounds, budget, out } => {
            let prog = load_program(&input)?;
            let o = load_smr(&smr)?;
            run_repair(&prog, &o, &budget, rounds, &out)
        }
        Cmd::Automaton { query, smr, out } => {
            let o = load_smr(&smr)?;
            match query {
                Query::Safeloc => {
                    let names = o.locset_names(o.safe_locations());
                    if out.json {
                        out.value(&json!({ "automaton": o.name, "safeloc": names }))?;
                    } else {
                        out.emit(&format!("{}\n", names.join("\n")))?;
                    }
                }
                Query::Locations => {
                    let locs: Vec<Value> = o
                        .locations
                        .iter()
                        .enumerate()
                        .map(|(i, l)| {
                            json!({ "name": l.name, "initial": i == o.initial, "accepting": l.accepting, "active": l.active })
                        })
                        .collect();
                    if out.json {
                        out.value(&json!({ "automaton": o.name, "locations": locs }))?;
                    } else {
                        let mut s = String::new();
                        for l in &locs {
                            s.push_str(l["name"].as_str().unwrap());
                            for m in ["initial", "accepting", "active"] {
                                if l[m] == true {
                                    s.push(' ');
                                    s.push_str(m);
                                }
                            }
                            s.push('\n');
                        }
                        out.emit(&s)?;
                    }
                }
                Query::Show => out.emit(&o.to_dsl())?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
