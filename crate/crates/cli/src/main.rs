use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use chemosched::analysis::{
    cmd_compare, cmd_sweep, cmd_vss, gantt_svg, lambda_presets, outcome_csv, CompareSpec, SweepSpec,
};
use chemosched::gen::{fixture_instances, generate_instance, ClassModel, GenSpec};
use chemosched::heuristics::SequencingRule;
use chemosched::lpha::{run_lpha, LphaConfig, LphaError, SubproblemPolicy};
use chemosched::model::{expected_cost, validate};
use chemosched::{evaluate, EvaluatorConfig, FirstStageSchedule, Instance, ObjectiveWeights};

#[derive(Parser)]
#[command(name = "chemosched", version, about = "Chemotherapy appointment scheduling under duration uncertainty")]
struct Cli {
    /// Worker threads for scenario subproblems.
    #[arg(long, global = true, env = "CHEMOSCHED_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random instance from the duration class model.
    Generate(GenerateArgs),
    /// Write the ten benchmark instances to a directory.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
    },
    /// Run LPHA on one instance.
    Solve(SolveArgs),
    /// Expected cost of a schedule, or the detailed outcome of one scenario.
    Evaluate {
        instance: PathBuf,
        schedule: PathBuf,
        #[arg(long, value_parser = parse_weights)]
        weights: Option<ObjectiveWeights>,
        /// Print the per-patient outcome of this scenario as CSV.
        #[arg(long)]
        scenario: Option<usize>,
    },
    /// Gap table of hedging heuristics against LPHA.
    CompareHeuristics {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        lpha: LphaArgs,
        /// Skip the fixed-sequence appointment optimization rows.
        #[arg(long)]
        no_opt: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value of the stochastic solution over the mean-value schedule.
    Vss {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        lpha: LphaArgs,
    },
    /// Sensitivity sweep over weights, nurses and chairs.
    Sweep {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        lpha: LphaArgs,
        /// Use the twelve preset weight combinations instead of --weights.
        #[arg(long)]
        lambda_presets: bool,
        #[arg(long, value_delimiter = ',')]
        nurses: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        chairs: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the chair and nurse timelines of one scenario as SVG.
    Gantt {
        instance: PathBuf,
        schedule: PathBuf,
        #[arg(long, default_value_t = 0)]
        scenario: usize,
        #[arg(long, value_parser = parse_weights)]
        weights: Option<ObjectiveWeights>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    index: usize,
    #[arg(long, default_value_t = 8)]
    patients: usize,
    #[arg(long, default_value_t = 50)]
    scenarios: usize,
    #[arg(long, default_value_t = 2)]
    nurses: usize,
    #[arg(long, default_value_t = 4)]
    chairs: usize,
    #[arg(long, default_value_t = 240)]
    shift: i64,
    #[arg(long, default_value_t = 180)]
    overtime_limit: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Redraw classes until mean durations imply about this much overtime.
    #[arg(long)]
    target_overtime: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[command(flatten)]
    lpha: LphaArgs,
    /// Where to write the schedule.
    #[arg(long)]
    schedule_out: Option<PathBuf>,
    /// Where to write the run report; stdout when absent.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Where to write the per-iteration trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

/// LPHA settings. Flags override values from `--config`.
#[derive(Args, Clone)]
struct LphaArgs {
    /// JSON file with LphaConfig fields and an optional `weights` object.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Objective weights as `wait,overtime,idle`.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<ObjectiveWeights>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rho_u1: Option<f64>,
    #[arg(long)]
    rho_u2: Option<f64>,
    #[arg(long)]
    iterlimit: Option<usize>,
    #[arg(long)]
    fix_start_iter: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Nurse capacity B (simultaneous patients per nurse).
    #[arg(long)]
    nurse_capacity: Option<usize>,
    /// auto, exhaustive or local_search.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<SubproblemPolicy>,
    /// Return the last consensus instead of the best schedule seen.
    #[arg(long)]
    no_incumbent: bool,
    #[arg(long)]
    polish_evaluations: Option<u64>,
}

#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(default)]
    weights: Option<ObjectiveWeights>,
    #[serde(flatten)]
    lpha: LphaConfig,
}

impl LphaArgs {
    fn resolve(&self, threads: Option<usize>) -> Result<(ObjectiveWeights, LphaConfig)> {
        let file: FileConfig = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => FileConfig::default(),
        };
        let mut c = file.lpha;
        let w = self.weights.or(file.weights).unwrap_or_default();
        w.validate()?;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(alpha, rho0, rho_u1, rho_u2, iterlimit, fix_start_iter, max_iterations, seed, policy, polish_evaluations);
        if self.nurse_capacity.is_some() {
            c.nurse_capacity = self.nurse_capacity;
        }
        if self.no_incumbent {
            c.incumbent = false;
        }
        if threads.is_some() {
            c.threads = threads;
        }
        c.validate()?;
        Ok((w, c))
    }
}

fn parse_weights(s: &str) -> Result<ObjectiveWeights, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => ObjectiveWeights::new(a, b, c).map_err(|e| e.to_string()),
        _ => Err(format!("expected three comma-separated weights, got {s:?}")),
    }
}

fn parse_policy(s: &str) -> Result<SubproblemPolicy, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown policy {s:?}"))
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_instance(p: &Path) -> Result<Instance> {
    let inst: Instance = serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
    inst.validate().with_context(|| format!("invalid instance {}", p.display()))?;
    Ok(inst)
}

fn load_instances(ps: &[PathBuf]) -> Result<Vec<Instance>> {
    ps.iter().map(|p| load_instance(p)).collect()
}

fn load_schedule(p: &Path, inst: &Instance) -> Result<FirstStageSchedule> {
    let s: FirstStageSchedule = serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
    let v = validate(&s, inst);
    if !v.is_empty() {
        bail!("schedule {} is invalid: {v:?}", p.display());
    }
    Ok(s)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => {
            let spec = GenSpec {
                index: a.index,
                num_patients: a.patients,
                num_scenarios: a.scenarios,
                num_nurses: a.nurses,
                num_chairs: a.chairs,
                shift_length: a.shift,
                overtime_limit: a.overtime_limit,
                seed: a.seed,
                target_overtime: a.target_overtime,
            };
            let inst = generate_instance(&ClassModel::default(), &spec)?;
            write_or_print(a.out.as_deref(), &json(&inst))?;
        }
        Command::Fixtures { dir } => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for inst in fixture_instances() {
                let p = dir.join(format!("{}.json", inst.label));
                fs::write(&p, json(&inst)).with_context(|| format!("writing {}", p.display()))?;
                println!("{}", p.display());
            }
        }
        Command::Solve(a) => {
            let inst = load_instance(&a.instance)?;
            let (w, cfg) = a.lpha.resolve(cli.threads)?;
            let (schedule, report, code) = match run_lpha(&inst, &w, &cfg) {
                Ok((s, r)) => (s, r, ExitCode::SUCCESS),
                Err(LphaError::NoConvergence { schedule, report, max_iterations }) => {
                    log::warn!("no agreement within {max_iterations} iterations; returning the incumbent");
                    (schedule, *report, ExitCode::from(2))
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(p) = &a.schedule_out {
                fs::write(p, json(&schedule)).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = &a.trace_out {
                fs::write(p, report.trace_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            write_or_print(a.report_out.as_deref(), &(report.to_json() + "\n"))?;
            return Ok(code);
        }
        Command::Evaluate { instance, schedule, weights, scenario } => {
            let inst = load_instance(&instance)?;
            let s = load_schedule(&schedule, &inst)?;
            let w = weights.unwrap_or_default();
            let cfg = EvaluatorConfig::with_weights(w);
            match scenario {
                Some(k) => {
                    let sc = inst.scenarios.get(k).with_context(|| format!("no scenario {k}"))?;
                    let mut relaxed = cfg;
                    relaxed.strict_overtime = false;
                    let out = evaluate(&s, sc, &inst, &relaxed)?;
                    print!("{}", outcome_csv(&s, &out));
                }
                None => print!("{}", json(&expected_cost(&s, &inst, &w, &cfg)?)),
            }
        }
        Command::CompareHeuristics { instances, lpha, no_opt, out } => {
            let insts = load_instances(&instances)?;
            let (w, cfg) = lpha.resolve(cli.threads)?;
            let spec = CompareSpec { opt: !no_opt, ..CompareSpec::default() };
            let table = cmd_compare(&insts, &w, &cfg, &spec, None)?;
            write_or_print(out.as_deref(), &table.to_csv())?;
            for rule in SequencingRule::ALL {
                if let Some(r) = table.row(&format!("{rule}-opt")) {
                    log::info!("{rule}-opt mean gap {:.2}%", r.mean_gap);
                }
            }
        }
        Command::Vss { instances, lpha } => {
            let insts = load_instances(&instances)?;
            let (w, cfg) = lpha.resolve(cli.threads)?;
            println!("instance,mv_objective,lpha_objective,relative_vss");
            for inst in &insts {
                let r = cmd_vss(inst, &w, &cfg)?;
                println!("{},{:.4},{:.4},{:.2}", inst.label, r.mv_objective, r.lpha_objective, r.relative_vss);
            }
        }
        Command::Sweep { instances, lpha, lambda_presets: presets, nurses, chairs, repetitions, out } => {
            let insts = load_instances(&instances)?;
            let (w, cfg) = lpha.resolve(cli.threads)?;
            let first = insts.first().context("no instances")?;
            let spec = SweepSpec {
                lambda_grid: if presets { lambda_presets() } else { vec![w] },
                nurse_range: if nurses.is_empty() { vec![first.num_nurses] } else { nurses },
                chair_range: if chairs.is_empty() { vec![first.num_chairs] } else { chairs },
                repetitions,
            };
            let cells = cmd_sweep(&insts, &spec, &cfg)?;
            write_or_print(out.as_deref(), &chemosched::analysis::sweep_csv(&cells))?;
        }
        Command::Gantt { instance, schedule, scenario, weights, out } => {
            let inst = load_instance(&instance)?;
            let s = load_schedule(&schedule, &inst)?;
            let sc = inst.scenarios.get(scenario).with_context(|| format!("no scenario {scenario}"))?;
            let cfg = EvaluatorConfig { strict_overtime: false, ..EvaluatorConfig::with_weights(weights.unwrap_or_default()) };
            let outcome = evaluate(&s, sc, &inst, &cfg)?;
            write_or_print(out.as_deref(), &gantt_svg(&s, sc, &inst, &outcome))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
