use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wella_core::crew::{estimate_crew, load_session_records, CrewOptions, RoleOutcome};
use wella_core::goms::{run_monte_carlo_with, McOptions, PlantParams, Procedure};
use wella_core::harness::config::{BackendKind, HarnessConfig};
use wella_core::harness::pipeline::{
    build_sft_records, evaluate_run, load_run_records, load_scenario, load_scenarios_dir, run_batch, EvalTarget,
};
use wella_core::metrics::{export_report, ReportFormat};
use wella_core::sft::{export_jsonl, export_split, stratified_split, SpecialTokenPolicy, SplitRatios, TrainingConfig};
use wella_core::survey::load_ground_truth;
use wella_core::trajectory::Instrument;

const SCENARIO_HELP: &str = "\
Scenario file (JSON):
  {\"id\": \"acc-001\", \"category\": \"Accident\", \"narrative\": \"...\",
   \"nsss_modules\": [{\"module_no\": 1, \"water_flow_rate\": 0.0, \"status\": \"ShuttingDown\",
                      \"extra_params\": {\"pressure\": 13.2}}, ... modules 1-6],
   \"conventional_island\": \"...\",
   \"crew_notes\": {\"RO1\": \"...\"}}
  category: Startup | Shutdown | Accident
  status: Running | StartingUp | ShuttingDown | Shutdown";

const TRUTH_HELP: &str = "\
Ground truth (CSV, one row per scenario and role):
  scenario_id,role,md,pd,td,effort,performance,frustration,sart_1,...,sart_10
  role: RO1 | RO2 | RO3 | CO | SO; TLX subscales 0-100; SART items 1-7";

const PROCEDURE_HELP: &str = "\
Procedure file (JSON array of steps):
  [{\"step_id\": \"16\",
    \"time_model\": {\"kind\": \"normal\", \"mu\": 100, \"sigma\": 10},
    \"available_time\": 110,
    \"logic\": [{\"parameter\": \"pressure\", \"comparator\": \"<=\", \"threshold\": 7}],
    \"on_fail\": \"16-RNO\"}, ...]
  time_model kinds: normal{mu,sigma} | lognormal{mu_log,sigma_log} | fixed{seconds}
Plant parameters: --params FILE (JSON object of name -> number) and/or --param NAME=VALUE";

const CONFIG_HELP: &str = "\
Config file (TOML, flags override it):
  backend = \"mock\" | \"remote\"
  endpoint = \"http://host/v1/chat/completions\"
  model = \"name\"
  api_key_env = \"WELLA_API_KEY\"   # variable name, never the key itself
  session_seed = 7
  instrument = \"both\" | \"tlx\" | \"sart\"
  temperature, max_tokens, timeout_secs, max_attempts, base_delay_ms, parallelism, run_dir";

#[derive(Parser, Debug)]
#[command(name = "wella", version, about = "Synthetic crew workload estimation harness")]
#[command(after_help = CONFIG_HELP)]
struct Cli {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for run output [default: runs]
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Run identifier; output goes to <run-dir>/<run-id>/ [default: UTC timestamp]
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate workload for every role of one scenario
    #[command(after_help = SCENARIO_HELP)]
    Crew {
        /// Scenario JSON file
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run `crew` for every *.json scenario in a directory
    #[command(after_help = SCENARIO_HELP)]
    Batch {
        /// Directory of scenario JSON files
        #[arg(long)]
        scenarios: PathBuf,
        /// Scenarios processed concurrently
        #[arg(long)]
        parallelism: Option<usize>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score session estimates against operator ground truth
    #[command(after_help = TRUTH_HELP)]
    Eval {
        /// Ground-truth CSV
        #[arg(long)]
        truth: PathBuf,
        /// Session JSONL files or run directories
        #[arg(long, required = true, num_args = 1..)]
        sessions: Vec<PathBuf>,
        /// Score TLX workload or SART SA
        #[arg(long, default_value = "workload")]
        target: EvalTarget,
        /// Model label in the report [default: backend id of the sessions]
        #[arg(long)]
        label: Option<String>,
        /// Format printed to stdout; report.csv is always written
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Build a fine-tuning dataset from sessions and ground truth
    #[command(name = "export-sft", after_help = TRUTH_HELP)]
    ExportSft {
        /// Directory of scenario JSON files
        #[arg(long)]
        scenarios: PathBuf,
        /// Ground-truth CSV
        #[arg(long)]
        truth: PathBuf,
        /// Session JSONL files or run directories
        #[arg(long, required = true, num_args = 1..)]
        sessions: Vec<PathBuf>,
        /// train,validation,test
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
        ratios: SplitRatios,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Marker prepended to every SFT output
        #[arg(long, default_value = "<cog>")]
        special_token: String,
    },
    /// GOMS-style Monte Carlo failure probabilities for a procedure
    #[command(after_help = PROCEDURE_HELP)]
    Baseline {
        /// Procedure JSON file
        #[arg(long)]
        procedure: PathBuf,
        /// Plant parameters as a JSON object
        #[arg(long)]
        params: Option<PathBuf>,
        /// One plant parameter, NAME=VALUE; repeatable, overrides --params
        #[arg(long = "param", value_parser = parse_param)]
        param: Vec<(String, f64)>,
        /// Monte Carlo runs
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; results do not depend on this
        #[arg(long, default_value_t = 1)]
        shards: usize,
        /// Print the full result as JSON
        #[arg(long)]
        json: bool,
        /// Also write baseline.json under the run directory
        #[arg(long)]
        save: bool,
    },
}

#[derive(Args, Debug, Default)]
struct BackendArgs {
    /// mock or remote [default: mock]
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Chat-completions URL for the remote backend
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key
    #[arg(long)]
    api_key_env: Option<String>,
    /// Session seed; role seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    /// tlx, sart or both [default: both]
    #[arg(long)]
    instrument: Option<Instrument>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Remote attempts per request, including the first
    #[arg(long)]
    max_attempts: Option<u32>,
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [train, val, test] = parts[..] else {
        return Err("expected three comma-separated ratios".into());
    };
    SplitRatios::new(train, val, test).map_err(|e| e.to_string())
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut config = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(d) = &cli.run_dir {
        config.run_dir = d.clone();
    }
    Ok(config)
}

fn apply_backend_args(config: &mut HarnessConfig, a: &BackendArgs) {
    if let Some(v) = a.backend {
        config.backend = v;
    }
    if let Some(v) = &a.endpoint {
        config.endpoint = Some(v.clone());
    }
    if let Some(v) = &a.model {
        config.model = Some(v.clone());
    }
    if let Some(v) = &a.api_key_env {
        config.api_key_env = v.clone();
    }
    if let Some(v) = a.seed {
        config.session_seed = Some(v);
    }
    if let Some(v) = a.instrument {
        config.instrument = v;
    }
    if let Some(v) = a.temperature {
        config.temperature = v;
    }
    if let Some(v) = a.max_tokens {
        config.max_tokens = v;
    }
    if let Some(v) = a.timeout_secs {
        config.timeout_secs = v;
    }
    if let Some(v) = a.max_attempts {
        config.max_attempts = v;
    }
}

fn create_run_dir(config: &HarnessConfig, run_id: Option<&str>) -> Result<PathBuf> {
    let id = match run_id {
        Some(id) => {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                bail!("run id `{id}` must be a single path component");
            }
            id.to_string()
        }
        None => chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string(),
    };
    let dir = config.run_dir.join(id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_snapshot(dir: &Path, config: &HarnessConfig) -> Result<()> {
    let path = dir.join("config.snapshot");
    fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn crew_options(config: &HarnessConfig) -> CrewOptions {
    let mut options = CrewOptions::with_instrument(config.instrument);
    options.template.params = config.generation_params();
    options.session_seed = config.session_seed;
    options
}

fn report_failures(outcomes: &BTreeMap<wella_core::RoleId, RoleOutcome>) {
    for o in outcomes.values() {
        if let RoleOutcome::Failure(f) = o {
            eprintln!("warning: {} {}: {}", f.scenario_id, f.role, f.error);
        }
    }
}

fn read_sessions(paths: &[PathBuf]) -> Result<Vec<RoleOutcome>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(load_run_records(p)?);
        } else {
            out.extend(load_session_records(p).with_context(|| format!("reading {}", p.display()))?);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Crew { scenario, backend } => {
            apply_backend_args(&mut config, backend);
            let backend = config.build_backend()?;
            let spec = load_scenario(scenario)?;
            let session = estimate_crew(&spec, backend.as_ref(), &crew_options(&config))?;
            let dir = create_run_dir(&config, cli.run_id.as_deref())?;
            write_snapshot(&dir, &config)?;
            let path = session.save(&dir).with_context(|| format!("writing session to {}", dir.display()))?;
            report_failures(&session.outcomes);
            println!("{}", path.display());
        }
        Command::Batch { scenarios, parallelism, backend } => {
            apply_backend_args(&mut config, backend);
            if let Some(p) = parallelism {
                config.parallelism = *p;
            }
            let backend = config.build_backend()?;
            let specs = load_scenarios_dir(scenarios)?;
            if specs.is_empty() {
                bail!("no *.json scenarios in {}", scenarios.display());
            }
            let dir = create_run_dir(&config, cli.run_id.as_deref())?;
            write_snapshot(&dir, &config)?;
            let items = run_batch(&specs, backend.as_ref(), &crew_options(&config), &dir, config.parallelism);
            let mut failed = 0;
            for item in &items {
                match &item.result {
                    Ok(path) => println!("{}", path.display()),
                    Err(e) => {
                        failed += 1;
                        eprintln!("error: {}: {e}", item.scenario_id);
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} scenarios failed", items.len());
            }
        }
        Command::Eval { truth, sessions, target, label, format } => {
            let truth = load_ground_truth(truth).with_context(|| format!("reading {}", truth.display()))?;
            let records = read_sessions(sessions)?;
            let label = label.clone().unwrap_or_else(|| {
                records
                    .iter()
                    .find_map(|r| r.estimate().map(|e| e.backend_id.clone()))
                    .unwrap_or_else(|| "model".into())
            });
            let (report, joined) = evaluate_run(&truth, &records, *target, &label)?;
            for (id, role) in &joined.skipped {
                eprintln!("warning: no usable estimate for {id} {role}");
            }
            let dir = create_run_dir(&config, cli.run_id.as_deref())?;
            let csv = export_report(&report, ReportFormat::Csv);
            fs::write(dir.join("report.csv"), &csv).context("writing report.csv")?;
            match format {
                ReportFormat::Csv => print!("{csv}"),
                ReportFormat::Markdown => {
                    let md = export_report(&report, ReportFormat::Markdown);
                    fs::write(dir.join("report.md"), &md).context("writing report.md")?;
                    print!("{md}");
                }
            }
        }
        Command::ExportSft { scenarios, truth, sessions, ratios, split_seed, special_token } => {
            let specs = load_scenarios_dir(scenarios)?;
            let truth = load_ground_truth(truth).with_context(|| format!("reading {}", truth.display()))?;
            let records = read_sessions(sessions)?;
            let policy = SpecialTokenPolicy { marker: special_token.clone() };
            let (dataset, skipped) = build_sft_records(&specs, &truth, &records, &policy)?;
            for (id, role) in &skipped {
                eprintln!("warning: no trajectory for {id} {role}; row skipped");
            }
            let split = stratified_split(dataset.clone(), *ratios, *split_seed)?;
            let dir = create_run_dir(&config, cli.run_id.as_deref())?.join("sft");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            export_jsonl(&dataset, &dir.join("dataset.jsonl"))?;
            export_split(&split, &dir)?;
            let training = TrainingConfig { special_token: special_token.clone(), ..Default::default() };
            training.write(&dir.join("training.toml")).context("writing training.toml")?;
            println!(
                "{}: {} records (train {}, validation {}, test {})",
                dir.display(),
                dataset.len(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::Baseline { procedure, params, param, runs, seed, shards, json, save } => {
            let proc_ = Procedure::load(procedure)?;
            let mut plant = PlantParams::new();
            if let Some(p) = params {
                let doc = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                plant = serde_json::from_str(&doc).with_context(|| format!("parsing {}", p.display()))?;
            }
            plant.extend(param.iter().cloned());
            let options = McOptions { shards: *shards, ..McOptions::new(*runs, *seed) };
            let result = run_monte_carlo_with(&proc_, &plant, &options)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!("{:<16} {:>10} {:>10} {:>10}", "step", "visited", "failed", "p_fail");
                for s in &result.steps {
                    println!(
                        "{:<16} {:>10} {:>10} {:>10.4}",
                        s.step_id, s.visited_runs, s.failed_runs, s.failure_probability
                    );
                }
                println!(
                    "runs {}  seed {}  terminal failures {}  truncated {}",
                    result.runs, result.seed, result.terminal_failures, result.truncated_runs
                );
            }
            if *save {
                let dir = create_run_dir(&config, cli.run_id.as_deref())?;
                fs::write(dir.join("baseline.json"), serde_json::to_string_pretty(&result)?)
                    .context("writing baseline.json")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
