use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cvcert::harness::{self, NullifierReport, PlanReport, VerifyReport};
use cvcert::{BudgetMode, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cvcert", version, about = "Plan, run and verify homodyne fidelity certification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// literal or reduced:N
    #[arg(long)]
    budget_mode: Option<BudgetMode>,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the table
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the sample plan: per-moment counts, settings and totals
    Plan(Common),
    /// Run one protocol instance; exit 0 accept, 1 reject, 2 error
    Certify(Common),
    /// Repeat certification with derived seeds and report rates
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Nullifier annihilation and commutator norms for the target
    NullifierCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        cutoff: usize,
    },
    /// Exact fidelity and exact-moment bound of the configured preparation
    Oracle(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(b) = c.budget_mode {
        cfg.budget_mode = b;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> Option<PathBuf> {
    c.out.clone().or_else(|| cfg.out.as_ref().map(|p| cfg.base_dir.join(p)))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn print_plan(r: &PlanReport) {
    println!("class {:?}  m = {}  n = {}  d = {}  kappa = {}", r.class, r.m, r.photons, r.d, r.kappa);
    if let Some(p) = &r.plan {
        println!("literal plan (eps_eff = {:.6}):", p.epsilon_eff);
        println!("  {:<28}{:>16}", "C1 per first moment", p.c1);
        if p.first_pilot > 0 {
            println!("  {:<28}{:>16}", "pilot per first moment", p.first_pilot);
        }
        println!("  {:<28}{:>16}", "C2 per second moment", p.c2);
        println!("  {:<28}{:>16}", "C_le per moment", p.c_le);
        println!("  {:<28}{:>16}", "N moments", p.n_le);
        println!("  {:<28}{:>16}", "total copies", p.total_copies);
        println!("  {:<28}{:>16}", "settings", p.settings_count);
        println!("  {:<28}{:>16.4e}", format!("envelope (lambda = {})", p.lambda), p.envelope);
        if let Some(prob) = p.postselection_p {
            println!("  {:<28}{:>16.6}", "post-selection P", prob);
        }
    }
    if let Some(c) = &r.calibration {
        println!("reduced budget {} per moment -> eps = {:.6}", c.per_monomial, c.epsilon);
        for f in &c.families {
            println!("  {:?}: {} observables, contribution {:.6}", f.family, f.observables, f.contribution);
        }
    }
    println!("relevant moments ({}):", r.relevant_moments.len());
    for chunk in r.relevant_moments.chunks(8) {
        println!("  {}", chunk.join(" "));
    }
    println!("settings ({} literal, {} supplementary):", r.literal_settings, r.supplementary_settings);
    for (i, s) in r.settings.iter().enumerate() {
        let angles: Vec<String> = s.angles_rad.iter().map(|a| format!("{a:.4}")).collect();
        let tag = if s.supplementary { " *" } else { "" };
        println!("  #{i:<3} [{}] copies {}{tag}", angles.join(", "), r.copies_per_setting[i]);
    }
    println!("total copies for this budget mode: {}", r.total_copies);
}

fn print_verify(r: &VerifyReport) {
    println!("trials {}  accepted {}  eps {:.6}", r.trials, r.accepted, r.epsilon);
    println!("acceptance {:.3}  95% [{:.3}, {:.3}]", r.acceptance_rate, r.acceptance_wilson95.0, r.acceptance_wilson95.1);
    println!("rejection  {:.3}  95% [{:.3}, {:.3}]", r.rejection_rate, r.rejection_wilson95.0, r.rejection_wilson95.1);
    if let Some(f) = r.oracle_fidelity {
        println!("oracle fidelity {f:.6}");
    }
    match r.meets_guarantee {
        Some(ok) => println!("expected {:?} at rate >= {:.3}: {}", r.expectation, r.required_rate, if ok { "met" } else { "NOT met" }),
        None => println!("fidelity lies in the gap; no rate is guaranteed"),
    }
}

fn print_nullifiers(r: &NullifierReport) {
    println!("cutoff {}  safe subspace: <= {} photons", r.cutoff, r.safe_limit);
    for (j, a) in r.annihilation.iter().enumerate() {
        println!("  |N_{} psi| = {a:.3e}", j + 1);
    }
    for (i, j, c) in &r.commutators {
        println!("  |[N_{i}, N_{j}]| = {c:.3e}");
    }
    if let Some(p) = &r.postselected {
        println!("post-selected: P = {:.6}  <N_S> = {:.3e}  |N_S psi_S| = {:.3e}", p.probability, p.expectation, p.annihilation);
    }
}

fn write_report<T: serde::Serialize>(dir: Option<&Path>, name: &str, v: &T) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(name), serde_json::to_string_pretty(v)? + "\n")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Plan(c) => {
            let cfg = load(&c)?;
            let out = out_dir(&c, &cfg);
            let r = harness::plan_report(cfg)?;
            write_report(out.as_deref(), "plan.json", &r)?;
            if c.json { print_json(&r)? } else { print_plan(&r) }
        }
        Command::Certify(c) => {
            let cfg = load(&c)?;
            let out = out_dir(&c, &cfg);
            let v = harness::certify(cfg, out.as_deref())?;
            if c.json {
                print_json(&v)?;
            } else {
                println!(
                    "F* = {:.6} (se {:.2e})  threshold F_T + eps = {:.6}  -> {}",
                    v.verdict.estimate,
                    v.std_error,
                    v.verdict.config.f_t + v.verdict.config.epsilon,
                    if v.verdict.accept { "ACCEPT" } else { "REJECT" }
                );
            }
            return Ok(if v.verdict.accept { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Verify { common: c, trials } => {
            let cfg = load(&c)?;
            let out = out_dir(&c, &cfg);
            let n = trials.unwrap_or(cfg.trials);
            let r = harness::verify(cfg, n)?;
            if let Some(d) = &out {
                harness::write_verify(&r, d)?;
            }
            if c.json { print_json(&r)? } else { print_verify(&r) }
        }
        Command::NullifierCheck { common: c, cutoff } => {
            let cfg = load(&c)?;
            let out = out_dir(&c, &cfg);
            let net = cfg.network()?;
            let ps = cfg
                .postselection
                .as_ref()
                .map(|p| cvcert::PostSelection::fock(p.ancillas.iter().map(|a| a - 1).collect(), p.occupations.clone(), cutoff));
            let r = harness::nullifier_check(&net, cutoff, ps.as_ref())?;
            write_report(out.as_deref(), "nullifiers.json", &r)?;
            if c.json { print_json(&r)? } else { print_nullifiers(&r) }
        }
        Command::Oracle(c) => {
            let cfg = load(&c)?;
            let out = out_dir(&c, &cfg);
            let r = harness::oracle(cfg)?;
            write_report(out.as_deref(), "oracle.json", &r)?;
            print_json(&r)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
