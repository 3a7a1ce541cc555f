use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use cia_core::agent::{summarize_capacity, Agent};
use cia_core::bench::{run_benchmark, self_correct, write_artifact, DEFAULT_THRESHOLD};
use cia_core::capacity::CapacityResult;
use cia_core::lessons::LessonStore;
use cia_core::llm::ChatModel;
use cia_core::memory::StudyMemory;
use cia_core::pipeline::CiaReport;
use cia_core::scenarios::oracle_script;
use cia_core::scripted::ScriptedLlm;
use cia_core::tools::ToolError;
use cia_grid::ConnectionType;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{scripted_llm, ServiceConfig};
use crate::server::{resolve_suite, router, AppState};

#[derive(Debug, Parser)]
#[command(name = "cia", version, about = "Connection impact assessment studies and the assistant service")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory searched for MATPOWER case files by name.
    #[arg(long, global = true)]
    pub case_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub memory_path: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Replay a scripted model instead of calling the configured endpoint.
        #[arg(long)]
        scripted: Option<PathBuf>,
    },
    /// Assess one proposed connection.
    Cia {
        #[arg(long)]
        case: String,
        #[arg(long)]
        bus: u32,
        #[arg(long)]
        mw: f64,
        #[arg(long = "type")]
        ctype: ConnectionType,
        /// Shunt compensation as BUS:MVAR. Repeatable.
        #[arg(long = "mitigate", value_parser = parse_mitigation)]
        mitigate: Vec<(u32, f64)>,
    },
    /// Search for the largest approved MW at a bus.
    Capacity {
        #[arg(long)]
        case: String,
        #[arg(long)]
        bus: u32,
        #[arg(long = "type")]
        ctype: ConnectionType,
        #[arg(long, default_value_t = 0.0)]
        min_mw: f64,
        #[arg(long, default_value_t = 500.0)]
        max_mw: f64,
        #[arg(long, default_value_t = 1.0)]
        tol: f64,
    },
    /// Score the assistant on a scenario suite.
    Bench {
        /// Suite file, or a bundled suite name.
        #[arg(long)]
        suite: String,
        /// Model script to replay; `oracle` builds the reference script.
        #[arg(long)]
        scripted: Option<String>,
        /// Artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Evaluate, learn lessons from failures, repeat.
    Selfcorrect {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long)]
        scripted: Option<String>,
        /// Script for the lesson optimizer; the agent's model is used otherwise.
        #[arg(long)]
        optimizer: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 3)]
        max_lessons: usize,
    },
}

fn parse_mitigation(s: &str) -> Result<(u32, f64), String> {
    let (b, q) = s.split_once(':').ok_or_else(|| format!("expected BUS:MVAR, got {s:?}"))?;
    let bus = b.trim().parse::<u32>().map_err(|e| format!("bus {b:?}: {e}"))?;
    let q = q.trim().parse::<f64>().map_err(|e| format!("mvar {q:?}: {e}"))?;
    Ok((bus, q))
}

/// Runs the command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let json = cli.json;
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.downcast_ref::<ToolError>().map(|t| t.code()).unwrap_or("error");
            if json {
                println!("{}", json!({"error": {"code": code, "message": format!("{e:#}")}}));
            } else {
                eprintln!("error: {e:#}");
            }
            1
        }
    }
}

fn config(cli: &Cli) -> anyhow::Result<ServiceConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if cli.case_dir.is_some() {
        cfg.case_dir = cli.case_dir.clone();
    }
    if cli.memory_path.is_some() {
        cfg.memory_path = cli.memory_path.clone();
    }
    Ok(cfg)
}

fn print(json: bool, value: &Value, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
    } else {
        println!("{}", text());
    }
}

/// `oracle` means the reference script for the suite, anything else a file.
fn script_choice(choice: Option<&str>, cfg: &ServiceConfig, suite: &cia_core::bench::Suite) -> anyhow::Result<Option<Arc<dyn ChatModel>>> {
    match choice {
        Some("oracle") => Ok(Some(Arc::new(ScriptedLlm::new(oracle_script(suite)).lenient()))),
        Some(p) => Ok(Some(scripted_llm(p.as_ref())?)),
        None => cfg.live_llm(),
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = config(&cli)?;
    let json = cli.json;
    match cli.command {
        Command::Serve { port, host, scripted } => {
            let llm = match &scripted {
                Some(p) => Some(scripted_llm(p)?),
                None => cfg.live_llm()?,
            };
            let agent = cfg.agent(llm.clone())?;
            let state = Arc::new(AppState::new(agent, llm, cfg));
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .context("serving")
            })
        }
        Command::Cia { case, bus, mw, ctype, mitigate } => {
            cfg.install_lexicon()?;
            let registry = cfg.registry(Arc::new(cfg.memory()?));
            let mut args = json!({
                "case_path": case,
                "connection": {"bus": bus, "capacity_mw": mw, "type": ctype.as_str()},
            });
            let tool = if mitigate.is_empty() {
                "run_cia"
            } else {
                args["mitigations"] = mitigate.iter().map(|(b, q)| json!({"bus": b, "q_mvar": q})).collect();
                "run_cia_with_mitigation"
            };
            let out = registry.execute(tool, &args, "cli")?;
            let report: CiaReport = out.report.ok_or_else(|| anyhow!("no report produced"))?;
            print(json, &out.result.payload, || describe_report(&report));
            Ok(())
        }
        Command::Capacity { case, bus, ctype, min_mw, max_mw, tol } => {
            let registry = cfg.registry(Arc::new(cfg.memory()?));
            let args = json!({
                "case_path": case,
                "bus": bus,
                "connection_type": ctype.as_str(),
                "mw_min": min_mw,
                "mw_max": max_mw,
                "tol_mw": tol,
            });
            let out = registry.execute("find_max_capacity", &args, "cli")?;
            let r: CapacityResult = out.capacity.ok_or_else(|| anyhow!("no capacity result produced"))?;
            print(json, &out.result.payload, || summarize_capacity(&r));
            Ok(())
        }
        Command::Bench { suite, scripted, out, threshold } => {
            let suite = resolve_suite(&suite).map_err(|e| anyhow!(e.message))?;
            let llm = script_choice(scripted.as_deref(), &cfg, &suite)?;
            if llm.is_none() {
                bail!("no model configured; pass --scripted or set the LLM endpoint");
            }
            cfg.install_lexicon()?;
            let agent = Agent::new(
                Arc::new(cfg.registry(Arc::new(StudyMemory::in_memory()))),
                llm,
                Arc::new(LessonStore::in_memory()),
                cfg.agent.clone(),
            );
            let run = run_benchmark(&suite.name, &suite.scenarios, &agent, threshold, 1)?;
            let artifact = write_artifact(&run, out.as_ref().unwrap_or(&cfg.artifact_dir))?;
            let m = &run.metrics;
            print(json, &json!({"suite": run.suite, "artifact": artifact, "metrics": m}), || {
                format!(
                    "{}: {} of {} passed ({:.1}%), mean score {:.1}, tool selection {:.1}%, parse accuracy {}\nartifact {}",
                    run.suite,
                    m.passed,
                    m.scenarios,
                    m.pass_rate_pct,
                    m.mean_score,
                    m.tsa_pct,
                    m.pa_pct.map(|p| format!("{p:.1}%")).unwrap_or_else(|| "n/a".into()),
                    artifact.display()
                )
            });
            Ok(())
        }
        Command::Selfcorrect { suite, iterations, scripted, optimizer, threshold, max_lessons } => {
            let suite = resolve_suite(&suite).map_err(|e| anyhow!(e.message))?;
            let llm = script_choice(scripted.as_deref(), &cfg, &suite)?;
            let optimizer = match &optimizer {
                Some(p) => Some(scripted_llm(p)?),
                None => llm.clone(),
            };
            let (Some(_), Some(optimizer)) = (&llm, optimizer) else {
                bail!("no model configured; pass --scripted or set the LLM endpoint");
            };
            cfg.install_lexicon()?;
            let agent = Agent::new(
                Arc::new(cfg.registry(Arc::new(StudyMemory::in_memory()))),
                llm,
                Arc::new(cfg.lessons()?),
                cfg.agent.clone(),
            );
            let reports = self_correct(&suite, &agent, optimizer.as_ref(), iterations, threshold, max_lessons)?;
            print(json, &json!({"suite": suite.name, "iterations": reports}), || {
                reports
                    .iter()
                    .map(|r| {
                        let mut line = format!(
                            "iteration {}: {} of {} passed ({:.1}%), {} lessons added",
                            r.iteration,
                            r.passed,
                            r.total,
                            r.pass_rate_pct,
                            r.lessons_added.len()
                        );
                        if let Some(e) = &r.optimizer_error {
                            line.push_str(&format!(" (optimizer failed: {e})"));
                        }
                        line
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            Ok(())
        }
    }
}

fn describe_report(r: &CiaReport) -> String {
    let mut lines = vec![format!(
        "{}: {} MW {} at bus {} on {}",
        r.decision, r.connection.p_mw, r.connection.ctype, r.connection.bus, r.case_name
    )];
    for s in &r.stages {
        let outcome = serde_json::to_value(s.outcome).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let reasons: Vec<&str> = s.reasons.iter().map(|c| c.as_str()).collect();
        if reasons.is_empty() {
            lines.push(format!("  {} {outcome}", s.stage));
        } else {
            lines.push(format!("  {} {outcome}: {}", s.stage, reasons.join(", ")));
        }
    }
    lines.join("\n")
}
