use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use cia_core::agent::{Agent, AgentConfig};
use cia_core::guardrails::Lexicon;
use cia_core::lessons::LessonStore;
use cia_core::llm::{ChatModel, LlmEndpoint, OpenAiClient};
use cia_core::memory::StudyMemory;
use cia_core::pipeline::PipelineConfig;
use cia_core::scripted::ScriptedLlm;
use cia_core::tools::ToolRegistry;
use serde::{Deserialize, Serialize};

/// Everything the service and the CLI read from the JSON config file. The
/// LLM credential comes from the environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub pipeline: PipelineConfig,
    pub agent: AgentConfig,
    pub llm: LlmEndpoint,
    pub lexicon_path: Option<PathBuf>,
    pub case_dir: Option<PathBuf>,
    /// Study memory file; in-memory when unset.
    pub memory_path: Option<PathBuf>,
    pub ledger_path: Option<PathBuf>,
    pub lessons_path: Option<PathBuf>,
    pub artifact_dir: PathBuf,
    pub session_idle_s: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            agent: AgentConfig::default(),
            llm: LlmEndpoint::default(),
            lexicon_path: None,
            case_dir: None,
            memory_path: None,
            ledger_path: None,
            lessons_path: None,
            artifact_dir: PathBuf::from("artifacts"),
            session_idle_s: 3600,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.pipeline.validate().context("pipeline settings")?;
        Ok(cfg)
    }

    pub fn registry(&self, memory: Arc<StudyMemory>) -> ToolRegistry {
        let reg = ToolRegistry::new(memory, self.pipeline.clone());
        match &self.case_dir {
            Some(dir) => reg.with_case_dir(dir),
            None => reg,
        }
    }

    pub fn memory(&self) -> anyhow::Result<StudyMemory> {
        match &self.memory_path {
            Some(p) => StudyMemory::open(p, self.ledger_path.clone()).with_context(|| format!("opening memory {}", p.display())),
            None => Ok(StudyMemory::in_memory()),
        }
    }

    pub fn lessons(&self) -> anyhow::Result<LessonStore> {
        match &self.lessons_path {
            Some(p) => LessonStore::open(p).with_context(|| format!("opening lessons {}", p.display())),
            None => Ok(LessonStore::in_memory()),
        }
    }

    /// Installs the configured lexicon, if any. Later calls are ignored.
    pub fn install_lexicon(&self) -> anyhow::Result<()> {
        if let Some(p) = &self.lexicon_path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading lexicon {}", p.display()))?;
            Lexicon::install(Lexicon::parse(&text)?);
        }
        Ok(())
    }

    /// The configured chat endpoint, or `None` when nothing is configured.
    pub fn live_llm(&self) -> anyhow::Result<Option<Arc<dyn ChatModel>>> {
        let ep = self.llm.clone().with_env();
        if !ep.is_configured() {
            return Ok(None);
        }
        Ok(Some(Arc::new(OpenAiClient::new(ep)?)))
    }

    pub fn agent(&self, llm: Option<Arc<dyn ChatModel>>) -> anyhow::Result<Agent> {
        self.install_lexicon()?;
        let registry = self.registry(Arc::new(self.memory()?));
        Ok(Agent::new(Arc::new(registry), llm, Arc::new(self.lessons()?), self.agent.clone()))
    }
}

/// A replayed model. Requests the script does not cover fail instead of
/// panicking, so one gap cannot take the process down.
pub fn scripted_llm(path: &Path) -> anyhow::Result<Arc<dyn ChatModel>> {
    let llm = ScriptedLlm::from_file(path).with_context(|| format!("loading script {}", path.display()))?;
    Ok(Arc::new(llm.lenient()))
}
