//! Tool-using agent loop: a pluggable policy emits text, the controller
//! parses it for `Action: <tool> [Query: ...]` or `Final Answer: ...`,
//! runs the tool, and feeds the observation back until the policy answers
//! or the step budget runs out.
//!
//! The action grammar is strict on purpose: free-form parsing is the main
//! nondeterminism source in this kind of loop. An unparseable output gets
//! exactly one reprompt with a format reminder.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};
use crate::fetch::{CompletionClient, CompletionRequest};
use crate::search::{SearchContext, SearchRequest};

/// Canonical name of the semantic search tool.
pub const PACT_TOOL_NAME: &str = "PACT Search Tool";

/// One registered tool. `invoke` is total: failures are rendered as
/// observation text, never thrown into the loop.
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    invoke: Box<dyn Fn(&str) -> String + Send + Sync>,
}

impl ToolSpec {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        invoke: impl Fn(&str) -> String + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            invoke: Box::new(invoke),
        }
    }

    pub fn invoke(&self, query: &str) -> String {
        (self.invoke)(query)
    }
}

#[derive(Default)]
pub struct ToolRegistry {
    tools: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: ToolSpec) -> Result<()> {
        if self.tools.iter().any(|t| t.name == tool.name) {
            return Err(PactError::InvalidArgument(format!(
                "duplicate tool name `{}`",
                tool.name
            )));
        }
        self.tools.push(tool);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub tool: String,
    pub input: String,
}

/// One turn: either an action with its observation, or a final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub thought: String,
    pub action: Option<AgentAction>,
    pub observation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Normal,
    MaxSteps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub steps: Vec<AgentStep>,
    pub final_answer: String,
    pub stopped: StopReason,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub max_steps: usize,
    /// Observations longer than this are truncated before they re-enter
    /// the loop, modeling a fixed token window.
    pub observation_budget: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: 8,
            observation_budget: 1000,
        }
    }
}

/// A policy maps the question and the transcript so far to the next text
/// output. `reminder` carries the format reminder after a parse failure.
pub trait AgentPolicy {
    fn respond(
        &mut self,
        question: &str,
        steps: &[AgentStep],
        reminder: Option<&str>,
    ) -> Result<String>;
}

const FORMAT_REMINDER: &str = "Respond with either `Action: <tool> [Query: <text>]` \
                               or `Final Answer: <text>`.";

enum Parsed {
    Action { thought: String, tool: String, input: String },
    Final { thought: String, answer: String },
    Unparseable,
}

/// First `Action:` or `Final Answer:` line wins; `Thought:` lines before
/// it become the step's thought.
fn parse_policy_output(text: &str) -> Parsed {
    let mut thought_lines: Vec<&str> = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("Thought:") {
            thought_lines.push(rest.trim());
            continue;
        }
        if let Some(rest) = line.strip_prefix("Final Answer:") {
            let mut answer = rest.trim().to_string();
            for follow in &lines[i + 1..] {
                answer.push('\n');
                answer.push_str(follow);
            }
            return Parsed::Final {
                thought: thought_lines.join(" "),
                answer: answer.trim().to_string(),
            };
        }
        if let Some(rest) = line.strip_prefix("Action:") {
            if let Some((tool, input)) = parse_action(rest) {
                return Parsed::Action {
                    thought: thought_lines.join(" "),
                    tool,
                    input,
                };
            }
            return Parsed::Unparseable;
        }
    }
    Parsed::Unparseable
}

/// `<tool> [Query: <text>]`
fn parse_action(rest: &str) -> Option<(String, String)> {
    let open = rest.find("[Query:")?;
    let tool = rest[..open].trim();
    if tool.is_empty() {
        return None;
    }
    let after = &rest[open + "[Query:".len()..];
    let close = after.rfind(']')?;
    let input = after[..close].trim();
    if input.is_empty() {
        return None;
    }
    Some((tool.to_string(), input.to_string()))
}

/// Run the loop until the policy answers or `max_steps` is reached.
pub fn run_agent(
    question: &str,
    policy: &mut dyn AgentPolicy,
    tools: &ToolRegistry,
    config: &AgentConfig,
) -> Result<Transcript> {
    if config.max_steps < 1 {
        return Err(PactError::InvalidArgument("max_steps must be >= 1".into()));
    }
    let mut steps: Vec<AgentStep> = Vec::new();
    let mut reminder: Option<&str> = None;
    let mut reprompted = false;
    while steps.len() < config.max_steps {
        let output = match policy.respond(question, &steps, reminder) {
            Ok(text) => text,
            Err(_) => {
                return Ok(Transcript {
                    steps,
                    final_answer: String::new(),
                    stopped: StopReason::MaxSteps,
                })
            }
        };
        match parse_policy_output(&output) {
            Parsed::Final { thought, answer } => {
                steps.push(AgentStep {
                    thought,
                    action: None,
                    observation: None,
                });
                return Ok(Transcript {
                    steps,
                    final_answer: answer,
                    stopped: StopReason::Normal,
                });
            }
            Parsed::Action { thought, tool, input } => {
                reminder = None;
                let mut observation = match tools.get(&tool) {
                    Some(spec) => spec.invoke(&input),
                    None => format!("Error: unknown tool {tool}"),
                };
                if observation.chars().count() > config.observation_budget {
                    observation = observation
                        .chars()
                        .take(config.observation_budget)
                        .collect();
                }
                steps.push(AgentStep {
                    thought,
                    action: Some(AgentAction { tool, input }),
                    observation: Some(observation),
                });
            }
            Parsed::Unparseable => {
                if reprompted {
                    return Ok(Transcript {
                        steps,
                        final_answer: String::new(),
                        stopped: StopReason::MaxSteps,
                    });
                }
                reprompted = true;
                reminder = Some(FORMAT_REMINDER);
            }
        }
    }
    Ok(Transcript {
        steps,
        final_answer: String::new(),
        stopped: StopReason::MaxSteps,
    })
}

/// Wrap a search context as the semantic search tool: hits render as
/// numbered `type | id | snippet | score` lines.
pub fn pact_tool(ctx: SearchContext, k: usize) -> ToolSpec {
    ToolSpec::new(
        PACT_TOOL_NAME,
        "Retrieves the most relevant enterprise artifacts (code paths, teams, \
         products, documents) for a free-form query.",
        move |query: &str| match ctx.search(&SearchRequest::new(query, k)) {
            Ok(result) => {
                if result.hits.is_empty() {
                    "No matching artifacts.".to_string()
                } else {
                    result
                        .hits
                        .iter()
                        .enumerate()
                        .map(|(i, hit)| {
                            format!(
                                "{}. {} | {} | {} | {:.4}",
                                i + 1,
                                hit.ty,
                                hit.id,
                                hit.snippet,
                                hit.score
                            )
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                }
            }
            Err(e) => format!("Error: {e}"),
        },
    )
}

/// System prompt embedding each tool's name and description verbatim.
pub fn system_prompt(tools: &ToolRegistry) -> String {
    let mut p = String::from(
        "You answer questions about enterprise artifacts. \
         You have access to the following tools:\n",
    );
    for tool in tools.tools() {
        p.push_str(&format!("- {}: {}\n", tool.name, tool.description));
    }
    p.push_str(
        "Think step by step. To call a tool output `Action: <tool> [Query: <text>]`; \
         to finish output `Final Answer: <text>`.\n",
    );
    p
}

/// Render the full prompt a text-completion policy sees.
pub fn render_prompt(
    system: &str,
    question: &str,
    steps: &[AgentStep],
    reminder: Option<&str>,
) -> String {
    let mut p = String::from(system);
    p.push_str("\nQuestion: ");
    p.push_str(question);
    p.push('\n');
    for step in steps {
        if !step.thought.is_empty() {
            p.push_str(&format!("Thought: {}\n", step.thought));
        }
        if let Some(action) = &step.action {
            p.push_str(&format!("Action: {} [Query: {}]\n", action.tool, action.input));
        }
        if let Some(obs) = &step.observation {
            p.push_str(&format!("Observation: {obs}\n"));
        }
    }
    if let Some(reminder) = reminder {
        p.push_str(reminder);
        p.push('\n');
    }
    p
}

/// Replays pre-authored outputs in order; exhaustion is a policy error.
pub struct ScriptedPolicy {
    outputs: std::collections::VecDeque<String>,
}

impl ScriptedPolicy {
    pub fn new(outputs: Vec<String>) -> Self {
        Self {
            outputs: outputs.into(),
        }
    }

    /// Load a JSON list of policy outputs.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let outputs: Vec<String> = serde_json::from_str(&text)?;
        Ok(Self::new(outputs))
    }
}

impl AgentPolicy for ScriptedPolicy {
    fn respond(&mut self, _: &str, _: &[AgentStep], _: Option<&str>) -> Result<String> {
        self.outputs
            .pop_front()
            .ok_or_else(|| PactError::Policy("scripted policy exhausted".into()))
    }
}

/// Deterministic testing policy: any token it does not recognize triggers
/// a search for that token, including entity names surfacing in
/// observations (multi-hop); it answers with the distinct observation
/// lines once nothing is unknown or its search budget is spent.
pub struct RulePolicy {
    vocab: BTreeSet<String>,
    searched: BTreeSet<String>,
    tool: String,
    search_budget: usize,
}

impl RulePolicy {
    pub fn new(vocab: impl IntoIterator<Item = String>) -> Self {
        let mut all: BTreeSet<String> = vocab.into_iter().map(|w| w.to_lowercase()).collect();
        // boilerplate emitted by the loop itself must never look unknown
        for word in [
            "thought", "action", "final", "answer", "query", "observation", "error",
            "unknown", "tool", "pact", "search", "no", "matching", "artifacts",
        ] {
            all.insert(word.to_string());
        }
        Self {
            vocab: all,
            searched: BTreeSet::new(),
            tool: PACT_TOOL_NAME.to_string(),
            search_budget: 6,
        }
    }

    /// Searches issued before the policy answers from what it has.
    pub fn with_search_budget(mut self, budget: usize) -> Self {
        self.search_budget = budget;
        self
    }

    fn unknown_terms(&self, question: &str, steps: &[AgentStep]) -> Vec<String> {
        let mut ordered = Vec::new();
        let mut seen = BTreeSet::new();
        let consider = |text: &str, ordered: &mut Vec<String>, seen: &mut BTreeSet<String>| {
            for token in tokenize_loose(text) {
                if token.chars().count() < 3 {
                    continue;
                }
                if token.chars().all(|c| c.is_ascii_digit() || c == '.') {
                    continue;
                }
                if self.vocab.contains(&token) || self.searched.contains(&token) {
                    continue;
                }
                if seen.insert(token.clone()) {
                    ordered.push(token);
                }
            }
        };
        consider(question, &mut ordered, &mut seen);
        for step in steps {
            if let Some(obs) = &step.observation {
                consider(obs, &mut ordered, &mut seen);
            }
        }
        ordered
    }
}

/// Whitespace tokenization that preserves intra-token punctuation (ids
/// like `team-pay-7` stay whole), trimming surrounding punctuation.
fn tokenize_loose(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

impl AgentPolicy for RulePolicy {
    fn respond(
        &mut self,
        question: &str,
        steps: &[AgentStep],
        _reminder: Option<&str>,
    ) -> Result<String> {
        let unknown = self.unknown_terms(question, steps);
        if self.searched.len() < self.search_budget {
            if let Some(term) = unknown.first() {
                self.searched.insert(term.clone());
                return Ok(format!(
                    "Thought: The term '{term}' is unfamiliar; searching for it.\n\
                     Action: {} [Query: {term}]",
                    self.tool
                ));
            }
        }
        let mut distinct = Vec::new();
        for step in steps {
            if let Some(obs) = &step.observation {
                for line in obs.lines() {
                    let line = line.trim();
                    if !line.is_empty() && !distinct.contains(&line.to_string()) {
                        distinct.push(line.to_string());
                    }
                }
            }
        }
        let answer = if distinct.is_empty() {
            "No relevant artifacts found.".to_string()
        } else {
            distinct.join("\n")
        };
        Ok(format!(
            "Thought: Nothing else is unfamiliar; answering from the observations.\n\
             Final Answer: {answer}"
        ))
    }
}

/// Policy backed by a remote text model through the completion interface.
pub struct RemotePolicy<C: CompletionClient> {
    client: C,
    system: String,
    max_tokens: usize,
}

impl<C: CompletionClient> RemotePolicy<C> {
    pub fn new(client: C, tools: &ToolRegistry) -> Self {
        Self {
            client,
            system: system_prompt(tools),
            max_tokens: 512,
        }
    }
}

impl<C: CompletionClient> AgentPolicy for RemotePolicy<C> {
    fn respond(
        &mut self,
        question: &str,
        steps: &[AgentStep],
        reminder: Option<&str>,
    ) -> Result<String> {
        let prompt = render_prompt(&self.system, question, steps, reminder);
        let response = self.client.complete(&CompletionRequest {
            prompt,
            max_tokens: self.max_tokens,
        })?;
        Ok(response.text)
    }
}
