use std::sync::Arc;

use chimera_core::agents::{
    select_by_ltv, ArchitectureKind, Bias, ScenarioContext, ScoredCandidate, ScriptedStrategist,
    Strategist,
};
use chimera_core::error::AgentError;
use chimera_core::guardian::Verdict;
use chimera_core::sim::{Action, MarketState};
use serde_json::{json, Value};

use crate::prompt::{propose_instruction, state_message, system_prompt, tool_specs};
use crate::transport::{ChatRequest, ChatResponse, ChatTransport, HttpTransport, Message};
use crate::{LlmConfig, LlmError, Transcript, TOOL_CHECK, TOOL_ESTIMATE};

/// Attempts per decision: the first prompt plus one re-prompt.
const ATTEMPTS: usize = 2;

pub struct LlmStrategist {
    transport: Arc<dyn ChatTransport>,
    model: String,
    temperature: f64,
    max_tokens: u32,
    fallback: ScriptedStrategist,
    transcript: Option<Arc<Transcript>>,
    feedback: Option<String>,
    name: String,
    fallbacks: u32,
    retries: u32,
}

impl LlmStrategist {
    pub fn new(transport: Arc<dyn ChatTransport>, cfg: &LlmConfig, seed: u64) -> Self {
        Self {
            transport,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            fallback: ScriptedStrategist::new(Bias::Neutral, seed),
            transcript: None,
            feedback: None,
            name: format!("llm:{}", cfg.model),
            fallbacks: 0,
            retries: 0,
        }
    }

    /// Strategist over HTTP configured from the environment. Fails naming
    /// the first missing variable.
    pub fn from_env(seed: u64) -> Result<Self, LlmError> {
        let cfg = LlmConfig::from_env()?;
        let transport = Arc::new(HttpTransport::new(&cfg)?);
        Ok(Self::new(transport, &cfg, seed))
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = Some(transcript);
        self
    }

    /// Decisions handed to the scripted strategist so far.
    pub fn fallbacks(&self) -> u32 {
        self.fallbacks
    }

    /// Re-prompts after malformed replies so far.
    pub fn retries(&self) -> u32 {
        self.retries
    }

    fn log(&self, kind: &str, week: u32, phase: &str, body: Value) {
        if let Some(t) = &self.transcript {
            // A failing transcript must not stop the episode.
            let _ = t.record(kind, week, phase, body);
        }
    }

    fn ask(
        &self,
        week: u32,
        phase: &str,
        messages: &[Message],
        tools: bool,
    ) -> Result<ChatResponse, LlmError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: messages.to_vec(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            tools: if tools { tool_specs() } else { Vec::new() },
        };
        let result = self.transport.send(&request);
        let response = match &result {
            Ok(r) => serde_json::to_value(r).unwrap_or(Value::Null),
            Err(e) => json!({ "error": e.to_string() }),
        };
        self.log(
            "exchange",
            week,
            phase,
            json!({ "request": request, "response": response }),
        );
        result
    }

    /// Prompt, parse, re-prompt once on a malformed reply. `None` means
    /// the caller should fall back.
    fn converse<T>(
        &mut self,
        week: u32,
        phase: &str,
        mut messages: Vec<Message>,
        tools: bool,
        parse: impl Fn(Option<&Message>) -> Result<T, String>,
    ) -> Option<T> {
        for attempt in 0..ATTEMPTS {
            let reply = match self.ask(week, phase, &messages, tools) {
                Ok(r) => r,
                Err(e) => {
                    self.log("fallback", week, phase, json!({ "reason": e.to_string() }));
                    return None;
                }
            };
            match parse(reply.message()) {
                Ok(v) => return Some(v),
                Err(e) if attempt + 1 < ATTEMPTS => {
                    self.retries += 1;
                    self.log("retry", week, phase, json!({ "reason": e }));
                    if let Some(m) = reply.message() {
                        messages.push(m.clone());
                        for call in &m.tool_calls {
                            messages.push(Message {
                                role: "tool".into(),
                                content: Some("not evaluated".into()),
                                tool_calls: Vec::new(),
                                tool_call_id: Some(call.id.clone()),
                            });
                        }
                    }
                    messages.push(Message::new(
                        "user",
                        format!("Your reply could not be used ({e}). Answer again in the requested format."),
                    ));
                }
                Err(e) => {
                    self.log("fallback", week, phase, json!({ "reason": e }));
                }
            }
        }
        None
    }
}

fn number(v: &Value, keys: &[&str]) -> Option<f64> {
    keys.iter()
        .find_map(|k| v.get(*k))
        .and_then(|x| x.as_f64().or_else(|| x.as_str().and_then(|s| s.trim().parse().ok())))
        .filter(|x| x.is_finite())
}

fn action_from(v: &Value) -> Result<Action, String> {
    let pct = number(v, &["price_change", "price_change_pct"]).ok_or("missing or non-numeric price_change")?;
    let ad = number(v, &["ad_spend"]).ok_or("missing or non-numeric ad_spend")?;
    Ok(Action::new(pct, ad))
}

/// The first JSON object in `text`, allowing code fences and prose around it.
fn json_body(text: &str) -> Option<Value> {
    let start = text.find(['{', '['])?;
    let end = text.rfind(['}', ']'])?;
    (end > start)
        .then(|| serde_json::from_str(&text[start..=end]).ok())
        .flatten()
}

fn tool_actions(msg: &Message, name: &str) -> Result<Vec<Action>, String> {
    msg.tool_calls
        .iter()
        .filter(|c| c.function.name == name)
        .map(|c| {
            let args: Value = serde_json::from_str(&c.function.arguments)
                .map_err(|e| format!("{name} arguments are not JSON: {e}"))?;
            action_from(&args)
        })
        .collect()
}

/// Extract exactly `k` actions from a reply.
///
/// Tool calls to `check_business_rules` take precedence, then calls to
/// `estimate_profit_impact`, then a JSON body holding either one action or
/// an `actions` array. Extra actions beyond `k` are dropped.
pub fn parse_proposals(msg: Option<&Message>, k: usize) -> Result<Vec<Action>, String> {
    let msg = msg.ok_or("reply has no message")?;
    let mut actions = tool_actions(msg, TOOL_CHECK)?;
    if actions.is_empty() {
        actions = tool_actions(msg, TOOL_ESTIMATE)?;
    }
    if actions.is_empty() {
        let body = msg
            .content
            .as_deref()
            .and_then(json_body)
            .ok_or("reply holds neither tool calls nor a JSON body")?;
        actions = match body.get("actions").unwrap_or(&body) {
            Value::Array(items) => items.iter().map(action_from).collect::<Result<_, _>>()?,
            one => vec![action_from(one)?],
        };
    }
    if actions.len() < k {
        return Err(format!("expected {k} actions, got {}", actions.len()));
    }
    actions.truncate(k);
    Ok(actions)
}

/// Index of the selected candidate: `{"choice": i}` in the body, or a tool
/// call naming one of the candidate actions.
pub fn parse_choice(msg: Option<&Message>, candidates: &[ScoredCandidate]) -> Result<usize, String> {
    let msg = msg.ok_or("reply has no message")?;
    if let Some(i) = msg
        .content
        .as_deref()
        .and_then(json_body)
        .and_then(|b| b.get("choice").and_then(Value::as_u64))
    {
        let i = i as usize;
        return if i < candidates.len() {
            Ok(i)
        } else {
            Err(format!("choice {i} out of range"))
        };
    }
    for call in &msg.tool_calls {
        let Ok(args) = serde_json::from_str::<Value>(&call.function.arguments) else {
            continue;
        };
        if let Ok(a) = action_from(&args) {
            if let Some(i) = candidates.iter().position(|c| {
                (c.action.price_change_pct - a.price_change_pct).abs() < 1e-6
                    && (c.action.ad_spend - a.ad_spend).abs() < 1e-6
            }) {
                return Ok(i);
            }
        }
    }
    Err("no usable choice in reply".into())
}

impl Strategist for LlmStrategist {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(
        &mut self,
        state: &MarketState,
        ctx: &ScenarioContext,
        k: usize,
    ) -> Result<Vec<Action>, AgentError> {
        let tools = ctx.architecture == ArchitectureKind::Chimera;
        let messages = vec![
            Message::new("system", system_prompt(ctx)),
            Message::new(
                "user",
                format!(
                    "{}\n{}",
                    state_message(state, self.feedback.as_deref()),
                    propose_instruction(k, tools)
                ),
            ),
        ];
        let week = state.week + 1;
        match self.converse(week, "propose", messages, tools, |m| parse_proposals(m, k)) {
            Some(actions) => Ok(actions),
            None => {
                self.fallbacks += 1;
                self.fallback.propose(state, ctx, k)
            }
        }
    }

    fn replace(
        &mut self,
        state: &MarketState,
        ctx: &ScenarioContext,
        rejected: &Action,
        verdict: &Verdict,
        round: u32,
    ) -> Result<Action, AgentError> {
        let messages = vec![
            Message::new("system", system_prompt(ctx)),
            Message::new(
                "user",
                format!(
                    "{}\nThe hypothesis price_change={:.4}, ad_spend={:.2} was rejected: {}\n\
                     Propose one replacement by calling {TOOL_CHECK}.",
                    state_message(state, None),
                    rejected.price_change_pct,
                    rejected.ad_spend,
                    verdict.message
                ),
            ),
        ];
        let phase = format!("replace-{round}");
        match self.converse(state.week + 1, &phase, messages, true, |m| parse_proposals(m, 1)) {
            Some(mut a) => Ok(a.remove(0)),
            None => {
                self.fallbacks += 1;
                self.fallback.replace(state, ctx, rejected, verdict, round)
            }
        }
    }

    fn choose(
        &mut self,
        state: &MarketState,
        ctx: &ScenarioContext,
        candidates: &[ScoredCandidate],
    ) -> Result<usize, AgentError> {
        let listing: Vec<Value> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                json!({
                    "index": i,
                    "price_change": c.action.price_change_pct,
                    "ad_spend": c.action.ad_spend,
                    "profit_change": c.estimate.profit_change,
                    "trust_change": c.estimate.trust_change,
                    "profit_confidence": c.estimate.profit_confidence,
                    "trust_confidence": c.estimate.trust_confidence,
                })
            })
            .collect();
        let messages = vec![
            Message::new("system", system_prompt(ctx)),
            Message::new(
                "user",
                format!(
                    "{}\nValidated hypotheses with their {TOOL_ESTIMATE} forecasts:\n{}\n\
                     Phase 4: reply with {{\"choice\": <index>}}.",
                    state_message(state, None),
                    serde_json::to_string_pretty(&listing).unwrap_or_default()
                ),
            ),
        ];
        match self.converse(state.week + 1, "choose", messages, false, |m| parse_choice(m, candidates)) {
            Some(i) => Ok(i),
            None => {
                self.fallbacks += 1;
                select_by_ltv(candidates).ok_or(AgentError::CandidateCount {
                    expected: 1,
                    got: 0,
                })
            }
        }
    }

    fn feedback(&mut self, message: &str) {
        self.feedback = Some(message.to_string());
        self.fallback.feedback(message);
    }
}
