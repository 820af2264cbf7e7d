use chimera_core::agents::{ArchitectureKind, ScenarioContext};
use chimera_core::sim::MarketState;
use serde_json::{json, Value};

pub const TOOL_CHECK: &str = "check_business_rules";
pub const TOOL_ESTIMATE: &str = "estimate_profit_impact";

fn action_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "price_change": {"type": "number", "description": "Relative price change in percent, e.g. -10 for a 10% cut"},
            "ad_spend": {"type": "number", "description": "Advertising budget for the week"}
        },
        "required": ["price_change", "ad_spend"]
    })
}

/// Function-tool declarations offered to the CHIMERA orchestrator.
pub fn tool_specs() -> Vec<Value> {
    vec![
        json!({
            "type": "function",
            "function": {
                "name": TOOL_CHECK,
                "description": "Validate a candidate action against the hard business rules (margin floor, price cap, weekly change and ad limits).",
                "parameters": action_schema()
            }
        }),
        json!({
            "type": "function",
            "function": {
                "name": TOOL_ESTIMATE,
                "description": "Forecast the multi-week change in profit and in brand trust caused by a candidate action, relative to holding price and ad spend.",
                "parameters": action_schema()
            }
        }),
    ]
}

/// System prompt for the architecture in `ctx`.
///
/// Baselines get the scenario objective as their goal. CHIMERA gets a
/// balanced mandate, the scenario as organisational context, the two tools
/// and the four-phase procedure.
pub fn system_prompt(ctx: &ScenarioContext) -> String {
    if ctx.architecture != ArchitectureKind::Chimera {
        return format!(
            "You set the weekly price and advertising budget of an online store.\n\
             Objective: {}\n\
             Reply with a JSON object {{\"price_change\": <percent>, \"ad_spend\": <currency>}} and nothing else.",
            ctx.objective_text
        );
    }
    format!(
        "You set the weekly price and advertising budget of an online store.\n\
         Objective: grow long-term profit and brand trust together.\n\
         Organisational context: {}\n\n\
         Tools:\n\
         - {TOOL_CHECK}(price_change, ad_spend): rejects actions that break a business rule.\n\
         - {TOOL_ESTIMATE}(price_change, ad_spend): forecasts the profit and trust effect of an action.\n\n\
         Procedure:\n\
         1. Propose three distinct hypotheses.\n\
         2. Validate each with {TOOL_CHECK}.\n\
         3. Forecast each valid one with {TOOL_ESTIMATE}.\n\
         4. Pick the action with the best balance of profit and trust.",
        ctx.objective_text
    )
}

pub(crate) fn state_message(state: &MarketState, feedback: Option<&str>) -> String {
    let mut s = format!(
        "Week {}: price {:.2}, brand trust {:.3}, last week's ad spend {:.2}, cumulative profit {:.2}.",
        state.week + 1,
        state.price,
        state.trust,
        state.prev_ad_spend,
        state.cumulative_profit
    );
    if let Some(f) = feedback {
        s.push_str("\nFeedback from last week: ");
        s.push_str(f);
    }
    s
}

pub(crate) fn propose_instruction(k: usize, tools: bool) -> String {
    if tools {
        format!(
            "Phase 1-2: propose exactly {k} hypotheses by calling {TOOL_CHECK} once for each."
        )
    } else if k == 1 {
        "Choose this week's action.".to_string()
    } else {
        format!("Reply with a JSON object {{\"actions\": [...]}} holding exactly {k} actions.")
    }
}
