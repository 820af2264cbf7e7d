//! Explicit-state verification of guardian-mediated transitions.
//!
//! From an initial `(price, ad)` the checker applies every combination of the
//! configured price-change and ad-spend choices, routes each through the
//! guardian's repair, applies the repaired action with the simulator's price
//! arithmetic, and evaluates four safety invariants on the successor:
//!
//! | id                  | predicate                                  |
//! |---------------------|--------------------------------------------|
//! | `buffered_margin`   | `price >= min_safe_price`                  |
//! | `price_cap`         | `price <= max_price`                       |
//! | `ad_spend_absolute` | `ad_spend <= ad_cap`                       |
//! | `ad_spend_relative` | `ad_spend - prev_ad <= ad_increase_cap`    |
//!
//! Exploration is breadth-first and layer-synchronous. States are
//! deduplicated on `(price rounded to price_quantum, ad_spend, prev_ad)`,
//! plus the week unless [`CheckerConfig::week_agnostic`] is set. Each state
//! keeps the exact price of the first path that reached it, so every witness
//! trace replays exactly through [`crate::guardian`] and [`crate::sim`].
//!
//! `states_found` counts generated successors and `distinct_states` counts
//! newly discovered ones; the initial state is in neither.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::guardian::{min_safe_price, safe_action_with, ConstraintSet, RepairPipeline};
use crate::sim::{apply_price_change, Action, MarketState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantId {
    BufferedMargin,
    PriceCap,
    AdSpendAbsolute,
    AdSpendRelative,
}

impl InvariantId {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvariantId::BufferedMargin => "buffered_margin",
            InvariantId::PriceCap => "price_cap",
            InvariantId::AdSpendAbsolute => "ad_spend_absolute",
            InvariantId::AdSpendRelative => "ad_spend_relative",
        }
    }
}

/// The part of the world the invariants talk about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckedState {
    pub week: u32,
    pub price: f64,
    pub ad_spend: f64,
    pub prev_ad: f64,
}

/// Invariants violated by `state`, in [`InvariantId`] order.
pub fn check_invariants(state: &CheckedState, cs: &ConstraintSet) -> Vec<InvariantId> {
    let mut out = Vec::new();
    if !(state.price >= min_safe_price(cs)) {
        out.push(InvariantId::BufferedMargin);
    }
    if !(state.price <= cs.max_price) {
        out.push(InvariantId::PriceCap);
    }
    if !(state.ad_spend <= cs.ad_cap) {
        out.push(InvariantId::AdSpendAbsolute);
    }
    if !(state.ad_spend - state.prev_ad <= cs.ad_increase_cap) {
        out.push(InvariantId::AdSpendRelative);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerConfig {
    /// Proposed price changes in percent.
    pub price_choices: Vec<f64>,
    /// Proposed weekly ad budgets.
    pub ad_choices: Vec<f64>,
    pub horizon: u32,
    pub price_quantum: f64,
    pub initial_price: f64,
    pub initial_ad: f64,
    /// Drop the week from the dedup key.
    pub week_agnostic: bool,
    /// Stop once this many distinct states are stored.
    pub max_states: Option<usize>,
    pub constraints: ConstraintSet,
    /// Repair stages to use. Turning one off should produce violations.
    pub pipeline: RepairPipeline,
    /// Stop at the first violating state.
    pub stop_at_first: bool,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            price_choices: vec![-50.0, 0.0, 20.0, 60.0],
            ad_choices: vec![0.0, 500.0, 1000.0, 2000.0, 4000.0, 5000.0],
            horizon: 52,
            price_quantum: 0.01,
            initial_price: 100.0,
            initial_ad: 0.0,
            week_agnostic: false,
            max_states: None,
            constraints: ConstraintSet::default(),
            pipeline: RepairPipeline::default(),
            stop_at_first: false,
        }
    }
}

impl CheckerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.price_choices.is_empty() || self.ad_choices.is_empty() {
            return Err("choice lists must be non-empty".into());
        }
        if self.price_choices.len() * self.ad_choices.len() > usize::from(u16::MAX) {
            return Err("too many action combinations".into());
        }
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.price_quantum.is_finite() && self.price_quantum > 0.0) {
            return Err("price_quantum must be positive".into());
        }
        if !(self.initial_price.is_finite() && self.initial_price > 0.0) {
            return Err("initial_price must be positive".into());
        }
        if self
            .price_choices
            .iter()
            .chain(&self.ad_choices)
            .any(|v| !v.is_finite())
        {
            return Err("choices must be finite".into());
        }
        self.constraints.validate().map_err(|e| e.to_string())
    }

    fn actions(&self) -> Vec<Action> {
        let mut out = Vec::with_capacity(self.price_choices.len() * self.ad_choices.len());
        for &p in &self.price_choices {
            for &a in &self.ad_choices {
                out.push(Action::new(p, a));
            }
        }
        out
    }
}

/// One step of a counterexample: the proposed action and where it led.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub proposed: Action,
    pub state: CheckedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub invariants: Vec<InvariantId>,
    pub initial: CheckedState,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub states_found: u64,
    pub distinct_states: u64,
    pub diameter: u32,
    /// Number of violating successor states.
    pub violation_count: u64,
    /// Witness traces, one per violated invariant (the first found).
    pub violations: Vec<Witness>,
    pub wall_time: f64,
    /// False when exploration stopped early (state budget or first hit).
    pub complete: bool,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0 && self.complete
    }

    /// Human summary in the column layout of a TLC statistics table.
    pub fn summary(&self) -> String {
        let secs = self.wall_time.round() as u64;
        let mut s = format!(
            "{:<10} {:>8} {:>16} {:>16}\n{:<10} {:>8} {:>16} {:>16}\n",
            "Time",
            "Diameter",
            "States Found",
            "Distinct States",
            format!("{:02}:{:02}:{:02}", secs / 3600, secs / 60 % 60, secs % 60),
            self.diameter,
            group(self.states_found),
            group(self.distinct_states),
        );
        if self.violation_count == 0 {
            s.push_str("0 invariant violations");
        } else {
            s.push_str(&format!("{} violating states", group(self.violation_count)));
            for w in &self.violations {
                let ids: Vec<_> = w.invariants.iter().map(|i| i.as_str()).collect();
                s.push_str(&format!(
                    "\n  {} after {} steps",
                    ids.join(", "),
                    w.trace.len()
                ));
            }
        }
        if !self.complete {
            s.push_str("\nexploration incomplete");
        }
        s
    }
}

fn group(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Key {
    price: i64,
    ad: u64,
    prev: u64,
}

#[derive(Clone, Copy)]
struct Node {
    price: f64,
    ad: f64,
    prev: f64,
    parent: u32,
    action: u16,
}

struct Successor {
    key: Key,
    parent: u32,
    action: u16,
    price: f64,
    ad: f64,
    prev: f64,
    bad: bool,
}

fn key_of(price: f64, ad: f64, prev: f64, quantum: f64) -> Key {
    Key {
        price: (price / quantum).round() as i64,
        ad: ad.to_bits(),
        prev: prev.to_bits(),
    }
}

/// Guardian-mediated transition used by the checker.
pub fn transition(
    price: f64,
    ad: f64,
    proposed: &Action,
    cs: &ConstraintSet,
    pipeline: &RepairPipeline,
) -> (f64, f64) {
    let state = MarketState {
        week: 0,
        price,
        trust: 0.7,
        prev_ad_spend: ad,
        cumulative_profit: 0.0,
    };
    let safe = safe_action_with(proposed, &state, cs, pipeline);
    (apply_price_change(price, safe.price_change_pct), safe.ad_spend)
}

/// Breadth-first exploration up to `cfg.horizon` steps.
pub fn explore(cfg: &CheckerConfig) -> Result<CheckReport, String> {
    cfg.validate()?;
    let started = Instant::now();
    let actions = cfg.actions();
    let cs = &cfg.constraints;
    let pipeline = cfg.pipeline;

    let init = Node {
        price: cfg.initial_price,
        ad: cfg.initial_ad,
        prev: cfg.initial_ad,
        parent: u32::MAX,
        action: 0,
    };
    let mut layers: Vec<Vec<Node>> = vec![vec![init]];
    let mut seen: HashSet<Key> = HashSet::new();
    if cfg.week_agnostic {
        seen.insert(key_of(init.price, init.ad, init.prev, cfg.price_quantum));
    }

    let mut states_found = 0u64;
    let mut distinct = 0u64;
    let mut violation_count = 0u64;
    let mut first_bad: Vec<(InvariantId, usize, usize)> = Vec::new();
    let mut complete = true;

    for depth in 1..=cfg.horizon as usize {
        let frontier = &layers[depth - 1];
        if frontier.is_empty() {
            break;
        }
        let mut succ: Vec<Successor> = frontier
            .par_iter()
            .enumerate()
            .flat_map_iter(|(idx, node)| {
                actions.iter().enumerate().map(move |(ai, a)| {
                    let (price, ad) = transition(node.price, node.ad, a, cs, &pipeline);
                    let next = CheckedState {
                        week: depth as u32,
                        price,
                        ad_spend: ad,
                        prev_ad: node.ad,
                    };
                    Successor {
                        key: key_of(price, ad, node.ad, cfg.price_quantum),
                        parent: idx as u32,
                        action: ai as u16,
                        price,
                        ad,
                        prev: node.ad,
                        bad: !check_invariants(&next, cs).is_empty(),
                    }
                })
            })
            .collect();
        states_found += succ.len() as u64;
        violation_count += succ.iter().filter(|s| s.bad).count() as u64;

        // First occurrence in (parent, action) order is the representative.
        succ.par_sort_unstable_by_key(|s| (s.key, s.parent, s.action));
        succ.dedup_by_key(|s| s.key);
        let mut next: Vec<(u32, u16, Node, bool, Key)> = succ
            .into_iter()
            .filter(|s| !cfg.week_agnostic || !seen.contains(&s.key))
            .map(|s| {
                (
                    s.parent,
                    s.action,
                    Node {
                        price: s.price,
                        ad: s.ad,
                        prev: s.prev,
                        parent: s.parent,
                        action: s.action,
                    },
                    s.bad,
                    s.key,
                )
            })
            .collect();
        next.sort_unstable_by_key(|(p, a, ..)| (*p, *a));

        let mut layer = Vec::with_capacity(next.len());
        for (_, _, node, bad, key) in next {
            if cfg.week_agnostic {
                seen.insert(key);
            }
            if bad {
                let state = CheckedState {
                    week: depth as u32,
                    price: node.price,
                    ad_spend: node.ad,
                    prev_ad: node.prev,
                };
                for id in check_invariants(&state, cs) {
                    if !first_bad.iter().any(|(i, ..)| *i == id) {
                        first_bad.push((id, depth, layer.len()));
                    }
                }
            }
            layer.push(node);
        }
        distinct += layer.len() as u64;
        layers.push(layer);

        if cfg.stop_at_first && violation_count > 0 {
            complete = depth == cfg.horizon as usize;
            break;
        }
        if let Some(max) = cfg.max_states {
            if distinct as usize > max {
                complete = false;
                break;
            }
        }
    }

    let diameter = layers.iter().skip(1).take_while(|l| !l.is_empty()).count() as u32;

    let violations = first_bad
        .iter()
        .map(|&(_, depth, idx)| witness(&layers, depth, idx, &actions, cs))
        .collect();

    Ok(CheckReport {
        states_found,
        distinct_states: distinct,
        diameter,
        violation_count,
        violations,
        wall_time: started.elapsed().as_secs_f64(),
        complete,
    })
}

fn witness(
    layers: &[Vec<Node>],
    depth: usize,
    idx: usize,
    actions: &[Action],
    cs: &ConstraintSet,
) -> Witness {
    let mut steps = Vec::with_capacity(depth);
    let mut d = depth;
    let mut i = idx;
    while d > 0 {
        let node = layers[d][i];
        steps.push(TraceStep {
            proposed: actions[node.action as usize],
            state: CheckedState {
                week: d as u32,
                price: node.price,
                ad_spend: node.ad,
                prev_ad: node.prev,
            },
        });
        i = node.parent as usize;
        d -= 1;
    }
    steps.reverse();
    let root = layers[0][0];
    let last = steps.last().map(|s| s.state).expect("witness has at least one step");
    Witness {
        invariants: check_invariants(&last, cs),
        initial: CheckedState {
            week: 0,
            price: root.price,
            ad_spend: root.ad,
            prev_ad: root.prev,
        },
        trace: steps,
    }
}
