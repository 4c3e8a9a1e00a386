//! Scenario files: TOML with a `schema` version.
//!
//! ```toml
//! schema = 1
//! protocol = "wl"
//! seed = 7
//! ticks = 3000
//!
//! [net]
//! loss = 0.3
//!
//! [[agents]]
//! name = "ann"
//!
//! [[events]]
//! tick = 0
//! agent = "ann"
//! action = "create_group"
//! group = "team"
//!
//! [[oracles]]
//! kind = "wl_liveness"
//! group = "team"
//! ```
//!
//! An event with `repeat = n` stands for `n` copies, `every` ticks apart;
//! `{n}` in its `text` or `label` expands to the copy number, from 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocklace::NetAddress;
use crate::crypto::{keygen, AgentId, Keypair};
use crate::simnet::NetConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario is not valid TOML: {0}")]
    Syntax(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{location}: {reason}")]
    Invalid { location: String, reason: String },
}

fn invalid(location: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { location: location.into(), reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tl,
    Wl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Correct,
    /// Follows the protocol, plus scripted forks.
    Equivocator,
    /// Never runs the protocol; injects scripted bad blocks.
    Forger,
    /// Never runs the protocol.
    Silent,
    /// Passively receives a copy of every delivered datagram.
    Eavesdropper,
}

impl Role {
    pub fn runs_protocol(self) -> bool {
        matches!(self, Role::Correct | Role::Equivocator)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
    /// Tick budget.
    pub ticks: u64,
    /// WL only: encrypt group messages. Off is a negative control.
    #[serde(default = "yes")]
    pub encryption: bool,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub oracles: Vec<OracleSpec>,
}

fn yes() -> bool {
    true
}

/// Network settings; the seed comes from the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub loss: f64,
    pub dup: f64,
    pub delay_min: u64,
    pub delay_max: u64,
    pub tick_interval: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = NetConfig::default();
        NetSection {
            loss: d.loss,
            dup: d.dup,
            delay_min: d.delay_min,
            delay_max: d.delay_max,
            tick_interval: d.tick_interval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    /// Key seed; defaults to the agent's 1-based position in the roster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<u64>,
    /// Initial address; defaults to the 1-based position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Follow,
    Say,
    Respond,
    CreateGroup,
    Invite,
    Accept,
    Rebind,
    Equivocate,
    Forge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeMode {
    /// Fresh blocks under the victim's id with random signatures.
    BadSignature,
    /// Captured victim blocks with altered contents and the original id.
    Tampered,
}

impl ForgeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForgeMode::BadSignature => "bad_signature",
            ForgeMode::Tampered => "tampered",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub tick: u64,
    pub agent: String,
    pub action: Option<ActionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Label of the utterance responded to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<String>,
    /// Names the block this event creates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<u64>,
    /// Equivocate: one text per fork.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub texts: Vec<String>,
    /// Equivocate: recipients of each fork. Forge: recipients.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub to: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ForgeMode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    TlLiveness,
    WlLiveness,
    Attribution,
    EquivocationVisibility,
    Privacy,
    PartitionIntegrity,
    Churn,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::TlLiveness => "tl_liveness",
            OracleKind::WlLiveness => "wl_liveness",
            OracleKind::Attribution => "attribution",
            OracleKind::EquivocationVisibility => "equivocation_visibility",
            OracleKind::Privacy => "privacy",
            OracleKind::PartitionIntegrity => "partition_integrity",
            OracleKind::Churn => "churn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follower: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub culprit: Option<String>,
    /// Equivocation: exact number of fork pairs every member must report.
    /// Without it, any nonempty identical set passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

impl OracleSpec {
    pub fn new(kind: OracleKind) -> Self {
        OracleSpec { kind, author: None, follower: None, group: None, culprit: None, expect_pairs: None, agent: None }
    }
}

/// A validated, expanded command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Follow { target: usize },
    Say { group: Option<String>, text: String },
    Respond { group: Option<String>, re: String, text: String },
    CreateGroup { group: String },
    Invite { target: usize, group: String },
    Accept { group: String },
    Rebind,
    Equivocate { group: Option<String>, forks: Vec<(String, Vec<usize>)> },
    Forge { victim: usize, count: usize, mode: ForgeMode, to: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    /// Position of the source entry in `events`.
    pub source: usize,
    pub tick: u64,
    pub agent: usize,
    pub action: Action,
    pub label: Option<String>,
}

/// A validated scenario with agents resolved to roster indices.
#[derive(Clone, Debug)]
pub struct Plan {
    pub scenario: Scenario,
    pub keys: Vec<Keypair>,
    pub addresses: Vec<NetAddress>,
    pub events: Vec<Event>,
}

impl Plan {
    pub fn id(&self, i: usize) -> AgentId {
        self.keys[i].agent_id()
    }

    pub fn role(&self, i: usize) -> Role {
        self.scenario.agents[i].role
    }

    pub fn name(&self, i: usize) -> &str {
        &self.scenario.agents[i].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.scenario.agents.iter().position(|a| a.name == name)
    }

    pub fn index_by_id(&self, id: &AgentId) -> Option<usize> {
        self.keys.iter().position(|k| k.agent_id() == *id)
    }

    pub fn net_config(&self) -> NetConfig {
        let n = &self.scenario.net;
        NetConfig {
            loss: n.loss,
            dup: n.dup,
            delay_min: n.delay_min,
            delay_max: n.delay_max,
            seed: self.scenario.seed,
            tick_interval: n.tick_interval,
        }
    }

    /// Founder of each scripted group, by group name.
    pub fn founders(&self) -> BTreeMap<String, usize> {
        self.events
            .iter()
            .filter_map(|e| match &e.action {
                Action::CreateGroup { group } => Some((group.clone(), e.agent)),
                _ => None,
            })
            .collect()
    }

    /// Every message text scripted for `group`.
    pub fn group_texts(&self, group: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for e in &self.events {
            match &e.action {
                Action::Say { group: Some(g), text } | Action::Respond { group: Some(g), text, .. } if g == group => {
                    out.insert(text.clone());
                }
                Action::Equivocate { group: Some(g), forks } if g == group => {
                    out.extend(forks.iter().map(|(t, _)| t.clone()));
                }
                _ => {}
            }
        }
        out
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        // check the version first so that old files get a useful message
        #[derive(Deserialize)]
        struct Version {
            schema: Option<u32>,
        }
        let v: Version = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        match v.schema {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(ScenarioError::Schema(other)),
            None => return Err(invalid("schema", "missing")),
        }
        toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn plan(&self) -> Result<Plan, ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(self.schema));
        }
        let mut names = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if a.name.is_empty() || a.name.contains(char::is_whitespace) {
                return Err(invalid(format!("agents[{i}]"), "name must be nonempty without whitespace"));
            }
            if !names.insert(a.name.as_str()) {
                return Err(invalid(format!("agents[{i}]"), format!("duplicate name {}", a.name)));
            }
        }
        let keys: Vec<Keypair> =
            self.agents.iter().enumerate().map(|(i, a)| keygen(a.key.unwrap_or(i as u64 + 1))).collect();
        let ids: BTreeSet<AgentId> = keys.iter().map(Keypair::agent_id).collect();
        if ids.len() != keys.len() {
            return Err(invalid("agents", "two agents share a key"));
        }
        let addresses: Vec<NetAddress> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| NetAddress(a.address.unwrap_or(i as u32 + 1)))
            .collect();
        if addresses.iter().collect::<BTreeSet<_>>().len() != addresses.len() {
            return Err(invalid("agents", "two agents share an address"));
        }
        if self.protocol == Protocol::Tl && !self.encryption {
            return Err(invalid("encryption", "only meaningful for wl"));
        }
        NetConfig { seed: self.seed, ..self.net_config_unseeded() }
            .validate()
            .map_err(|e| invalid("net", e.to_string()))?;

        let agent = |loc: &str, name: &str| -> Result<usize, ScenarioError> {
            self.agents.iter().position(|a| a.name == name).ok_or_else(|| invalid(loc, format!("unknown agent {name}")))
        };
        let mut events = Vec::new();
        let mut last_tick = 0;
        for (i, e) in self.events.iter().enumerate() {
            let loc = format!("events[{i}]");
            if e.tick < last_tick {
                return Err(invalid(&loc, "event ticks must be nondecreasing"));
            }
            last_tick = e.tick;
            let who = agent(&loc, &e.agent)?;
            let kind = e.action.ok_or_else(|| invalid(&loc, "missing action"))?;
            let repeat = e.repeat.unwrap_or(1);
            if repeat == 0 {
                return Err(invalid(&loc, "repeat must be at least 1"));
            }
            let every = e.every.unwrap_or(1);
            for n in 1..=repeat {
                let expand = |s: &str| s.replace("{n}", &n.to_string());
                let need = |field: &Option<String>, what: &str| {
                    field.as_deref().map(expand).ok_or_else(|| invalid(&loc, format!("{what} is required")))
                };
                let wl_group = |field: &Option<String>| -> Result<Option<String>, ScenarioError> {
                    match (self.protocol, field) {
                        (Protocol::Wl, Some(g)) => Ok(Some(g.clone())),
                        (Protocol::Wl, None) => Err(invalid(&loc, "group is required")),
                        (Protocol::Tl, Some(_)) => Err(invalid(&loc, "tl has no groups")),
                        (Protocol::Tl, None) => Ok(None),
                    }
                };
                let only = |p: Protocol| {
                    if self.protocol == p {
                        Ok(())
                    } else {
                        Err(invalid(&loc, format!("{kind:?} is not a {:?} action", self.protocol)))
                    }
                };
                let action = match kind {
                    ActionKind::Follow => {
                        only(Protocol::Tl)?;
                        Action::Follow { target: agent(&loc, &need(&e.target, "target")?)? }
                    }
                    ActionKind::Say => Action::Say { group: wl_group(&e.group)?, text: need(&e.text, "text")? },
                    ActionKind::Respond => Action::Respond {
                        group: wl_group(&e.group)?,
                        re: need(&e.re, "re")?,
                        text: need(&e.text, "text")?,
                    },
                    ActionKind::CreateGroup => {
                        only(Protocol::Wl)?;
                        Action::CreateGroup { group: need(&e.group, "group")? }
                    }
                    ActionKind::Invite => {
                        only(Protocol::Wl)?;
                        Action::Invite { target: agent(&loc, &need(&e.target, "target")?)?, group: need(&e.group, "group")? }
                    }
                    ActionKind::Accept => {
                        only(Protocol::Wl)?;
                        Action::Accept { group: need(&e.group, "group")? }
                    }
                    ActionKind::Rebind => Action::Rebind,
                    ActionKind::Equivocate => {
                        if self.agents[who].role != Role::Equivocator {
                            return Err(invalid(&loc, "only an equivocator equivocates"));
                        }
                        if e.texts.len() < 2 || e.texts.len() != e.to.len() {
                            return Err(invalid(&loc, "need at least two texts and one recipient list per text"));
                        }
                        let mut forks = Vec::new();
                        for (t, names) in e.texts.iter().zip(&e.to) {
                            let to = names.iter().map(|n| agent(&loc, n)).collect::<Result<Vec<_>, _>>()?;
                            forks.push((expand(t), to));
                        }
                        Action::Equivocate { group: wl_group(&e.group)?, forks }
                    }
                    ActionKind::Forge => {
                        if self.agents[who].role != Role::Forger {
                            return Err(invalid(&loc, "only a forger forges"));
                        }
                        let to: Vec<usize> = e.to.iter().flatten().map(|n| agent(&loc, n)).collect::<Result<_, _>>()?;
                        if to.is_empty() {
                            return Err(invalid(&loc, "forge needs recipients in `to`"));
                        }
                        Action::Forge {
                            victim: agent(&loc, &need(&e.victim, "victim")?)?,
                            count: e.count.unwrap_or(1),
                            mode: e.mode.ok_or_else(|| invalid(&loc, "mode is required"))?,
                            to,
                        }
                    }
                };
                events.push(Event {
                    source: i,
                    tick: e.tick + (n - 1) * every,
                    agent: who,
                    action,
                    label: e.label.as_deref().map(expand),
                });
            }
        }
        events.sort_by_key(|e| e.tick);
        let mut labels = BTreeSet::new();
        for e in &events {
            if let Some(l) = &e.label {
                if l.contains(char::is_whitespace) || !labels.insert(l.clone()) {
                    return Err(invalid(format!("events[{}]", e.source), format!("bad or duplicate label {l}")));
                }
            }
        }
        let mut groups = BTreeSet::new();
        for e in &events {
            if let Action::CreateGroup { group } = &e.action {
                if !groups.insert(group.clone()) {
                    return Err(invalid(format!("events[{}]", e.source), format!("group {group} created twice")));
                }
            }
        }
        for (i, o) in self.oracles.iter().enumerate() {
            let loc = format!("oracles[{i}]");
            for name in [&o.author, &o.follower, &o.culprit, &o.agent].into_iter().flatten() {
                agent(&loc, name)?;
            }
            if let Some(g) = &o.group {
                if !groups.contains(g) {
                    return Err(invalid(&loc, format!("unknown group {g}")));
                }
            }
            let need = |f: &Option<String>, what: &str| f.as_ref().map(|_| ()).ok_or_else(|| invalid(&loc, format!("{what} is required")));
            match o.kind {
                OracleKind::TlLiveness => {
                    need(&o.author, "author")?;
                    need(&o.follower, "follower")?;
                }
                OracleKind::WlLiveness | OracleKind::Privacy => need(&o.group, "group")?,
                OracleKind::EquivocationVisibility => need(&o.culprit, "culprit")?,
                OracleKind::Churn => need(&o.agent, "agent")?,
                OracleKind::Attribution | OracleKind::PartitionIntegrity => {}
            }
        }
        Ok(Plan { scenario: self.clone(), keys, addresses, events })
    }

    fn net_config_unseeded(&self) -> NetConfig {
        let n = &self.net;
        NetConfig {
            loss: n.loss,
            dup: n.dup,
            delay_min: n.delay_min,
            delay_max: n.delay_max,
            seed: 0,
            tick_interval: n.tick_interval,
        }
    }
}
