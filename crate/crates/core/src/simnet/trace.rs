//! Line-delimited event trace.
//!
//! Each record is `<tick> <KIND> key=value ...` with values free of
//! whitespace. Datagram payloads are logged once per distinct content as a
//! `PAYLOAD` record keyed by digest; `SUBMIT` refers to that digest.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::blocklace::{BlockId, NetAddress};
use crate::crypto::{AgentId, Digest};

/// A block named by creator and digest, as printed in traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub creator: AgentId,
    pub digest: Digest,
}

impl From<BlockId> for BlockKey {
    fn from(id: BlockId) -> Self {
        BlockKey { creator: id.creator, digest: id.digest }
    }
}

impl From<&BlockId> for BlockKey {
    fn from(id: &BlockId) -> Self {
        (*id).into()
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.creator.to_hex(), self.digest.to_hex())
    }
}

impl FromStr for BlockKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (c, d) = s.split_once(':').ok_or(())?;
        Ok(BlockKey { creator: AgentId::from_hex(c).ok_or(())?, digest: Digest::from_hex(d).ok_or(())? })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Bind { tick: u64, agent: AgentId, address: NetAddress },
    Payload { tick: u64, digest: Digest, bytes: Vec<u8> },
    Submit { tick: u64, dg: u64, src: NetAddress, dst: NetAddress, payload: Digest },
    DropLoss { tick: u64, dg: u64 },
    Dup { tick: u64, dg: u64 },
    DropStale { tick: u64, dg: u64, dst: NetAddress },
    Deliver { tick: u64, dg: u64, dst: NetAddress, agent: AgentId },
    Rebind { tick: u64, agent: AgentId, old: NetAddress, new: NetAddress },
    Tick { tick: u64 },
    /// A non-ack block made by an agent. `label` names scripted utterances.
    Create { tick: u64, agent: AgentId, block: BlockKey, payload: Digest, label: Option<String> },
    Insert { tick: u64, agent: AgentId, block: BlockKey, payload: Digest },
    Reject { tick: u64, agent: AgentId, dg: u64, reason: String },
    /// A datagram submitted by an adversary with a bad block.
    Inject { tick: u64, agent: AgentId, dg: u64, mode: String },
    Violation { tick: u64, agent: AgentId, block: BlockKey, what: String },
    /// Scripted event `event` could not be applied.
    Error { tick: u64, event: usize, reason: String },
    Final { tick: u64, agent: AgentId, blocks: usize },
    End { tick: u64, reason: String },
}

impl TraceEvent {
    pub fn tick(&self) -> u64 {
        use TraceEvent::*;
        match self {
            Bind { tick, .. }
            | Payload { tick, .. }
            | Submit { tick, .. }
            | DropLoss { tick, .. }
            | Dup { tick, .. }
            | DropStale { tick, .. }
            | Deliver { tick, .. }
            | Rebind { tick, .. }
            | Tick { tick }
            | Create { tick, .. }
            | Insert { tick, .. }
            | Reject { tick, .. }
            | Inject { tick, .. }
            | Violation { tick, .. }
            | Error { tick, .. }
            | Final { tick, .. }
            | End { tick, .. } => *tick,
        }
    }

    pub fn kind(&self) -> &'static str {
        use TraceEvent::*;
        match self {
            Bind { .. } => "BIND",
            Payload { .. } => "PAYLOAD",
            Submit { .. } => "SUBMIT",
            DropLoss { .. } => "DROP_LOSS",
            Dup { .. } => "DUP",
            DropStale { .. } => "DROP_STALE",
            Deliver { .. } => "DELIVER",
            Rebind { .. } => "REBIND",
            Tick { .. } => "TICK",
            Create { .. } => "CREATE",
            Insert { .. } => "INSERT",
            Reject { .. } => "REJECT",
            Inject { .. } => "INJECT",
            Violation { .. } => "VIOLATION",
            Error { .. } => "ERROR",
            Final { .. } => "FINAL",
            End { .. } => "END",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TraceEvent::*;
        write!(f, "{} {}", self.tick(), self.kind())?;
        match self {
            Bind { agent, address, .. } => write!(f, " agent={} addr={}", agent.to_hex(), address.0),
            Payload { digest, bytes, .. } => write!(f, " digest={} bytes={}", digest.to_hex(), hex::encode(bytes)),
            Submit { dg, src, dst, payload, .. } => {
                write!(f, " dg={dg} src={} dst={} payload={}", src.0, dst.0, payload.to_hex())
            }
            DropLoss { dg, .. } | Dup { dg, .. } => write!(f, " dg={dg}"),
            DropStale { dg, dst, .. } => write!(f, " dg={dg} dst={}", dst.0),
            Deliver { dg, dst, agent, .. } => write!(f, " dg={dg} dst={} agent={}", dst.0, agent.to_hex()),
            Rebind { agent, old, new, .. } => write!(f, " agent={} old={} new={}", agent.to_hex(), old.0, new.0),
            Tick { .. } => Ok(()),
            Create { agent, block, payload, label, .. } => {
                write!(f, " agent={} block={block} payload={}", agent.to_hex(), payload.to_hex())?;
                match label {
                    Some(l) => write!(f, " label={l}"),
                    None => Ok(()),
                }
            }
            Insert { agent, block, payload, .. } => {
                write!(f, " agent={} block={block} payload={}", agent.to_hex(), payload.to_hex())
            }
            Reject { agent, dg, reason, .. } => write!(f, " agent={} dg={dg} reason={reason}", agent.to_hex()),
            Inject { agent, dg, mode, .. } => write!(f, " agent={} dg={dg} mode={mode}", agent.to_hex()),
            Violation { agent, block, what, .. } => write!(f, " agent={} block={block} what={what}", agent.to_hex()),
            Error { event, reason, .. } => write!(f, " event={event} reason={reason}"),
            Final { agent, blocks, .. } => write!(f, " agent={} blocks={blocks}", agent.to_hex()),
            End { reason, .. } => write!(f, " reason={reason}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

struct Fields<'a>(BTreeMap<&'a str, &'a str>);

impl<'a> Fields<'a> {
    fn raw(&self, k: &str) -> Result<&'a str, String> {
        self.0.get(k).copied().ok_or_else(|| format!("missing field {k}"))
    }

    fn num<T: FromStr>(&self, k: &str) -> Result<T, String> {
        self.raw(k)?.parse().map_err(|_| format!("bad number in {k}"))
    }

    fn addr(&self, k: &str) -> Result<NetAddress, String> {
        self.num(k).map(NetAddress)
    }

    fn agent(&self, k: &str) -> Result<AgentId, String> {
        AgentId::from_hex(self.raw(k)?).ok_or_else(|| format!("bad agent id in {k}"))
    }

    fn digest(&self, k: &str) -> Result<Digest, String> {
        Digest::from_hex(self.raw(k)?).ok_or_else(|| format!("bad digest in {k}"))
    }

    fn block(&self, k: &str) -> Result<BlockKey, String> {
        self.raw(k)?.parse().map_err(|_| format!("bad block in {k}"))
    }

    fn text(&self, k: &str) -> Result<String, String> {
        self.raw(k).map(str::to_owned)
    }
}

impl FromStr for TraceEvent {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let tick: u64 = parts.next().ok_or("empty line")?.parse().map_err(|_| "bad tick")?;
        let kind = parts.next().ok_or("missing kind")?;
        let mut map = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| format!("bad field {p}"))?;
            map.insert(k, v);
        }
        let f = Fields(map);
        use TraceEvent::*;
        Ok(match kind {
            "BIND" => Bind { tick, agent: f.agent("agent")?, address: f.addr("addr")? },
            "PAYLOAD" => Payload {
                tick,
                digest: f.digest("digest")?,
                bytes: hex::decode(f.raw("bytes")?).map_err(|_| "bad payload hex")?,
            },
            "SUBMIT" => Submit {
                tick,
                dg: f.num("dg")?,
                src: f.addr("src")?,
                dst: f.addr("dst")?,
                payload: f.digest("payload")?,
            },
            "DROP_LOSS" => DropLoss { tick, dg: f.num("dg")? },
            "DUP" => Dup { tick, dg: f.num("dg")? },
            "DROP_STALE" => DropStale { tick, dg: f.num("dg")?, dst: f.addr("dst")? },
            "DELIVER" => Deliver { tick, dg: f.num("dg")?, dst: f.addr("dst")?, agent: f.agent("agent")? },
            "REBIND" => Rebind { tick, agent: f.agent("agent")?, old: f.addr("old")?, new: f.addr("new")? },
            "TICK" => Tick { tick },
            "CREATE" => Create {
                tick,
                agent: f.agent("agent")?,
                block: f.block("block")?,
                payload: f.digest("payload")?,
                label: f.0.get("label").map(|s| s.to_string()),
            },
            "INSERT" => Insert { tick, agent: f.agent("agent")?, block: f.block("block")?, payload: f.digest("payload")? },
            "REJECT" => Reject { tick, agent: f.agent("agent")?, dg: f.num("dg")?, reason: f.text("reason")? },
            "INJECT" => Inject { tick, agent: f.agent("agent")?, dg: f.num("dg")?, mode: f.text("mode")? },
            "VIOLATION" => Violation { tick, agent: f.agent("agent")?, block: f.block("block")?, what: f.text("what")? },
            "ERROR" => Error { tick, event: f.num("event")?, reason: f.text("reason")? },
            "FINAL" => Final { tick, agent: f.agent("agent")?, blocks: f.num("blocks")? },
            "END" => End { tick, reason: f.text("reason")? },
            other => return Err(format!("unknown kind {other}")),
        })
    }
}

/// Renders a trace, one record per line.
pub fn render(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<TraceEvent>, TraceParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|reason| TraceParseError { line: i + 1, reason }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, keygen};

    #[test]
    fn every_kind_round_trips() {
        let agent = keygen(1).agent_id();
        let block = BlockKey { creator: agent, digest: hash(b"b") };
        let digest = hash(b"p");
        let events = vec![
            TraceEvent::Bind { tick: 0, agent, address: NetAddress(3) },
            TraceEvent::Payload { tick: 0, digest, bytes: vec![0, 255, 7] },
            TraceEvent::Submit { tick: 1, dg: 4, src: NetAddress(1), dst: NetAddress(2), payload: digest },
            TraceEvent::DropLoss { tick: 1, dg: 4 },
            TraceEvent::Dup { tick: 1, dg: 5 },
            TraceEvent::DropStale { tick: 2, dg: 5, dst: NetAddress(2) },
            TraceEvent::Deliver { tick: 3, dg: 5, dst: NetAddress(2), agent },
            TraceEvent::Rebind { tick: 3, agent, old: NetAddress(2), new: NetAddress(9) },
            TraceEvent::Tick { tick: 4 },
            TraceEvent::Create { tick: 4, agent, block, payload: digest, label: Some("m1".into()) },
            TraceEvent::Create { tick: 4, agent, block, payload: digest, label: None },
            TraceEvent::Insert { tick: 4, agent, block, payload: digest },
            TraceEvent::Reject { tick: 5, agent, dg: 6, reason: "forged".into() },
            TraceEvent::Inject { tick: 5, agent, dg: 6, mode: "bad_signature".into() },
            TraceEvent::Violation { tick: 5, agent, block, what: "dangling".into() },
            TraceEvent::Error { tick: 6, event: 2, reason: "no_invite".into() },
            TraceEvent::Final { tick: 7, agent, blocks: 12 },
            TraceEvent::End { tick: 7, reason: "quiescence".into() },
        ];
        let text = render(&events);
        assert_eq!(parse(&text).unwrap(), events);
    }

    #[test]
    fn parse_reports_line() {
        let err = parse("0 TICK\n\n1 NOPE\n").unwrap_err();
        assert_eq!(err.line, 3);
    }
}
