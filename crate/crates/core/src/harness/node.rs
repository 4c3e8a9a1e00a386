//! Uniform handle over the two protocol state machines.

use crate::agent::Transition;
use crate::blocklace::{Block, Blocklace, NetAddress};
use crate::crypto::{AgentId, Keypair};
use crate::tl::TlAgent;
use crate::wl::WlAgent;

use super::scenario::Protocol;

#[derive(Clone, Debug)]
pub enum Node {
    Tl(TlAgent),
    Wl(WlAgent),
}

impl Node {
    pub fn new(protocol: Protocol, kp: Keypair, address: NetAddress) -> Self {
        match protocol {
            Protocol::Tl => Node::Tl(TlAgent::new(kp, address)),
            Protocol::Wl => Node::Wl(WlAgent::new(kp, address)),
        }
    }

    pub fn id(&self) -> AgentId {
        match self {
            Node::Tl(a) => a.id(),
            Node::Wl(a) => a.id(),
        }
    }

    pub fn address(&self) -> NetAddress {
        match self {
            Node::Tl(a) => a.address(),
            Node::Wl(a) => a.address(),
        }
    }

    pub fn blocklace(&self) -> &Blocklace {
        match self {
            Node::Tl(a) => a.blocklace(),
            Node::Wl(a) => a.blocklace(),
        }
    }

    /// Every block this agent holds, stored or kept aside.
    pub fn held_blocks(&self) -> Vec<&Block> {
        match self {
            Node::Tl(a) => a.blocklace().iter().collect(),
            Node::Wl(a) => a.blocklace().iter().chain(a.stored_acks()).collect(),
        }
    }

    pub fn as_tl(&self) -> Option<&TlAgent> {
        match self {
            Node::Tl(a) => Some(a),
            Node::Wl(_) => None,
        }
    }

    pub fn as_wl(&self) -> Option<&WlAgent> {
        match self {
            Node::Wl(a) => Some(a),
            Node::Tl(_) => None,
        }
    }

    pub fn receive(&mut self, bytes: &[u8], from: Option<NetAddress>) -> Transition {
        match self {
            Node::Tl(a) => a.on_receive(bytes, from),
            Node::Wl(a) => a.on_receive(bytes, from),
        }
    }

    pub fn tick(&mut self) -> Transition {
        let sends = match self {
            Node::Tl(a) => a.tick(),
            Node::Wl(a) => a.tick(),
        };
        Transition { sends, ..Default::default() }
    }

    pub fn flush(&mut self) -> Transition {
        match self {
            Node::Tl(a) => a.handle(crate::tl::TlCommand::Flush).expect("flush cannot fail"),
            Node::Wl(a) => a.handle(crate::wl::WlCommand::Flush).expect("flush cannot fail"),
        }
    }

    pub fn change_address(&mut self, to: NetAddress) -> Transition {
        match self {
            Node::Tl(a) => a.on_address_change(to),
            Node::Wl(a) => a.on_address_change(to),
        }
    }

    pub fn introduce(&mut self, agent: AgentId, address: NetAddress) {
        match self {
            Node::Tl(a) => a.handle(crate::tl::TlCommand::Introduce { agent, address }).map(drop).expect("infallible"),
            Node::Wl(a) => a.handle(crate::wl::WlCommand::Introduce { agent, address }).map(drop).expect("infallible"),
        }
    }
}
