//! Append-only record of a run and its line-delimited JSON encoding.

use crate::ba::{CheckpointCertificate, Proposal, Value, Vote, VoteKind};
use crate::chain::{BlockId, MinerKind, NodeId, SimTime};
use crate::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Miner,
    Checkpointer,
    ByzantineCheckpointer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Payload {
    Chain { tip: BlockId },
    Proposal { proposal: Proposal },
    Vote { vote: Vote },
    Certificate { certificate: CheckpointCertificate },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecordKind {
    Genesis,
    MiningOpportunity { miner_kind: MinerKind, assigned: Option<NodeId> },
    BlockMined { block: BlockId, parent: BlockId, height: u64, miner_kind: MinerKind },
    ChainAdopt { tip: BlockId, height: u64, old_tip: BlockId },
    ChainTruncate { tip: BlockId, height: u64, old_tip: BlockId, old_height: u64 },
    CheckpointMark { iteration: u64, block: BlockId },
    ConfirmSetChange { fin: BlockId, ada: BlockId },
    MessageSent { msg: u64, from: NodeId, adversarial: bool, payload: Payload },
    Delivery { msg: u64, sent: SimTime, deferred: bool },
    LeaderChosen { iteration: u64, period: u64, leader: NodeId, honest: bool },
    Proposal { iteration: u64, period: u64, value: Value },
    VoteCast { vote: Vote, by_adversary: bool },
    PeriodStart { iteration: u64, period: u64, starting_value: Value },
    IterationStart { iteration: u64 },
    IterationHalt { iteration: u64, period: u64, value: Value, checkpoint: BlockId, voters: Vec<NodeId> },
    CertificateBroadcast { iteration: u64, msg: u64 },
    Online,
    Offline,
    Withhold { tip: BlockId, height: u64 },
    Release { tip: BlockId, height: u64 },
    Abandon { tip: BlockId, reason: String },
    Equivocation { voter: NodeId, iteration: u64, period: u64, vote_kind: VoteKind },
    NodeError { error: String },
    FlushStart,
    FinalState { tip: BlockId, checkpoint_iteration: u64, iteration: u64, period: u64, halted: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(flatten)]
    pub kind: RecordKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TraceHeader {
    pub trace_schema: u32,
    pub config: ScenarioConfig,
    pub roster: Vec<Role>,
}

impl TraceHeader {
    pub fn role(&self, node: NodeId) -> Option<Role> {
        self.roster.get(node.0 as usize).copied()
    }

    pub fn is_honest(&self, node: NodeId) -> bool {
        matches!(self.role(node), Some(Role::Miner | Role::Checkpointer))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported trace schema {0}")]
    Schema(u32),
    #[error("line {line}: record out of order")]
    Order { line: usize },
    #[error("trace is truncated: no final-state records")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Trace {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), TraceError> {
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    /// Reads a trace, rejecting unordered or truncated input.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TraceError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(TraceError::Empty)??;
        let header: TraceHeader =
            serde_json::from_str(&first).map_err(|e| TraceError::Parse { line: 1, message: e.to_string() })?;
        if header.trace_schema != TRACE_SCHEMA {
            return Err(TraceError::Schema(header.trace_schema));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord =
                serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 2, message: e.to_string() })?;
            if let Some(prev) = records.last() {
                let prev: &TraceRecord = prev;
                if rec.seq != prev.seq + 1 || rec.time < prev.time {
                    return Err(TraceError::Order { line: i + 2 });
                }
            }
            records.push(rec);
        }
        if !records.iter().any(|r| matches!(r.kind, RecordKind::FinalState { .. })) {
            return Err(TraceError::Truncated);
        }
        Ok(Trace { header, records })
    }
}

/// Accumulates records with a running sequence number.
#[derive(Debug, Default)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn push(&mut self, time: SimTime, node: Option<NodeId>, kind: RecordKind) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { time, seq, node, kind });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}
