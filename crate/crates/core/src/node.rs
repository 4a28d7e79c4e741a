//! Participant state: checkpointed longest-chain adoption and the two
//! confirmation rules.

use crate::ba::{BaError, CheckpointCertificate};
use crate::chain::{Block, BlockId, BlockTree, Chain, ChainError, MinerKind, NodeId, SimTime};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub block: BlockId,
}

impl Checkpoint {
    pub fn genesis() -> Self {
        Checkpoint { iteration: 0, block: BlockId::GENESIS }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("received blocks do not connect to the local tree: {0}")]
    DisconnectedChain(ChainError),
    #[error("bad certificate: {0}")]
    BadCertificate(BaError),
    #[error("checkpoint {block} of iteration {iteration} does not extend checkpoint {previous}")]
    NonMonotoneCheckpoint { iteration: u64, block: BlockId, previous: BlockId },
    #[error("iteration {0} is already checkpointed")]
    StaleIteration(u64),
    #[error("certified chain is too short: {0}")]
    ChainTooShort(ChainError),
    #[error("node is offline")]
    Offline,
}

/// Resolves equal-length competing tips.
pub trait TieBreaker {
    /// Picks one of `candidates` (never empty, contains `incumbent` when the
    /// incumbent is still eligible) for `node` to hold.
    fn choose(&mut self, node: NodeId, incumbent: BlockId, candidates: &[BlockId], tree: &BlockTree) -> BlockId;
}

/// Honest-baseline policy: never switch on a tie.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeepIncumbent;

impl TieBreaker for KeepIncumbent {
    fn choose(&mut self, _node: NodeId, incumbent: BlockId, candidates: &[BlockId], _tree: &BlockTree) -> BlockId {
        if candidates.contains(&incumbent) {
            incumbent
        } else {
            *candidates.iter().min().expect("candidates are non-empty")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeParams {
    /// Depth of the checkpointed block inside the certified chain.
    pub checkpoint_depth: u64,
    pub k_prime: u64,
    pub quorum: usize,
    pub enforce_p2: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TipChange {
    pub old_tip: BlockId,
    pub new_tip: BlockId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointOutcome {
    /// Checkpoints applied by this call, in iteration order (buffered ones included).
    pub applied: Vec<Checkpoint>,
    pub tip_change: Option<TipChange>,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub tree: BlockTree,
    pub tip: BlockId,
    pub last_checkpoint: Checkpoint,
    pub history: Vec<Checkpoint>,
    pub online: bool,
    pub params: NodeParams,
    buffered: BTreeMap<u64, (CheckpointCertificate, BlockId)>,
}

impl NodeState {
    pub fn new(id: NodeId, params: NodeParams) -> Self {
        NodeState {
            id,
            tree: BlockTree::with_genesis(),
            tip: BlockId::GENESIS,
            last_checkpoint: Checkpoint::genesis(),
            history: vec![Checkpoint::genesis()],
            online: true,
            params,
            buffered: BTreeMap::new(),
        }
    }

    pub fn chain(&self) -> Chain {
        Chain::new(self.tip)
    }

    pub fn height(&self) -> u64 {
        self.tree.height(self.tip).expect("tip is in the local tree")
    }

    /// Inserts `blocks` (parent before child) skipping the ones already known.
    fn absorb(&mut self, blocks: &[Block]) -> Result<(), NodeError> {
        for b in blocks {
            if self.tree.contains(b.id) {
                continue;
            }
            self.tree.append(b.clone()).map_err(NodeError::DisconnectedChain)?;
        }
        Ok(())
    }

    fn contains_checkpoint(&self, tip: BlockId) -> bool {
        self.tree.is_descendant(self.last_checkpoint.block, tip).unwrap_or(false)
    }

    /// Handles a chain announcement for `tip`; `blocks` must fill every gap
    /// between the local tree and `tip`.
    pub fn on_receive_chain(
        &mut self,
        tip: BlockId,
        blocks: &[Block],
        tie: &mut dyn TieBreaker,
    ) -> Result<Option<TipChange>, NodeError> {
        self.absorb(blocks)?;
        let new_height = self.tree.height(tip).map_err(NodeError::DisconnectedChain)?;
        if tip == self.tip || (self.params.enforce_p2 && !self.contains_checkpoint(tip)) {
            return Ok(None);
        }
        let cur_height = self.height();
        let chosen = if new_height > cur_height {
            tip
        } else if new_height == cur_height {
            tie.choose(self.id, self.tip, &[self.tip, tip], &self.tree)
        } else {
            self.tip
        };
        Ok(self.switch_to(chosen))
    }

    fn switch_to(&mut self, tip: BlockId) -> Option<TipChange> {
        if tip == self.tip {
            return None;
        }
        let change = TipChange { old_tip: self.tip, new_tip: tip };
        self.tip = tip;
        Some(change)
    }

    /// Processes a checkpoint certificate together with the certified chain.
    pub fn on_receive_checkpoint(
        &mut self,
        cert: &CheckpointCertificate,
        blocks: &[Block],
        tie: &mut dyn TieBreaker,
    ) -> Result<CheckpointOutcome, NodeError> {
        let value_tip = cert.verify(self.params.quorum).map_err(NodeError::BadCertificate)?;
        if cert.iteration <= self.last_checkpoint.iteration {
            return Err(NodeError::StaleIteration(cert.iteration));
        }
        self.absorb(blocks)?;
        self.tree.height(value_tip).map_err(NodeError::DisconnectedChain)?;
        self.buffered.entry(cert.iteration).or_insert_with(|| (cert.clone(), value_tip));

        let old_tip = self.tip;
        let mut applied = Vec::new();
        while let Some((cert, value_tip)) = self.buffered.remove(&(self.last_checkpoint.iteration + 1)) {
            let block = self
                .tree
                .block_at_depth(Chain::new(value_tip), self.params.checkpoint_depth)
                .map_err(NodeError::ChainTooShort)?;
            if !self.tree.is_descendant(self.last_checkpoint.block, block).unwrap_or(false) {
                return Err(NodeError::NonMonotoneCheckpoint {
                    iteration: cert.iteration,
                    block,
                    previous: self.last_checkpoint.block,
                });
            }
            let cp = Checkpoint { iteration: cert.iteration, block };
            self.last_checkpoint = cp;
            self.history.push(cp);
            applied.push(cp);
        }
        if !applied.is_empty() && self.params.enforce_p2 {
            let best = self.longest_containing_checkpoint(tie);
            self.tip = best;
        }
        let tip_change = (self.tip != old_tip).then_some(TipChange { old_tip, new_tip: self.tip });
        Ok(CheckpointOutcome { applied, tip_change })
    }

    /// Tip of the longest locally known chain through the last checkpoint.
    fn longest_containing_checkpoint(&self, tie: &mut dyn TieBreaker) -> BlockId {
        let mut best_height = 0;
        let mut best = Vec::new();
        let mut stack = vec![self.last_checkpoint.block];
        while let Some(id) = stack.pop() {
            let h = self.tree.height(id).expect("descendants are local");
            if h > best_height || best.is_empty() {
                best_height = h;
                best.clear();
            }
            if h == best_height {
                best.push(id);
            }
            stack.extend_from_slice(self.tree.children(id));
        }
        if best.contains(&self.tip) {
            return self.tip;
        }
        if best.len() == 1 {
            return best[0];
        }
        best.sort();
        tie.choose(self.id, self.tip, &best, &self.tree)
    }

    /// Mines on the current tip; the caller assigns the id.
    pub fn mine(&mut self, id: BlockId, now: SimTime) -> Result<Block, NodeError> {
        if !self.online {
            return Err(NodeError::Offline);
        }
        let block = Block::new(id, self.tip, now, self.id, MinerKind::Honest);
        let block = self.tree.append(block).map_err(NodeError::DisconnectedChain)?.clone();
        self.tip = block.id;
        Ok(block)
    }

    /// C1: the chain up to the last checkpoint.
    pub fn confirm_fin(&self) -> Chain {
        Chain::new(self.last_checkpoint.block)
    }

    /// C2: the current chain without its last k′ blocks.
    pub fn confirm_ada(&self) -> Chain {
        self.tree.drop_last(self.chain(), self.params.k_prime)
    }

    /// Blocks of a confirmed chain, genesis first.
    pub fn confirmed_blocks(&self, chain: Chain) -> Vec<BlockId> {
        self.tree.path(chain.tip).expect("confirmed chains are local")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::{Value, Vote, VoteKind};

    const PARAMS: NodeParams = NodeParams { checkpoint_depth: 2, k_prime: 2, quorum: 3, enforce_p2: true };

    fn block(id: u64, parent: u64) -> Block {
        Block::new(BlockId(id), BlockId(parent), id as f64, NodeId(9), MinerKind::Honest)
    }

    fn cert(iteration: u64, tip: u64, voters: u32) -> CheckpointCertificate {
        let value = Value::Chain(BlockId(tip));
        let votes = (0..voters)
            .map(|v| Vote { kind: VoteKind::Cert, value, iteration, period: 1, voter: NodeId(100 + v) })
            .collect();
        CheckpointCertificate { iteration, period: 1, value, votes }
    }

    fn node_with(blocks: &[(u64, u64)]) -> NodeState {
        let mut n = NodeState::new(NodeId(0), PARAMS);
        let bs: Vec<Block> = blocks.iter().map(|&(i, p)| block(i, p)).collect();
        let tip = bs.last().unwrap().id;
        n.on_receive_chain(tip, &bs, &mut KeepIncumbent).unwrap();
        n
    }

    #[test]
    fn adopts_longer_chain() {
        let mut n = node_with(&[(1, 0), (2, 1)]);
        let change = n.on_receive_chain(BlockId(3), &[block(3, 2)], &mut KeepIncumbent).unwrap();
        assert_eq!(change, Some(TipChange { old_tip: BlockId(2), new_tip: BlockId(3) }));
    }

    #[test]
    fn ignores_chain_without_checkpoint() {
        // G–1–2–3–4 with checkpoint 2 (2-deep in 4), then a longer fork from genesis.
        let mut n = node_with(&[(1, 0), (2, 1), (3, 2), (4, 3)]);
        n.on_receive_checkpoint(&cert(1, 4, 3), &[], &mut KeepIncumbent).unwrap();
        assert_eq!(n.last_checkpoint.block, BlockId(2));
        let fork: Vec<Block> =
            [(10, 0), (11, 10), (12, 11), (13, 12), (14, 13)].iter().map(|&(i, p)| block(i, p)).collect();
        assert_eq!(n.on_receive_chain(BlockId(14), &fork, &mut KeepIncumbent).unwrap(), None);
        assert_eq!(n.tip, BlockId(4));
    }

    #[test]
    fn tie_keeps_incumbent() {
        let mut n = node_with(&[(1, 0), (2, 1)]);
        assert_eq!(n.on_receive_chain(BlockId(3), &[block(3, 1)], &mut KeepIncumbent).unwrap(), None);
        assert_eq!(n.tip, BlockId(2));
    }

    #[test]
    fn checkpoint_on_shorter_fork_truncates() {
        // A: 10-block chain 1..=9 off genesis; B: 7-block chain 20..=25.
        let mut a: Vec<(u64, u64)> = vec![(1, 0)];
        a.extend((2..=9).map(|i| (i, i - 1)));
        let mut n = node_with(&a);
        assert_eq!(n.height(), 9);
        let mut fork = vec![block(20, 0)];
        fork.extend((21..=25).map(|i| block(i, i - 1)));
        let out = n.on_receive_checkpoint(&cert(1, 25, 3), &fork, &mut KeepIncumbent).unwrap();
        assert_eq!(out.applied, vec![Checkpoint { iteration: 1, block: BlockId(23) }]);
        assert_eq!(out.tip_change, Some(TipChange { old_tip: BlockId(9), new_tip: BlockId(25) }));
        assert_eq!(n.tree.chain_len(n.chain()).unwrap(), 7);
    }

    #[test]
    fn checkpoint_on_own_chain_keeps_tip() {
        let mut n = node_with(&[(1, 0), (2, 1), (3, 2), (4, 3)]);
        let out = n.on_receive_checkpoint(&cert(1, 3, 3), &[], &mut KeepIncumbent).unwrap();
        assert_eq!(out.tip_change, None);
        assert_eq!(n.last_checkpoint, Checkpoint { iteration: 1, block: BlockId(1) });
    }

    #[test]
    fn certificate_checks() {
        let mut n = node_with(&[(1, 0), (2, 1), (3, 2), (4, 3)]);
        assert!(matches!(
            n.on_receive_checkpoint(&cert(1, 4, 2), &[], &mut KeepIncumbent),
            Err(NodeError::BadCertificate(_))
        ));
        n.on_receive_checkpoint(&cert(1, 4, 3), &[], &mut KeepIncumbent).unwrap();
        assert_eq!(n.on_receive_checkpoint(&cert(1, 4, 3), &[], &mut KeepIncumbent), Err(NodeError::StaleIteration(1)));
        let fork = [block(10, 0), block(11, 10), block(12, 11)];
        assert!(matches!(
            n.on_receive_checkpoint(&cert(2, 12, 3), &fork, &mut KeepIncumbent),
            Err(NodeError::NonMonotoneCheckpoint { .. })
        ));
    }

    #[test]
    fn out_of_order_checkpoints_are_buffered() {
        let mut n = node_with(&[(1, 0), (2, 1), (3, 2), (4, 3), (5, 4)]);
        let out = n.on_receive_checkpoint(&cert(2, 5, 3), &[], &mut KeepIncumbent).unwrap();
        assert!(out.applied.is_empty());
        let out = n.on_receive_checkpoint(&cert(1, 4, 3), &[], &mut KeepIncumbent).unwrap();
        assert_eq!(out.applied.iter().map(|c| c.iteration).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(n.last_checkpoint.block, BlockId(3));
    }

    #[test]
    fn mining_and_confirmation() {
        let mut n = node_with(&[(1, 0), (2, 1), (3, 2), (4, 3)]);
        assert_eq!(n.confirm_fin(), Chain::genesis());
        assert_eq!(n.confirmed_blocks(n.confirm_ada()), vec![BlockId(0), BlockId(1), BlockId(2)]);
        let b = n.mine(BlockId(5), 7.0).unwrap();
        assert_eq!(b.height, 5);
        n.on_receive_checkpoint(&cert(1, 4, 3), &[], &mut KeepIncumbent).unwrap();
        assert_eq!(n.confirmed_blocks(n.confirm_fin()), vec![BlockId(0), BlockId(1), BlockId(2)]);
        n.online = false;
        assert_eq!(n.mine(BlockId(6), 8.0), Err(NodeError::Offline));
        let short = NodeState::new(NodeId(1), PARAMS);
        assert_eq!(short.confirm_ada(), Chain::genesis());
    }
}
