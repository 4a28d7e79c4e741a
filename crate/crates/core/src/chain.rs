//! Block-tree storage and chain arithmetic.
//!
//! Every mined block lives in an append-only [`BlockTree`]. A [`Chain`] is just
//! a tip; resolved against a tree it denotes the unique path genesis → tip.
//! Ancestor lookups use a single skip pointer per block, which keeps every
//! depth query logarithmic in the chain height.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Simulation time, measured in the same unit as the network delay bound.
pub type SimTime = f64;

/// Opaque block identifier assigned from a simulation-global counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl BlockId {
    /// Reserved identifier of the genesis block.
    pub const GENESIS: BlockId = BlockId(0);

    pub fn is_genesis(self) -> bool {
        self == Self::GENESIS
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Identifier of a protocol participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Pseudo-node that owns every adversarial mining opportunity.
    pub const ADVERSARY: NodeId = NodeId(u32::MAX);
    /// Miner recorded on the genesis block.
    pub const NOBODY: NodeId = NodeId(u32::MAX - 1);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodeId::ADVERSARY => write!(f, "adversary"),
            NodeId::NOBODY => write!(f, "nobody"),
            NodeId(n) => write!(f, "n{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinerKind {
    Honest,
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent: BlockId,
    pub height: u64,
    pub mine_time: SimTime,
    pub miner: NodeId,
    pub miner_kind: MinerKind,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            id: BlockId::GENESIS,
            parent: BlockId::GENESIS,
            height: 0,
            mine_time: 0.0,
            miner: NodeId::NOBODY,
            miner_kind: MinerKind::Honest,
        }
    }

    /// A block extending `parent`. The height is filled in by the tree on insert.
    pub fn new(id: BlockId, parent: BlockId, mine_time: SimTime, miner: NodeId, miner_kind: MinerKind) -> Self {
        Block { id, parent, height: 0, mine_time, miner, miner_kind }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("parent {parent} of block {block} is not in the tree")]
    UnknownParent { block: BlockId, parent: BlockId },
    #[error("block {0} is already in the tree")]
    DuplicateBlock(BlockId),
    #[error("block {0} is not in the tree")]
    UnknownBlock(BlockId),
    #[error("chain of length {len} has no block {depth} deep")]
    ChainTooShort { len: u64, depth: u64 },
    #[error("the first block of a tree must be genesis, got {0}")]
    MissingGenesis(BlockId),
}

#[derive(Clone, Debug)]
struct Entry {
    block: Block,
    skip: BlockId,
    children: Vec<BlockId>,
}

/// Append-only block DAG rooted at genesis, indexed by [`BlockId`].
#[derive(Clone, Debug, Default)]
pub struct BlockTree {
    entries: Vec<Option<Entry>>,
    len: usize,
}

/// A chain named by its tip. Length is `tip.height + 1` blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chain {
    pub tip: BlockId,
}

impl Chain {
    pub fn new(tip: BlockId) -> Self {
        Chain { tip }
    }

    pub fn genesis() -> Self {
        Chain { tip: BlockId::GENESIS }
    }
}

fn invert_lowest_one(n: u64) -> u64 {
    n & n.wrapping_sub(1)
}

/// Height the skip pointer of a block at `height` jumps to.
fn skip_height(height: u64) -> u64 {
    if height < 2 {
        0
    } else if height & 1 == 1 {
        invert_lowest_one(invert_lowest_one(height - 1)) + 1
    } else {
        invert_lowest_one(height)
    }
}

impl BlockTree {
    /// An empty tree; the first appended block must be genesis.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_genesis() -> Self {
        let mut tree = Self::new();
        tree.append(Block::genesis()).expect("empty tree accepts genesis");
        tree
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn entry(&self, id: BlockId) -> Option<&Entry> {
        self.entries.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.entry(id).is_some()
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.entry(id).map(|e| &e.block)
    }

    fn require(&self, id: BlockId) -> Result<&Entry, ChainError> {
        self.entry(id).ok_or(ChainError::UnknownBlock(id))
    }

    pub fn height(&self, id: BlockId) -> Result<u64, ChainError> {
        Ok(self.require(id)?.block.height)
    }

    pub fn children(&self, id: BlockId) -> &[BlockId] {
        self.entry(id).map(|e| e.children.as_slice()).unwrap_or(&[])
    }

    /// Inserts `block`, recomputing its height from the parent.
    pub fn append(&mut self, mut block: Block) -> Result<&Block, ChainError> {
        if self.contains(block.id) {
            return Err(ChainError::DuplicateBlock(block.id));
        }
        let slot = block.id.0 as usize;
        if self.is_empty() {
            if !block.id.is_genesis() {
                return Err(ChainError::MissingGenesis(block.id));
            }
            block.parent = BlockId::GENESIS;
            block.height = 0;
            block.mine_time = 0.0;
            self.place(slot, Entry { block, skip: BlockId::GENESIS, children: Vec::new() });
            return Ok(self.get(BlockId::GENESIS).unwrap());
        }
        let parent_height = match self.entry(block.parent) {
            Some(p) if !block.id.is_genesis() => p.block.height,
            _ => return Err(ChainError::UnknownParent { block: block.id, parent: block.parent }),
        };
        block.height = parent_height + 1;
        let skip = self.ancestor_at_height(block.parent, skip_height(block.height)).expect("parent is present");
        let (id, parent) = (block.id, block.parent);
        self.place(slot, Entry { block, skip, children: Vec::new() });
        self.entries[parent.0 as usize].as_mut().unwrap().children.push(id);
        Ok(self.get(id).unwrap())
    }

    fn place(&mut self, slot: usize, entry: Entry) {
        if self.entries.len() <= slot {
            self.entries.resize_with(slot + 1, || None);
        }
        self.entries[slot] = Some(entry);
        self.len += 1;
    }

    /// The ancestor of `id` at `height`, or `None` when `id` is unknown or
    /// lower than `height`.
    pub fn ancestor_at_height(&self, id: BlockId, height: u64) -> Option<BlockId> {
        let mut walk = self.entry(id)?;
        if height > walk.block.height {
            return None;
        }
        while walk.block.height > height {
            let h = walk.block.height;
            let h_skip = skip_height(h);
            let h_skip_prev = skip_height(h - 1);
            let take_skip =
                h_skip == height || (h_skip > height && !(h_skip_prev + 2 < h_skip && h_skip_prev >= height));
            let next = if take_skip { walk.skip } else { walk.block.parent };
            walk = self.entry(next).expect("ancestors are present");
        }
        Some(walk.block.id)
    }

    /// True iff `ancestor` lies on the genesis → `descendant` path (reflexive).
    pub fn is_descendant(&self, ancestor: BlockId, descendant: BlockId) -> Result<bool, ChainError> {
        let a = self.require(ancestor)?.block.height;
        self.require(descendant)?;
        Ok(self.ancestor_at_height(descendant, a) == Some(ancestor))
    }

    pub fn chain(&self, tip: BlockId) -> Result<Chain, ChainError> {
        self.require(tip)?;
        Ok(Chain { tip })
    }

    /// Number of blocks in `chain`, genesis included.
    pub fn chain_len(&self, chain: Chain) -> Result<u64, ChainError> {
        Ok(self.height(chain.tip)? + 1)
    }

    /// Drops the last `k` blocks; saturates at genesis.
    pub fn drop_last(&self, chain: Chain, k: u64) -> Chain {
        let h = self.height(chain.tip).expect("chain tip must be in the tree");
        let tip = self.ancestor_at_height(chain.tip, h.saturating_sub(k)).expect("ancestor below tip exists");
        Chain { tip }
    }

    /// The block with exactly `k` descendants in `chain` (the tip is 0-deep).
    pub fn block_at_depth(&self, chain: Chain, k: u64) -> Result<BlockId, ChainError> {
        let h = self.height(chain.tip)?;
        if h < k {
            return Err(ChainError::ChainTooShort { len: h + 1, depth: k });
        }
        Ok(self.ancestor_at_height(chain.tip, h - k).expect("ancestor below tip exists"))
    }

    pub fn is_prefix(&self, c1: Chain, c2: Chain) -> Result<bool, ChainError> {
        self.is_descendant(c1.tip, c2.tip)
    }

    /// Chain ending at the deepest common ancestor of both tips.
    pub fn common_prefix(&self, c1: Chain, c2: Chain) -> Result<Chain, ChainError> {
        let h = self.height(c1.tip)?.min(self.height(c2.tip)?);
        let at = |tip, height| self.ancestor_at_height(tip, height).expect("height within chain");
        // Ancestors agree on [0, lo] and disagree on (hi, h].
        let (mut lo, mut hi) = (0u64, h);
        if at(c1.tip, h) == at(c2.tip, h) {
            return Ok(Chain { tip: at(c1.tip, h) });
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if at(c1.tip, mid) == at(c2.tip, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Chain { tip: at(c1.tip, lo) })
    }

    /// Block ids on the genesis → `tip` path, genesis first.
    pub fn path(&self, tip: BlockId) -> Result<Vec<BlockId>, ChainError> {
        let mut cur = self.require(tip)?;
        let mut out = Vec::with_capacity(cur.block.height as usize + 1);
        loop {
            out.push(cur.block.id);
            if cur.block.id.is_genesis() {
                break;
            }
            cur = self.require(cur.block.parent)?;
        }
        out.reverse();
        Ok(out)
    }

    /// Iterates every block in insertion-independent id order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.entries.iter().filter_map(|e| e.as_ref().map(|e| &e.block))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn honest(id: u64, parent: u64) -> Block {
        Block::new(BlockId(id), BlockId(parent), id as f64, NodeId(0), MinerKind::Honest)
    }

    /// G–1–2–3–4 plus a fork G–5–6 and 2–7.
    fn sample() -> BlockTree {
        let mut t = BlockTree::with_genesis();
        for (id, parent) in [(1, 0), (2, 1), (3, 2), (4, 3), (5, 0), (6, 5), (7, 2)] {
            t.append(honest(id, parent)).unwrap();
        }
        t
    }

    #[test]
    fn append_genesis_and_child() {
        let mut t = BlockTree::new();
        assert_eq!(t.append(Block::genesis()).unwrap().height, 0);
        assert_eq!(t.len(), 1);
        let mut child = honest(1, 0);
        child.height = 99;
        assert_eq!(t.append(child).unwrap().height, 1);
        assert_eq!(t.children(BlockId::GENESIS), &[BlockId(1)]);
    }

    #[test]
    fn append_errors() {
        let mut t = BlockTree::with_genesis();
        assert_eq!(t.append(honest(2, 1)), Err(ChainError::UnknownParent { block: BlockId(2), parent: BlockId(1) }));
        t.append(honest(1, 0)).unwrap();
        assert_eq!(t.append(honest(1, 0)), Err(ChainError::DuplicateBlock(BlockId(1))));
        assert!(matches!(BlockTree::new().append(honest(3, 0)), Err(ChainError::MissingGenesis(_))));
    }

    #[test]
    fn descendant_relation() {
        let t = sample();
        let g = BlockId::GENESIS;
        assert!(t.is_descendant(g, g).unwrap());
        assert!(t.is_descendant(BlockId(1), BlockId(2)).unwrap());
        assert!(!t.is_descendant(BlockId(2), BlockId(1)).unwrap());
        assert!(!t.is_descendant(BlockId(1), BlockId(5)).unwrap());
        assert_eq!(t.is_descendant(BlockId(1), BlockId(42)), Err(ChainError::UnknownBlock(BlockId(42))));
    }

    #[test]
    fn drop_last_and_depth() {
        let t = sample();
        let c = t.chain(BlockId(4)).unwrap(); // length 5
        assert_eq!(t.drop_last(c, 0), c);
        assert_eq!(t.drop_last(c, 2).tip, BlockId(2));
        assert_eq!(t.drop_last(t.chain(BlockId(2)).unwrap(), 10).tip, BlockId::GENESIS);
        assert_eq!(t.block_at_depth(c, 4).unwrap(), BlockId::GENESIS);
        assert_eq!(t.block_at_depth(c, 2).unwrap(), BlockId(2));
        assert_eq!(
            t.block_at_depth(t.chain(BlockId(1)).unwrap(), 5),
            Err(ChainError::ChainTooShort { len: 2, depth: 5 })
        );
    }

    #[test]
    fn prefix_and_common_prefix() {
        let t = sample();
        let ch = |id| t.chain(BlockId(id)).unwrap();
        assert!(t.is_prefix(ch(1), ch(2)).unwrap());
        assert!(!t.is_prefix(ch(2), ch(1)).unwrap());
        assert!(t.is_prefix(ch(3), ch(3)).unwrap());
        assert_eq!(t.common_prefix(ch(4), ch(4)).unwrap(), ch(4));
        assert_eq!(t.common_prefix(ch(4), ch(6)).unwrap().tip, BlockId::GENESIS);
        assert_eq!(t.common_prefix(ch(3), ch(7)).unwrap().tip, BlockId(2));
    }

    /// Random trees as parent vectors: block i+1 hangs off some block ≤ i.
    fn arb_tree() -> impl Strategy<Value = BlockTree> {
        prop::collection::vec(any::<prop::sample::Index>(), 1..120).prop_map(|parents| {
            let mut t = BlockTree::with_genesis();
            for (i, idx) in parents.iter().enumerate() {
                let parent = idx.index(i + 1) as u64;
                t.append(honest(i as u64 + 1, parent)).unwrap();
            }
            t
        })
    }

    fn naive_is_descendant(t: &BlockTree, a: BlockId, d: BlockId) -> bool {
        t.path(d).unwrap().contains(&a)
    }

    proptest! {
        #[test]
        fn skip_pointers_agree_with_parent_walk(t in arb_tree(), x in any::<prop::sample::Index>(), y in any::<prop::sample::Index>()) {
            let n = t.len();
            let (a, b) = (BlockId(x.index(n) as u64), BlockId(y.index(n) as u64));
            prop_assert_eq!(t.is_descendant(a, b).unwrap(), naive_is_descendant(&t, a, b));
            if t.is_descendant(a, b).unwrap() && t.is_descendant(b, a).unwrap() {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn common_prefix_is_deepest_shared(t in arb_tree(), x in any::<prop::sample::Index>(), y in any::<prop::sample::Index>()) {
            let n = t.len();
            let (c1, c2) = (Chain::new(BlockId(x.index(n) as u64)), Chain::new(BlockId(y.index(n) as u64)));
            let cp = t.common_prefix(c1, c2).unwrap();
            prop_assert!(t.is_prefix(cp, c1).unwrap() && t.is_prefix(cp, c2).unwrap());
            let (p1, p2) = (t.path(c1.tip).unwrap(), t.path(c2.tip).unwrap());
            let shared = p1.iter().zip(&p2).take_while(|(a, b)| a == b).count();
            prop_assert_eq!(t.chain_len(cp).unwrap(), shared as u64);
        }

        #[test]
        fn depth_matches_drop_last(t in arb_tree(), x in any::<prop::sample::Index>(), k in 0u64..150) {
            let c = Chain::new(BlockId(x.index(t.len()) as u64));
            match t.block_at_depth(c, k) {
                Ok(b) => prop_assert_eq!(b, t.drop_last(c, k).tip),
                Err(_) => prop_assert!(t.chain_len(c).unwrap() <= k),
            }
        }
    }
}
