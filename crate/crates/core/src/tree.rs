//! Draft token tree.
//!
//! Nodes live in an arena; children are linked first-child/next-sibling in
//! insertion order. Children of one parent always carry distinct tokens
//! (inserting a duplicate returns the existing node), so verification can
//! descend greedily. Only leaves are active: a node is deactivated once it
//! is expanded or its chain continues through it.

use alloc::vec::Vec;

use crate::hierarchy::{CandidateRow, Token, TokenStream};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default node budget of one tree, root included.
pub const DEFAULT_MAX_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TreeNode {
    pub token: Token,
    pub parent: Option<NodeId>,
    /// Configuration that drafted the node; `None` for the root.
    pub config: Option<usize>,
    pub edge_alpha: f64,
    pub p_acc: f64,
    pub active: bool,
    pub depth: u32,
    first_child: Option<NodeId>,
    last_child: Option<NodeId>,
    next_sibling: Option<NodeId>,
}

/// Result of verifying a tree against the target stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// Accepted nodes from the first drafted token down, root excluded.
    pub path: Vec<NodeId>,
    pub bonus: Token,
}

impl Verdict {
    pub fn accepted(&self) -> usize {
        self.path.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
    max_size: usize,
}

impl DraftTree {
    /// A root-only tree. `max_size` counts the root and is at least 1.
    pub fn new(root_token: Token, max_size: usize) -> Self {
        let mut tree = Self { nodes: Vec::with_capacity(max_size.max(1)), max_size: max_size.max(1) };
        tree.reset(root_token);
        tree
    }

    /// Drops every node but a fresh root.
    pub fn reset(&mut self, root_token: Token) {
        self.nodes.clear();
        self.nodes.push(TreeNode {
            token: root_token,
            parent: None,
            config: None,
            edge_alpha: 1.0,
            p_acc: 1.0,
            active: true,
            depth: 0,
            first_child: None,
            last_child: None,
            next_sibling: None,
        });
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn is_full(&self) -> bool {
        self.nodes.len() >= self.max_size
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, id: NodeId) -> Children<'_> {
        Children { tree: self, next: self.node(id).first_child }
    }

    pub fn deactivate(&mut self, id: NodeId) {
        self.nodes[id.index()].active = false;
    }

    /// Tokens from the first drafted node down to `id` inclusive.
    pub fn path_tokens(&self, id: NodeId, out: &mut Vec<Token>) {
        out.clear();
        let mut cur = id;
        while let Some(parent) = self.node(cur).parent {
            out.push(self.node(cur).token);
            cur = parent;
        }
        out.reverse();
    }

    /// Active node with the largest `p_acc`, earliest inserted on ties.
    pub fn best_active_leaf(&self) -> Option<NodeId> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.active && best.is_none_or(|(_, p)| n.p_acc > p) {
                best = Some((i, n.p_acc));
            }
        }
        best.map(|(i, _)| NodeId(i as u32))
    }

    /// Adds `token` under `parent`, or returns the existing child with that
    /// token. The flag is true for a new node.
    pub fn add_child(&mut self, parent: NodeId, token: Token, edge_alpha: f64, config: usize) -> Result<(NodeId, bool)> {
        if let Some(existing) = self.children(parent).find(|&c| self.node(c).token == token) {
            return Ok((existing, false));
        }
        if self.is_full() {
            return Err(Error::TreeFull { max_size: self.max_size });
        }
        let id = NodeId(self.nodes.len() as u32);
        let p = &self.nodes[parent.index()];
        let node = TreeNode {
            token,
            parent: Some(parent),
            config: Some(config),
            edge_alpha,
            p_acc: p.p_acc * edge_alpha,
            active: true,
            depth: p.depth + 1,
            first_child: None,
            last_child: None,
            next_sibling: None,
        };
        match p.last_child {
            Some(last) => self.nodes[last.index()].next_sibling = Some(id),
            None => self.nodes[parent.index()].first_child = Some(id),
        }
        self.nodes[parent.index()].last_child = Some(id);
        self.nodes.push(node);
        Ok((id, true))
    }

    /// Appends a chain below `parent`, truncated at the size budget. Returns
    /// the chain's nodes (existing ones included when a token merges into a
    /// child that was already there).
    pub fn add_chain(&mut self, parent: NodeId, tokens: &[Token], edge_alphas: &[f64], config: usize) -> Vec<NodeId> {
        debug_assert_eq!(tokens.len(), edge_alphas.len());
        let mut out = Vec::with_capacity(tokens.len());
        let mut cur = parent;
        for (&t, &a) in tokens.iter().zip(edge_alphas) {
            match self.add_child(cur, t, a, config) {
                Ok((id, _)) => {
                    self.deactivate(cur);
                    out.push(id);
                    cur = id;
                }
                Err(_) => break,
            }
        }
        out
    }

    /// Like [`add_chain`](Self::add_chain), additionally hanging each row's
    /// alternatives with probability at least `top_p` (at most `top_k - 1` of
    /// them) as siblings of that row's main token. Returns the main chain and
    /// the sibling nodes.
    pub fn sibling_expand(
        &mut self,
        parent: NodeId,
        rows: &[CandidateRow],
        main_alphas: &[f64],
        top_p: f64,
        top_k: usize,
        config: usize,
    ) -> (Vec<NodeId>, Vec<NodeId>) {
        debug_assert_eq!(rows.len(), main_alphas.len());
        let mut chain = Vec::with_capacity(rows.len());
        let mut siblings = Vec::new();
        let mut cur = parent;
        'rows: for (row, &a) in rows.iter().zip(main_alphas) {
            let Ok((main, _)) = self.add_child(cur, row.tokens[0], a, config) else {
                break;
            };
            self.deactivate(cur);
            chain.push(main);
            let alts = row.tokens.iter().zip(&row.probs).take(top_k.max(1)).skip(1);
            for (&t, &p) in alts.filter(|&(_, &p)| p >= top_p) {
                match self.add_child(cur, t, p, config) {
                    Ok((id, true)) => siblings.push(id),
                    Ok((_, false)) => {}
                    Err(_) => break 'rows,
                }
            }
            cur = main;
        }
        (chain, siblings)
    }

    /// Greedy descent along children that match the stream from `position`
    /// on (the root stands for the token just before `position`).
    pub fn verify(&self, truth: &TokenStream, position: usize) -> Result<Verdict> {
        let tokens = truth.tokens();
        let mut path = Vec::new();
        let mut cur = NodeId::ROOT;
        loop {
            let at = position + path.len();
            let Some(&expected) = tokens.get(at) else {
                return Err(Error::Overflow { position, len: path.len() + 1, stream_len: tokens.len() });
            };
            match self.children(cur).find(|&c| self.node(c).token == expected) {
                Some(next) => {
                    path.push(next);
                    cur = next;
                }
                None => return Ok(Verdict { path, bonus: expected }),
            }
        }
    }

    /// True iff every node's `p_acc` is its parent's times its edge value.
    pub fn audit(&self) -> bool {
        self.nodes.iter().all(|n| match n.parent {
            None => n.p_acc == 1.0,
            Some(p) => {
                let want = self.node(p).p_acc * n.edge_alpha;
                (n.p_acc - want).abs() <= 1e-12 * want.max(1.0)
            }
        })
    }
}

/// Iterator over a node's children in insertion order.
pub struct Children<'a> {
    tree: &'a DraftTree,
    next: Option<NodeId>,
}

impl Iterator for Children<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        let cur = self.next?;
        self.next = self.tree.node(cur).next_sibling;
        Some(cur)
    }
}

/// `verify` as a free function.
pub fn verify_tree(tree: &DraftTree, truth: &TokenStream, position: usize) -> Result<Verdict> {
    tree.verify(truth, position)
}
