//! Whole-graph optimization: merge/fold replay, call inlining, and
//! effect-aware dead code elimination.
//!
//! The graph is append-only, so every transformation is a rebuild: nodes
//! are replayed into a fresh builder in staging order, which re-runs
//! folding and scope-keyed CSE with full knowledge (constants propagated
//! through inlined calls fold at their use sites, conditionals on
//! constants keep only the taken branch). A mark pass then finds what is
//! live — effectful nodes in executed blocks, plus their operand closure
//! — and a second replay drops the rest and renumbers densely. Running
//! the whole pipeline twice yields byte-identical serialized graphs.

use crate::stage::{func_imms, func_meta, ExtEff, StageError, Stager};
use crate::types::*;
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    /// Calls to functions whose body has at most this many nodes are
    /// replaced by a copy of the body (unless the definition opted out).
    pub inline_max: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { inline_max: 32 }
    }
}

pub fn optimize(g: &IrGraph, cfg: &OptimizeConfig) -> Result<IrGraph, StageError> {
    let merged = rebuild(g, cfg.inline_max, None)?;
    let keep = mark_live(&merged);
    rebuild(&merged, 0, Some(&keep))
}

/// Blocks owned by a structural node, in operand order.
pub(crate) fn owned_blocks(g: &IrGraph, n: NodeId) -> Vec<NodeId> {
    let node = g.node(n);
    match node.op {
        Op::If => vec![node.operands[1], node.operands[2]],
        Op::Loop => vec![node.operands[1]],
        Op::While => vec![node.operands[0], node.operands[2]],
        Op::FuncDef => vec![node.operands[0]],
        _ => vec![],
    }
}

/// Liveness: a node is needed if it writes or performs io inside a block
/// that actually executes, or if a needed node depends on it. Blocks
/// execute when their owner is needed; function bodies execute only when
/// some call reaches the definition, so uncalled functions disappear
/// together with any io they contain.
fn mark_live(g: &IrGraph) -> Vec<bool> {
    let members = g.members_by_scope();
    let mut needed = vec![false; g.len()];
    let mut executed = vec![false; g.len()];
    let mut need_stack: Vec<NodeId> = Vec::new();
    let mut exec_stack: Vec<NodeId> = vec![g.root()];
    loop {
        if let Some(b) = exec_stack.pop() {
            if !executed[b.idx()] {
                executed[b.idx()] = true;
                for &m in &members[b.idx()] {
                    if matches!(g.node(m).effect, Effect::Write(_) | Effect::Global) {
                        need_stack.push(m);
                    }
                }
            }
            continue;
        }
        let Some(n) = need_stack.pop() else { break };
        if needed[n.idx()] {
            continue;
        }
        needed[n.idx()] = true;
        need_stack.extend(g.node(n).operands.iter().copied());
        exec_stack.extend(owned_blocks(g, n));
    }
    needed
}

/// Replays `src` into a fresh builder. `inline_max` enables call
/// inlining; `keep` (from the mark pass) drops unmarked nodes. Returns
/// the rebuilt, densely renumbered graph.
fn rebuild(src: &IrGraph, inline_max: usize, keep: Option<&[bool]>) -> Result<IrGraph, StageError> {
    let mut rb = Rebuilder {
        src,
        members: src.members_by_scope(),
        dst: Stager::new(),
        base: vec![None; src.len()],
        frames: Vec::new(),
        inline_max,
        keep,
    };
    rb.base[src.root().idx()] = Some(NodeId(0));
    rb.copy_block_members(src.root())?;
    Ok(rb.dst.finish())
}

struct Rebuilder<'s> {
    src: &'s IrGraph,
    members: Vec<Vec<NodeId>>,
    dst: Stager,
    /// old id -> new id for nodes copied outside any inline expansion.
    base: Vec<Option<NodeId>>,
    /// Binding frames for active inline expansions: the same source node
    /// gets a distinct copy per call site.
    frames: Vec<HashMap<NodeId, NodeId>>,
    inline_max: usize,
    keep: Option<&'s [bool]>,
}

impl<'s> Rebuilder<'s> {
    fn lookup(&self, old: NodeId) -> Option<NodeId> {
        for f in self.frames.iter().rev() {
            if let Some(&n) = f.get(&old) {
                return Some(n);
            }
        }
        self.base[old.idx()]
    }

    fn get(&self, old: NodeId) -> Result<NodeId, StageError> {
        self.lookup(old).ok_or_else(|| {
            StageError::Internal(format!("node {} referenced before being rebuilt", old))
        })
    }

    fn bind(&mut self, old: NodeId, new: NodeId) {
        if let Some(f) = self.frames.last_mut() {
            f.insert(old, new);
        } else {
            self.base[old.idx()] = Some(new);
        }
    }

    /// Whether this node was already copied in the current binding
    /// context. Inline expansions must not be fooled by the bindings the
    /// definition copy left in the base map: each call site re-copies the
    /// body into its own frame.
    fn bound_here(&self, old: NodeId) -> bool {
        match self.frames.last() {
            Some(f) => f.contains_key(&old),
            None => self.base[old.idx()].is_some(),
        }
    }

    fn copy_block_members(&mut self, old_blk: NodeId) -> Result<(), StageError> {
        let members = self.members[old_blk.idx()].clone();
        for m in members {
            self.copy_member(m)?;
        }
        Ok(())
    }

    fn copy_member(&mut self, m: NodeId) -> Result<(), StageError> {
        if let Some(k) = self.keep {
            if !k[m.idx()] {
                return Ok(());
            }
        }
        if self.bound_here(m) {
            // Parameters and inline argument bindings arrive pre-mapped.
            return Ok(());
        }
        let node = self.src.node(m);
        match node.op {
            // Blocks are copied by their owning structural node.
            Op::Block => Ok(()),
            Op::If => self.copy_if(m),
            Op::Loop => self.copy_loop(m),
            Op::While => self.copy_while(m),
            Op::FuncDef => self.copy_funcdef(m),
            Op::Call => self.copy_call(m),
            _ => self.copy_plain(m),
        }
    }

    fn copy_plain(&mut self, m: NodeId) -> Result<(), StageError> {
        let node = self.src.node(m).clone();
        let ops: Vec<NodeId> = node
            .operands
            .iter()
            .map(|&o| self.get(o))
            .collect::<Result<_, _>>()?;
        let new = match node.effect {
            Effect::Pure => {
                if node.op.is_scalar_prim() {
                    self.dst.prim_raw(node.op, ops)?
                } else {
                    self.dst.cse_node(node.op, ops, node.imms, None)?
                }
            }
            Effect::Read(r) => {
                let nr = self.get(r)?;
                self.dst.cse_node(node.op, ops, node.imms, Some(nr))?
            }
            Effect::Write(r) if r == m => self.dst.alloc_node(node.op, ops, node.imms)?,
            Effect::Write(r) => {
                let nr = self.get(r)?;
                self.dst.write_node(node.op, ops, node.imms, nr)?
            }
            Effect::Global => self.dst.global_node(node.op, ops, node.imms)?,
        };
        self.bind(m, new);
        Ok(())
    }

    fn copy_if(&mut self, m: NodeId) -> Result<(), StageError> {
        let node = self.src.node(m).clone();
        let cond = self.get(node.operands[0])?;
        let has_result = node.operands.len() == 5;
        if let Some(Imm::B(c)) = self.dst.const_imm_of(cond).cloned() {
            // Constant condition: splice the taken branch into the
            // current scope; the untaken branch is never visited.
            let taken_blk = node.operands[if c { 1 } else { 2 }];
            self.copy_block_members(taken_blk)?;
            let res = if has_result {
                self.get(node.operands[if c { 3 } else { 4 }])?
            } else {
                NodeId(0)
            };
            self.bind(m, res);
            return Ok(());
        }
        let tb = self.dst.begin_block(BlockKind::IfThen)?;
        self.bind(node.operands[1], tb);
        self.copy_block_members(node.operands[1])?;
        let text = self.dst.pop_block(true);
        let eb = self.dst.begin_block(BlockKind::IfElse)?;
        self.bind(node.operands[2], eb);
        self.copy_block_members(node.operands[2])?;
        let eext = self.dst.pop_block(true);
        let effect = text.union(eext).condense();
        let mut operands = vec![cond, tb, eb];
        if has_result {
            operands.push(self.get(node.operands[3])?);
            operands.push(self.get(node.operands[4])?);
        }
        let new = self.dst.add_node(Op::If, operands, vec![], effect, &[tb, eb])?;
        self.bind(m, new);
        Ok(())
    }

    fn copy_loop(&mut self, m: NodeId) -> Result<(), StageError> {
        let node = self.src.node(m).clone();
        let count = self.get(node.operands[0])?;
        let blk = self.dst.begin_block(BlockKind::LoopBody)?;
        self.bind(node.operands[1], blk);
        self.copy_block_members(node.operands[1])?;
        let ext = self.dst.pop_block(true);
        let new = self
            .dst
            .add_node(Op::Loop, vec![count, blk], vec![], ext.condense(), &[blk])?;
        self.bind(m, new);
        Ok(())
    }

    fn copy_while(&mut self, m: NodeId) -> Result<(), StageError> {
        let node = self.src.node(m).clone();
        let cb = self.dst.begin_block(BlockKind::WhileCond)?;
        self.bind(node.operands[0], cb);
        self.copy_block_members(node.operands[0])?;
        let cext = self.dst.pop_block(true);
        let cv = self.get(node.operands[1])?;
        let bb = self.dst.begin_block(BlockKind::WhileBody)?;
        self.bind(node.operands[2], bb);
        self.copy_block_members(node.operands[2])?;
        let bext = self.dst.pop_block(true);
        let effect = cext.union(bext).condense();
        let new = self
            .dst
            .add_node(Op::While, vec![cb, cv, bb], vec![], effect, &[cb, bb])?;
        self.bind(m, new);
        Ok(())
    }

    fn copy_funcdef(&mut self, m: NodeId) -> Result<(), StageError> {
        let meta = func_meta(self.src, m);
        let blk = self.dst.begin_block(BlockKind::FuncBody)?;
        self.bind(meta.body_block, blk);
        let mut new_params = Vec::with_capacity(meta.params.len());
        for &p in &meta.params {
            let imms = self.src.node(p).imms.clone();
            let np = self
                .dst
                .add_node(Op::Param, vec![blk], imms, Effect::Pure, &[])?;
            self.bind(p, np);
            new_params.push(np);
        }
        self.copy_block_members(meta.body_block)?;
        let ext = self.dst.pop_block(false);
        let body_size = self.dst.graph().len() - blk.idx() - 1;
        let mut operands = vec![blk];
        operands.extend(new_params);
        if let Some(r) = meta.result_node {
            operands.push(self.get(r)?);
        }
        let imms = func_imms(
            &meta.name,
            meta.params.len(),
            meta.no_inline,
            &meta.result,
            &ext,
            body_size,
        );
        let new = self
            .dst
            .add_node(Op::FuncDef, operands, imms, Effect::Pure, &[blk])?;
        self.bind(m, new);
        Ok(())
    }

    fn copy_call(&mut self, m: NodeId) -> Result<(), StageError> {
        let node = self.src.node(m).clone();
        let old_f = node.operands[0];
        let new_f = self.get(old_f)?;
        let args: Vec<NodeId> = node.operands[1..]
            .iter()
            .map(|&a| self.get(a))
            .collect::<Result<_, _>>()?;
        // Inline decisions read the rebuilt definition: its body size
        // already reflects merging and folding inside the callee.
        let meta = func_meta(self.dst.graph(), new_f);
        if self.keep.is_none() && !meta.no_inline && meta.body_size <= self.inline_max {
            let src_meta = func_meta(self.src, old_f);
            let frame: HashMap<NodeId, NodeId> = src_meta
                .params
                .iter()
                .copied()
                .zip(args.iter().copied())
                .collect();
            self.frames.push(frame);
            self.copy_block_members(src_meta.body_block)?;
            let res = match src_meta.result_node {
                Some(r) => self.get(r)?,
                None => NodeId(0),
            };
            self.frames.pop();
            self.bind(m, res);
            return Ok(());
        }
        let param_pos: HashMap<NodeId, usize> = meta
            .params
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i))
            .collect();
        let map_region = |r: NodeId| -> NodeId {
            match param_pos.get(&r) {
                Some(&i) => args[i],
                None => r,
            }
        };
        let ext = ExtEff {
            reads: meta.ext_reads.iter().map(|&r| map_region(r)).collect(),
            writes: meta.ext_writes.iter().map(|&w| map_region(w)).collect(),
            global: meta.ext_global,
        };
        let mut operands = vec![new_f];
        operands.extend(args);
        let new = self.dst.emit_effectful_call(operands, &ext, &meta.result)?;
        self.bind(m, new);
        Ok(())
    }
}
