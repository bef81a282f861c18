//! Deterministic lowering order: which block each node is emitted in and
//! the statement order inside every block.
//!
//! Placement starts at the block a node was staged in. Pure speculation-
//! safe nodes then migrate outward through loop and while bodies as long
//! as their operands remain available, so loop-invariant arithmetic is
//! computed once; nothing ever crosses an if-branch (it might not
//! execute) or a function boundary (it would capture). Within a block,
//! statements are ordered by a dependency topological sort with the
//! smallest node id first among ready nodes, and every node with an
//! effect is additionally chained in staging order, which keeps reads,
//! writes and io exactly as staged.

use crate::types::*;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Clone, Debug)]
pub struct Schedule {
    /// Block whose body emits each node (= the staging scope unless the
    /// node was hoisted).
    pub placement: Vec<NodeId>,
    /// Statement order per block id (empty for non-block ids).
    pub order: Vec<Vec<NodeId>>,
}

/// Nodes rendered inline at their uses rather than as statements:
/// constants, blocks (owned by structural statements), loop indices and
/// parameters (bound by their construct's header).
pub fn is_inline(op: Op) -> bool {
    matches!(
        op,
        Op::Const | Op::ConstArrF | Op::ConstArrI | Op::Block | Op::LoopIdx | Op::Param
    )
}

pub fn schedule(g: &IrGraph) -> Schedule {
    let n = g.len();
    let owners = g.block_owners();

    // Block nesting depth; a block's parent is the scope its node lives in.
    let mut depth = vec![0usize; n];
    for id in g.ids() {
        if id.idx() == 0 {
            continue;
        }
        let node = g.node(id);
        if node.op == Op::Block {
            depth[id.idx()] = depth[node.scope.idx()] + 1;
        }
    }
    let parent = |b: NodeId| -> NodeId { g.node(b).scope };
    let encloses = |a: NodeId, mut b: NodeId| -> bool {
        // True when block `a` is `b` or an ancestor of `b`.
        while depth[b.idx()] > depth[a.idx()] {
            b = parent(b);
        }
        a == b
    };

    // Placement, computed in id order so operand placements are known.
    let mut placement: Vec<NodeId> = (0..n).map(|i| g.node(NodeId(i as u32)).scope).collect();
    for id in g.ids() {
        let node = g.node(id);
        if !node.effect.is_pure()
            || node.op.is_structural()
            || is_inline(node.op)
            || node.op == Op::Call
            || !speculation_safe(g, node)
        {
            continue;
        }
        // Deepest operand placement bounds how far out this node can go.
        let mut avail = g.root();
        for &o in &node.operands {
            match g.node(o).op {
                Op::Const | Op::ConstArrF | Op::ConstArrI => continue,
                _ => {}
            }
            let p = placement[o.idx()];
            if depth[p.idx()] > depth[avail.idx()] {
                avail = p;
            }
        }
        let mut at = node.scope;
        while at != g.root() {
            match g.block_kind(at) {
                BlockKind::LoopBody | BlockKind::WhileBody | BlockKind::WhileCond => {}
                _ => break,
            }
            let outer = parent(at);
            if !encloses(avail, outer) {
                break;
            }
            at = outer;
        }
        placement[id.idx()] = at;
    }

    // Dependency edges, always within a single block's statement list.
    // A use in a nested block turns into an edge to the statement that
    // owns the nesting at the operand's level.
    let mut edges: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut indeg = vec![0u32; n];
    let mut add_edge = |from: NodeId, to: NodeId, indeg: &mut Vec<u32>| {
        edges[from.idx()].push(to.0);
        indeg[to.idx()] += 1;
    };
    for id in g.ids() {
        let node = g.node(id);
        if is_inline(node.op) {
            continue;
        }
        let pu = placement[id.idx()];
        for &o in &node.operands {
            if is_inline(g.node(o).op) {
                continue;
            }
            let po = placement[o.idx()];
            if po == pu {
                add_edge(o, id, &mut indeg);
                continue;
            }
            // Walk the ownership chain up to the operand's block.
            let mut c = pu;
            while let Some(ow) = owners[c.idx()] {
                let pw = g.node(ow).scope;
                if pw == po {
                    add_edge(o, ow, &mut indeg);
                    break;
                }
                c = pw;
            }
        }
    }
    // Staging order chain over effectful statements of each block.
    let mut last_eff: Vec<Option<NodeId>> = vec![None; n];
    for id in g.ids() {
        let node = g.node(id);
        if is_inline(node.op) || node.effect.is_pure() {
            continue;
        }
        let p = placement[id.idx()];
        if let Some(prev) = last_eff[p.idx()] {
            add_edge(prev, id, &mut indeg);
        }
        last_eff[p.idx()] = Some(id);
    }

    // Per-block topological sort, smallest ready id first.
    let mut by_block: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for id in g.ids() {
        if id.idx() == 0 || is_inline(g.node(id).op) {
            continue;
        }
        by_block[placement[id.idx()].idx()].push(id);
    }
    let mut order: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for b in g.ids() {
        if by_block[b.idx()].is_empty() {
            continue;
        }
        let mut heap: BinaryHeap<Reverse<u32>> = by_block[b.idx()]
            .iter()
            .filter(|m| indeg[m.idx()] == 0)
            .map(|m| Reverse(m.0))
            .collect();
        let mut out = Vec::with_capacity(by_block[b.idx()].len());
        while let Some(Reverse(m)) = heap.pop() {
            let m = NodeId(m);
            out.push(m);
            for &t in &edges[m.idx()] {
                let t = NodeId(t);
                indeg[t.idx()] -= 1;
                if indeg[t.idx()] == 0 {
                    heap.push(Reverse(t.0));
                }
            }
        }
        debug_assert_eq!(
            out.len(),
            by_block[b.idx()].len(),
            "dependency cycle in block {}",
            b
        );
        order[b.idx()] = out;
    }

    Schedule { placement, order }
}

/// Whether executing the node more or less often than staged can change
/// observable behavior. Integer division and remainder trap on a zero
/// divisor, so they only move with a provably nonzero constant divisor;
/// float division is total.
fn speculation_safe(g: &IrGraph, node: &IrNode) -> bool {
    match node.op {
        Op::Div | Op::Rem => {
            let d = g.node(node.operands[1]);
            match (d.op, d.imms.first()) {
                (Op::Const, Some(Imm::F(_))) => true,
                (Op::Const, Some(Imm::I(v))) => *v != 0,
                _ => false,
            }
        }
        _ => true,
    }
}
