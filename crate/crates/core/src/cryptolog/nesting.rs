//! Linking operations whose ciphertext is carried inside another
//! operation's plaintext.

use std::collections::{BTreeSet, VecDeque};

use super::assemble::CryptoOperation;
use crate::ingest::compress::{decompressed, DEFAULT_CAP};
use crate::search::Dictionary;

/// Shorter ciphertexts are too likely to occur by chance.
pub const MIN_NESTED_CIPHERTEXT: usize = 16;

/// Nested chains deeper than this are not followed.
pub const MAX_CHAIN_DEPTH: usize = 16;

fn find_cycle(n: usize, adj: &[Vec<usize>]) -> Option<Vec<(usize, usize)>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&succ) = adj[node].get(*next) {
                *next += 1;
                match color[succ] {
                    0 => {
                        color[succ] = 1;
                        parent[succ] = node;
                        stack.push((succ, 0));
                    }
                    1 => {
                        let mut cycle = vec![(node, succ)];
                        let mut cur = node;
                        while cur != succ {
                            cycle.push((parent[cur], cur));
                            cur = parent[cur];
                        }
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Sets `children`, `parent_op` and `depth` on every operation. An edge
/// A → B exists when A's plaintext, or its decompressed form, contains B's
/// ciphertext (at least [`MIN_NESTED_CIPHERTEXT`] bytes). Containment
/// cycles are broken at their most recent edge and both ends flagged.
/// Returns one note per broken cycle.
///
/// Operations must be indexed by `op_id`.
pub fn detect_nested_chains(ops: &mut [CryptoOperation]) -> Vec<String> {
    let n = ops.len();
    debug_assert!(ops.iter().enumerate().all(|(i, o)| o.op_id == i));
    let dict = Dictionary::new(
        ops.iter()
            .enumerate()
            .filter(|(_, o)| o.ciphertext.len() >= MIN_NESTED_CIPHERTEXT)
            .map(|(i, o)| (o.ciphertext.clone(), i)),
    );
    let mut edges = BTreeSet::new();
    if !dict.is_empty() {
        for (a, op) in ops.iter().enumerate() {
            let inflated = decompressed(&op.plaintext, DEFAULT_CAP);
            for hay in std::iter::once(&op.plaintext).chain(inflated.as_ref()) {
                for hit in dict.find_all(hay) {
                    for &b in dict.owners(hit.pattern) {
                        if b != a {
                            edges.insert((a, b));
                        }
                    }
                }
            }
        }
    }

    let mut notes = Vec::new();
    loop {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
        }
        let Some(cycle) = find_cycle(n, &adj) else { break };
        let edge_time = |&(a, b): &(usize, usize)| ops[a].first_ts.max(ops[b].first_ts);
        let latest = *cycle
            .iter()
            .max_by(|x, y| edge_time(x).total_cmp(&edge_time(y)).then(x.cmp(y)))
            .expect("cycle has edges");
        edges.remove(&latest);
        ops[latest.0].anomaly = true;
        ops[latest.1].anomaly = true;
        notes.push(format!(
            "containment cycle between operations {} and {}; edge dropped",
            latest.0, latest.1
        ));
    }

    let mut preds = vec![Vec::new(); n];
    for op in ops.iter_mut() {
        op.children.clear();
        op.parent_op = None;
        op.depth = 1;
    }
    for &(a, b) in &edges {
        ops[a].children.push(b);
        preds[b].push(a);
    }
    let mut depth = vec![0u32; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
    for &r in &queue {
        depth[r] = 1;
    }
    while let Some(a) = queue.pop_front() {
        for &b in &ops[a].children {
            if depth[b] == 0 {
                depth[b] = depth[a] + 1;
                queue.push_back(b);
            }
        }
    }
    for b in 0..n {
        ops[b].depth = depth[b].max(1);
        ops[b].parent_op = preds[b]
            .iter()
            .copied()
            .filter(|&a| depth[a] + 1 == depth[b])
            .min();
    }
    notes
}

/// Every operation reachable from `root` through containment, with the
/// chain of op ids leading to it (outermost first, `root` included).
pub fn nested_chains(ops: &[CryptoOperation], root: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![root]];
    while let Some(chain) = stack.pop() {
        let last = *chain.last().expect("chains are non-empty");
        if chain.len() < MAX_CHAIN_DEPTH {
            for &c in ops[last].children.iter().rev() {
                if !chain.contains(&c) {
                    let mut next = chain.clone();
                    next.push(c);
                    stack.push(next);
                }
            }
        }
        out.push(chain);
    }
    out
}
