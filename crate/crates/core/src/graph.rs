//! Interconnection graph analysis.
//!
//! The signals of the augmented model form a directed graph over eight node
//! groups `{x, u, z_b, z_a, w_b, w_a, x+, y}`. Its adjacency matrix has a
//! fixed zero pattern: `x` and `u` are sources, `x+` and `y` are sinks, the
//! `z` rows read from `x`, `u` and the `w` signals, and the `w` rows read
//! from their own `z` through the component dependence patterns `P_b` and
//! `P_a`. Absence of cycles makes the latent equations solvable by
//! substitution and, together with twice continuous differentiability of the
//! components, guarantees a unique latent solution at every `(x, u)`.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AugmentedModel, BlockId, Dimensions};
use crate::structures;

/// Node groups in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeGroup {
    State = 0,
    Input = 1,
    ZBase = 2,
    ZAug = 3,
    WBase = 4,
    WAug = 5,
    StateNext = 6,
    Output = 7,
}

pub const GROUPS: [NodeGroup; 8] = [
    NodeGroup::State,
    NodeGroup::Input,
    NodeGroup::ZBase,
    NodeGroup::ZAug,
    NodeGroup::WBase,
    NodeGroup::WAug,
    NodeGroup::StateNext,
    NodeGroup::Output,
];

/// Block positions that may carry edges; everything else is structurally zero.
const ALLOWED: [(NodeGroup, NodeGroup); 18] = [
    (NodeGroup::ZBase, NodeGroup::State),
    (NodeGroup::ZBase, NodeGroup::Input),
    (NodeGroup::ZBase, NodeGroup::WBase),
    (NodeGroup::ZBase, NodeGroup::WAug),
    (NodeGroup::ZAug, NodeGroup::State),
    (NodeGroup::ZAug, NodeGroup::Input),
    (NodeGroup::ZAug, NodeGroup::WBase),
    (NodeGroup::ZAug, NodeGroup::WAug),
    (NodeGroup::WBase, NodeGroup::ZBase),
    (NodeGroup::WAug, NodeGroup::ZAug),
    (NodeGroup::StateNext, NodeGroup::State),
    (NodeGroup::StateNext, NodeGroup::Input),
    (NodeGroup::StateNext, NodeGroup::WBase),
    (NodeGroup::StateNext, NodeGroup::WAug),
    (NodeGroup::Output, NodeGroup::State),
    (NodeGroup::Output, NodeGroup::Input),
    (NodeGroup::Output, NodeGroup::WBase),
    (NodeGroup::Output, NodeGroup::WAug),
];

/// Boolean adjacency over the signal nodes, blocked by group.
///
/// Entry `(i, j)` is true iff node `j` feeds node `i` (rows list incoming
/// edges), matching the blocked layout where the `z_b` row holds the patterns
/// of `C_z_b`, `D_zu_b` and the `D_zw_b*` blocks.
#[derive(Debug, Clone)]
pub struct BlockAdjacency {
    sizes: [usize; 8],
    m: Array2<bool>,
}

impl BlockAdjacency {
    pub fn new(dims: &Dimensions) -> Self {
        let sizes = [
            dims.n_x(),
            dims.n_u,
            dims.n_z_b(),
            dims.n_z_a,
            dims.n_w_b(),
            dims.n_w_a,
            dims.n_x(),
            dims.n_y,
        ];
        let n = sizes.iter().sum();
        Self {
            sizes,
            m: Array2::from_elem((n, n), false),
        }
    }

    pub fn sizes(&self) -> &[usize; 8] {
        &self.sizes
    }

    pub fn n_nodes(&self) -> usize {
        self.m.nrows()
    }

    pub fn group_size(&self, g: NodeGroup) -> usize {
        self.sizes[g as usize]
    }

    pub fn group_offset(&self, g: NodeGroup) -> usize {
        self.sizes[..g as usize].iter().sum()
    }

    /// Writes a block pattern; positions outside the allowed layout are
    /// rejected so the structural zeros cannot be violated.
    pub fn set_block(&mut self, row: NodeGroup, col: NodeGroup, pattern: &Array2<bool>) -> Result<()> {
        if !ALLOWED.contains(&(row, col)) {
            return Err(Error::SignalSpec(format!(
                "block ({row:?}, {col:?}) is structurally zero"
            )));
        }
        let (r, c) = (self.group_size(row), self.group_size(col));
        if pattern.dim() != (r, c) {
            return Err(Error::Dimension {
                what: format!("adjacency block ({row:?}, {col:?})"),
                expected: format!("{r}x{c}"),
                got: format!("{:?}", pattern.dim()),
            });
        }
        let (ro, co) = (self.group_offset(row), self.group_offset(col));
        self.m
            .slice_mut(s![ro..ro + r, co..co + c])
            .assign(pattern);
        Ok(())
    }

    pub fn block(&self, row: NodeGroup, col: NodeGroup) -> Array2<bool> {
        let (r, c) = (self.group_size(row), self.group_size(col));
        let (ro, co) = (self.group_offset(row), self.group_offset(col));
        self.m.slice(s![ro..ro + r, co..co + c]).to_owned()
    }

    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.m[[i, j]]
    }

    /// True iff every edge of `self` is also present in `other`.
    pub fn subset_of(&self, other: &BlockAdjacency) -> bool {
        self.sizes == other.sizes
            && self
                .m
                .iter()
                .zip(other.m.iter())
                .all(|(a, b)| !*a || *b)
    }

    /// The stacked `D_zw` pattern (rows `z_b, z_a`, columns `w_b, w_a`).
    pub fn dzw_pattern(&self) -> Array2<bool> {
        let n_z = self.group_size(NodeGroup::ZBase) + self.group_size(NodeGroup::ZAug);
        let n_w = self.group_size(NodeGroup::WBase) + self.group_size(NodeGroup::WAug);
        let mut p = Array2::from_elem((n_z, n_w), false);
        let zs = [NodeGroup::ZBase, NodeGroup::ZAug];
        let ws = [NodeGroup::WBase, NodeGroup::WAug];
        let mut ro = 0;
        for &zr in &zs {
            let mut co = 0;
            for &wc in &ws {
                let b = self.block(zr, wc);
                p.slice_mut(s![ro..ro + b.nrows(), co..co + b.ncols()]).assign(&b);
                co += b.ncols();
            }
            ro += self.group_size(zr);
        }
        p
    }
}

/// Structural well-posedness findings for one model.
#[derive(Debug, Clone)]
pub struct WellPosednessReport {
    pub acyclic: bool,
    /// Node indices in dependency order; present iff acyclic.
    pub topological_order: Option<Vec<usize>>,
    /// One offending cycle when not acyclic.
    pub cycle: Option<Vec<usize>>,
    /// Smallest `m` with the loop pattern power `M^m = 0`, when nilpotent.
    pub nilpotency_index: Option<usize>,
    pub c2_declared: bool,
    /// Result of the optional numeric determinant sampling; diagnostic only.
    pub sampled_jacobian_ok: Option<bool>,
    pub verdict: bool,
}

/// Builds the adjacency of a model. An entry is true when the corresponding
/// interconnection coefficient is currently nonzero or belongs to a block
/// declared trainable, because training can populate any trainable entry.
pub fn build_adjacency(model: &AugmentedModel) -> BlockAdjacency {
    let mut adj = BlockAdjacency::new(&model.dims);
    let w_pattern = |id: BlockId| -> Array2<bool> {
        let block = model.w.block(id);
        if model.w.is_trainable(id) {
            Array2::from_elem(block.dim(), true)
        } else {
            block.mapv(|v| v != 0.0)
        }
    };
    use BlockId::*;
    use NodeGroup::*;
    let mapping: [(NodeGroup, NodeGroup, BlockId); 16] = [
        (ZBase, State, CZb),
        (ZBase, Input, DZuB),
        (ZBase, WBase, DZwBb),
        (ZBase, WAug, DZwBa),
        (ZAug, State, CZa),
        (ZAug, Input, DZuA),
        (ZAug, WBase, DZwAb),
        (ZAug, WAug, DZwAa),
        (StateNext, State, A),
        (StateNext, Input, BU),
        (StateNext, WBase, BWb),
        (StateNext, WAug, BWa),
        (Output, State, CY),
        (Output, Input, DYu),
        (Output, WBase, DYwB),
        (Output, WAug, DYwA),
    ];
    for (r, c, id) in mapping {
        adj.set_block(r, c, &w_pattern(id)).expect("layout");
    }
    adj.set_block(WBase, ZBase, &model.base.pattern()).expect("layout");
    adj.set_block(WAug, ZAug, &model.aug.pattern()).expect("layout");
    adj
}

/// Raw pattern description, loadable from JSON: a list of fully-true blocks
/// plus optional component patterns.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PatternSpec {
    pub dims: Dimensions,
    pub true_blocks: Vec<String>,
    /// Baseline dependence pattern; defaults to all-true.
    #[serde(default)]
    pub p_b: Option<Vec<Vec<bool>>>,
    /// Learned-component dependence pattern; defaults to all-true.
    #[serde(default)]
    pub p_a: Option<Vec<Vec<bool>>>,
    /// Whether the components are declared twice continuously differentiable.
    #[serde(default = "default_true")]
    pub c2: bool,
}

fn default_true() -> bool {
    true
}

fn pattern_from_rows(rows: &[Vec<bool>], want: (usize, usize), what: &str) -> Result<Array2<bool>> {
    if rows.len() != want.0 || rows.iter().any(|r| r.len() != want.1) {
        return Err(Error::Dimension {
            what: what.into(),
            expected: format!("{}x{}", want.0, want.1),
            got: format!("{} rows", rows.len()),
        });
    }
    let mut m = Array2::from_elem(want, false);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    Ok(m)
}

/// Builds an adjacency from a raw block-pattern specification.
pub fn build_adjacency_from_spec(spec: &PatternSpec) -> Result<BlockAdjacency> {
    let dims = &spec.dims;
    let mut adj = BlockAdjacency::new(dims);
    use NodeGroup::*;
    for name in &spec.true_blocks {
        let id = BlockId::from_name(name).ok_or_else(|| Error::UnknownBlock(name.clone()))?;
        let (r, c) = match id {
            BlockId::CZb => (ZBase, State),
            BlockId::DZuB => (ZBase, Input),
            BlockId::DZwBb => (ZBase, WBase),
            BlockId::DZwBa => (ZBase, WAug),
            BlockId::CZa => (ZAug, State),
            BlockId::DZuA => (ZAug, Input),
            BlockId::DZwAb => (ZAug, WBase),
            BlockId::DZwAa => (ZAug, WAug),
            BlockId::A => (StateNext, State),
            BlockId::BU => (StateNext, Input),
            BlockId::BWb => (StateNext, WBase),
            BlockId::BWa => (StateNext, WAug),
            BlockId::CY => (Output, State),
            BlockId::DYu => (Output, Input),
            BlockId::DYwB => (Output, WBase),
            BlockId::DYwA => (Output, WAug),
        };
        let shape = (adj.group_size(r), adj.group_size(c));
        adj.set_block(r, c, &Array2::from_elem(shape, true))?;
    }
    let pb_shape = (dims.n_w_b(), dims.n_z_b());
    let p_b = match &spec.p_b {
        Some(rows) => pattern_from_rows(rows, pb_shape, "p_b")?,
        None => Array2::from_elem(pb_shape, true),
    };
    adj.set_block(WBase, ZBase, &p_b)?;
    let pa_shape = (dims.n_w_a, dims.n_z_a);
    let p_a = match &spec.p_a {
        Some(rows) => pattern_from_rows(rows, pa_shape, "p_a")?,
        None => Array2::from_elem(pa_shape, true),
    };
    adj.set_block(WAug, ZAug, &p_a)?;
    Ok(adj)
}

/// Kahn topological sort over the expanded signal-node graph.
///
/// Returns `(true, Some(order))` with a dependency-respecting node order when
/// the graph is acyclic, otherwise `(false, None)`; a cycle witness is
/// available through [`find_cycle`].
pub fn is_acyclic(adj: &BlockAdjacency) -> (bool, Option<Vec<usize>>) {
    let n = adj.n_nodes();
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if adj.entry(i, j) {
                indeg[i] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut head = 0;
    while head < queue.len() {
        let j = queue[head];
        head += 1;
        order.push(j);
        for i in 0..n {
            if adj.entry(i, j) {
                indeg[i] -= 1;
                if indeg[i] == 0 {
                    queue.push(i);
                }
            }
        }
    }
    if order.len() == n {
        (true, Some(order))
    } else {
        (false, None)
    }
}

/// Extracts one cycle from a non-acyclic adjacency, as a node index sequence
/// where the last node feeds the first.
pub fn find_cycle(adj: &BlockAdjacency) -> Option<Vec<usize>> {
    let n = adj.n_nodes();
    // walk backwards along incoming edges until a node repeats
    let mut indeg_pruned = {
        // restrict to nodes that survive iterated source-removal
        let (acyclic, _) = is_acyclic(adj);
        if acyclic {
            return None;
        }
        vec![true; n]
    };
    // prune nodes not on any cycle by repeatedly removing sources and sinks
    let mut changed = true;
    while changed {
        changed = false;
        for v in 0..n {
            if !indeg_pruned[v] {
                continue;
            }
            let has_in = (0..n).any(|j| indeg_pruned[j] && adj.entry(v, j));
            let has_out = (0..n).any(|i| indeg_pruned[i] && adj.entry(i, v));
            if !has_in || !has_out {
                indeg_pruned[v] = false;
                changed = true;
            }
        }
    }
    let start = (0..n).find(|v| indeg_pruned[*v])?;
    let mut seen = vec![usize::MAX; n];
    let mut path = vec![start];
    seen[start] = 0;
    loop {
        let cur = *path.last().unwrap();
        let next = (0..n).find(|j| indeg_pruned[*j] && adj.entry(cur, *j))?;
        if seen[next] != usize::MAX {
            let mut cycle = path[seen[next]..].to_vec();
            cycle.reverse(); // follow edge direction source -> target
            return Some(cycle);
        }
        seen[next] = path.len();
        path.push(next);
    }
}

/// Checks nilpotency of the loop pattern `M = D_zw * blockdiag(P_b, P_a)`.
///
/// Returns whether some boolean power `M^m` vanishes for `m <= n_z`, along
/// with the smallest such index.
pub fn check_nilpotent(
    dzw_pattern: &Array2<bool>,
    p_b: &Array2<bool>,
    p_a: &Array2<bool>,
) -> (bool, Option<usize>) {
    let n_z = dzw_pattern.nrows();
    let n_w = dzw_pattern.ncols();
    assert_eq!(n_w, p_b.nrows() + p_a.nrows(), "w dimension");
    assert_eq!(n_z, p_b.ncols() + p_a.ncols(), "z dimension");
    // M = dzw * blockdiag(p_b, p_a), boolean product
    let mut m = Array2::from_elem((n_z, n_z), false);
    for i in 0..n_z {
        for j in 0..n_z {
            let mut acc = false;
            for k in 0..n_w {
                let diag = if k < p_b.nrows() {
                    j < p_b.ncols() && p_b[[k, j]]
                } else {
                    j >= p_b.ncols() && p_a[[k - p_b.nrows(), j - p_b.ncols()]]
                };
                if dzw_pattern[[i, k]] && diag {
                    acc = true;
                    break;
                }
            }
            m[[i, j]] = acc;
        }
    }
    if n_z == 0 {
        return (true, Some(1));
    }
    let mut power = m.clone();
    for idx in 1..=n_z {
        if !power.iter().any(|v| *v) {
            return (true, Some(idx));
        }
        power = bool_matmul(&power, &m);
    }
    (false, None)
}

fn bool_matmul(a: &Array2<bool>, b: &Array2<bool>) -> Array2<bool> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::from_elem((n, m), false);
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                if a[[i, l]] && b[[l, j]] {
                    out[[i, j]] = true;
                    break;
                }
            }
        }
    }
    out
}

/// Returns every catalog label whose canonical pattern (generated from the
/// structure factories at the query's dimensions) contains the given
/// adjacency. An empty list means the pattern matches no catalog structure.
pub fn detect_structure(adj: &BlockAdjacency, dims: &Dimensions) -> Vec<String> {
    let p_b = adj.block(NodeGroup::WBase, NodeGroup::ZBase);
    let mut labels: Vec<String> = Vec::new();
    for cand in structures::catalog_candidates(dims, &p_b) {
        if adj.subset_of(&cand.adjacency) {
            for l in cand.labels {
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
        }
    }
    labels
}

/// Runs the full structural check plus optional numeric sampling.
///
/// The verdict depends only on the structural facts (acyclicity and declared
/// smoothness); determinant sampling cannot prove global invertibility and is
/// reported separately.
pub fn check_well_posed(model: &AugmentedModel, sample_count: usize) -> WellPosednessReport {
    let adj = build_adjacency(model);
    let (acyclic, topo) = is_acyclic(&adj);
    let cycle = if acyclic { None } else { find_cycle(&adj) };
    let (nilpotent, index) = check_nilpotent(
        &adj.dzw_pattern(),
        &model.base.pattern(),
        &model.aug.pattern(),
    );
    let _ = nilpotent;
    let c2 = model.base.map.is_c2();
    let sampled = if sample_count > 0 {
        Some(sample_determinants(model, sample_count))
    } else {
        None
    };
    WellPosednessReport {
        acyclic,
        topological_order: topo,
        cycle,
        nilpotency_index: index,
        c2_declared: c2,
        sampled_jacobian_ok: sampled,
        verdict: acyclic && c2,
    }
}

/// Evaluates `det(I - D_zw * Dphi(z))` at uniformly sampled latent points and
/// reports whether all magnitudes clear `1e-9`. Never fails: numeric trouble
/// counts as a negative finding.
fn sample_determinants(model: &AugmentedModel, count: usize) -> bool {
    let dims = &model.dims;
    let n_zb = dims.n_z_b();
    let n_za = dims.n_z_a;
    let n_wb = dims.n_w_b();
    let n_wa = dims.n_w_a;
    let n_z = n_zb + n_za;
    let mut dzw = Array2::<f64>::zeros((n_z, n_wb + n_wa));
    dzw.slice_mut(s![..n_zb, ..n_wb]).assign(model.w.block(BlockId::DZwBb));
    dzw.slice_mut(s![..n_zb, n_wb..]).assign(model.w.block(BlockId::DZwBa));
    dzw.slice_mut(s![n_zb.., ..n_wb]).assign(model.w.block(BlockId::DZwAb));
    dzw.slice_mut(s![n_zb.., n_wb..]).assign(model.w.block(BlockId::DZwAa));

    let mut rng = ChaCha8Rng::seed_from_u64(0xD1A6);
    for _ in 0..count {
        let z: Array1<f64> = Array1::from_iter((0..n_z).map(|_| rng.gen_range(-3.0..3.0)));
        let z_b = z.slice(s![..n_zb]).to_owned();
        let z_a = z.slice(s![n_zb..]).to_owned();
        let jb = model.base.jac_z(&z_b);
        let ja = model.aug.jacobian(&z_a);
        let mut dphi = Array2::<f64>::zeros((n_wb + n_wa, n_z));
        dphi.slice_mut(s![..n_wb, ..n_zb]).assign(&jb);
        dphi.slice_mut(s![n_wb.., n_zb..]).assign(&ja);
        let prod = dzw.dot(&dphi);
        let mut mat = Array2::<f64>::eye(n_z) - prod;
        let det = lu_determinant(&mut mat);
        if !det.is_finite() || det.abs() <= 1e-9 {
            return false;
        }
    }
    true
}

/// Determinant by partial-pivot LU; consumes the matrix in place.
pub fn lu_determinant(m: &mut Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if m[[r, col]].abs() > m[[pivot, col]].abs() {
                pivot = r;
            }
        }
        if m[[pivot, col]] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[[col, c]];
                m[[col, c]] = m[[pivot, c]];
                m[[pivot, c]] = tmp;
            }
            det = -det;
        }
        det *= m[[col, col]];
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            for c in col..n {
                m[[r, c]] -= f * m[[col, c]];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_dims() -> Dimensions {
        Dimensions::new(1, 0, 1, 1, 1, 1).unwrap()
    }

    #[test]
    fn empty_graph_is_acyclic() {
        let adj = BlockAdjacency::new(&tiny_dims());
        let (ok, order) = is_acyclic(&adj);
        assert!(ok);
        assert_eq!(order.unwrap().len(), adj.n_nodes());
    }

    #[test]
    fn dense_dzw_creates_cycle() {
        // z_b -> w_b -> z_a -> w_a -> z_b through all-true blocks
        let mut adj = BlockAdjacency::new(&tiny_dims());
        let t = |r, c| Array2::from_elem((r, c), true);
        adj.set_block(NodeGroup::WBase, NodeGroup::ZBase, &t(2, 2)).unwrap();
        adj.set_block(NodeGroup::WAug, NodeGroup::ZAug, &t(1, 1)).unwrap();
        adj.set_block(NodeGroup::ZAug, NodeGroup::WBase, &t(1, 2)).unwrap();
        adj.set_block(NodeGroup::ZBase, NodeGroup::WAug, &t(2, 1)).unwrap();
        let (ok, _) = is_acyclic(&adj);
        assert!(!ok);
        let cycle = find_cycle(&adj).unwrap();
        assert!(cycle.len() >= 2);
        // the cycle closes: each node feeds the next, last feeds first
        for w in 0..cycle.len() {
            let from = cycle[w];
            let to = cycle[(w + 1) % cycle.len()];
            assert!(adj.entry(to, from), "edge {from}->{to} missing");
        }
    }

    #[test]
    fn structural_zero_blocks_rejected() {
        let mut adj = BlockAdjacency::new(&tiny_dims());
        let err = adj
            .set_block(NodeGroup::State, NodeGroup::Input, &Array2::from_elem((1, 1), true))
            .unwrap_err();
        assert!(matches!(err, Error::SignalSpec(_)));
    }

    #[test]
    fn zero_dzw_is_nilpotent_index_one() {
        let dzw = Array2::from_elem((3, 3), false);
        let p_b = Array2::from_elem((2, 2), true);
        let p_a = Array2::from_elem((1, 1), true);
        let (ok, idx) = check_nilpotent(&dzw, &p_b, &p_a);
        assert!(ok);
        assert_eq!(idx, Some(1));
    }

    #[test]
    fn ab_only_pattern_nilpotent_index_two() {
        // dzw rows (z_b, z_a) x cols (w_b, w_a); only the ab block set
        let n_zb = 2;
        let n_za = 1;
        let n_wb = 2;
        let n_wa = 1;
        let mut dzw = Array2::from_elem((n_zb + n_za, n_wb + n_wa), false);
        for j in 0..n_wb {
            dzw[[n_zb, j]] = true;
        }
        let p_b = Array2::from_elem((n_wb, n_zb), true);
        let p_a = Array2::from_elem((n_wa, n_za), true);
        let (ok, idx) = check_nilpotent(&dzw, &p_b, &p_a);
        assert!(ok);
        assert!(idx.unwrap() <= 2);
    }

    #[test]
    fn full_dzw_with_full_components_not_nilpotent() {
        let dzw = Array2::from_elem((2, 2), true);
        let p_b = Array2::from_elem((1, 1), true);
        let p_a = Array2::from_elem((1, 1), true);
        let (ok, idx) = check_nilpotent(&dzw, &p_b, &p_a);
        assert!(!ok);
        assert_eq!(idx, None);
    }

    #[test]
    fn determinant_helper_matches_closed_form() {
        let mut m = array![[2.0, 1.0], [1.0, 3.0]];
        assert!((lu_determinant(&mut m) - 5.0).abs() < 1e-12);
        let mut s = array![[1.0, 2.0], [2.0, 4.0]];
        assert_eq!(lu_determinant(&mut s), 0.0);
    }
}
