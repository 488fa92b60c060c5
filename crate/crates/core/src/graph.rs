//! Operator-level DNN graphs with analytic cost annotations.
//!
//! A [`DnnGraph`] is a DAG of primitive operators. Every node carries the
//! hyperparameters it was built from ([`OpConfig`]) and the derived output
//! shape, tensor size, parameter size and FLOP count. Padding is not modelled,
//! so spatial operators shrink their input by `k_s - 1` before striding.
//!
//! Multi-input operators (`Add`, `Concat`) center-crop their inputs to the
//! smallest incoming spatial size.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tensor element is a 32-bit float.
pub const BYTES_PER_ELEMENT: u64 = 4;

/// Upper bound of the `hw`, `cin` and `cout` sampling ranges.
pub const SAMPLE_DIM_MAX: u32 = 512;
pub const KERNEL_SIZES: [u32; 4] = [1, 3, 5, 7];
pub const STRIDES: [u32; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Conv,
    Fc,
    Bn,
    MaxPool,
    AvgPool,
    Add,
    Concat,
    Identity,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 8] = [
        OperatorKind::Conv,
        OperatorKind::Fc,
        OperatorKind::Bn,
        OperatorKind::MaxPool,
        OperatorKind::AvgPool,
        OperatorKind::Add,
        OperatorKind::Concat,
        OperatorKind::Identity,
    ];

    /// The five kinds with a dedicated sampling space.
    pub const PROFILED: [OperatorKind; 5] = [
        OperatorKind::Conv,
        OperatorKind::Fc,
        OperatorKind::Bn,
        OperatorKind::MaxPool,
        OperatorKind::AvgPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Conv => "conv",
            OperatorKind::Fc => "fc",
            OperatorKind::Bn => "bn",
            OperatorKind::MaxPool => "maxpool",
            OperatorKind::AvgPool => "avgpool",
            OperatorKind::Add => "add",
            OperatorKind::Concat => "concat",
            OperatorKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::NotFound(format!("operator kind '{s}'")))
    }

    pub fn uses_kernel(self) -> bool {
        matches!(
            self,
            OperatorKind::Conv | OperatorKind::MaxPool | OperatorKind::AvgPool
        )
    }

    pub fn is_spatial(self) -> bool {
        self != OperatorKind::Fc
    }

    pub fn is_pool(self) -> bool {
        matches!(self, OperatorKind::MaxPool | OperatorKind::AvgPool)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind plus the hyperparameters that determine an operator's cost.
///
/// Fields a kind does not use are zero. Pools, BN and the structural kinds
/// (`Add`, `Concat`, `Identity`) have `cout == cin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpConfig {
    pub kind: OperatorKind,
    #[serde(default)]
    pub hw: u32,
    pub cin: u32,
    #[serde(default)]
    pub cout: u32,
    #[serde(default)]
    pub k_s: u32,
    #[serde(default)]
    pub s: u32,
}

impl OpConfig {
    pub fn conv(hw: u32, cin: u32, cout: u32, k_s: u32, s: u32) -> Self {
        OpConfig { kind: OperatorKind::Conv, hw, cin, cout, k_s, s }
    }

    pub fn fc(cin: u32, cout: u32) -> Self {
        OpConfig { kind: OperatorKind::Fc, hw: 0, cin, cout, k_s: 0, s: 0 }
    }

    pub fn bn(hw: u32, cin: u32) -> Self {
        OpConfig { kind: OperatorKind::Bn, hw, cin, cout: cin, k_s: 0, s: 0 }
    }

    pub fn max_pool(hw: u32, cin: u32, k_s: u32, s: u32) -> Self {
        OpConfig { kind: OperatorKind::MaxPool, hw, cin, cout: cin, k_s, s }
    }

    pub fn avg_pool(hw: u32, cin: u32, k_s: u32, s: u32) -> Self {
        OpConfig { kind: OperatorKind::AvgPool, hw, cin, cout: cin, k_s, s }
    }

    pub fn add(hw: u32, channels: u32) -> Self {
        OpConfig { kind: OperatorKind::Add, hw, cin: channels, cout: channels, k_s: 0, s: 0 }
    }

    pub fn concat(hw: u32, channels: u32) -> Self {
        OpConfig { kind: OperatorKind::Concat, hw, cin: channels, cout: channels, k_s: 0, s: 0 }
    }

    pub fn identity(hw: u32, channels: u32) -> Self {
        OpConfig { kind: OperatorKind::Identity, hw, cin: channels, cout: channels, k_s: 0, s: 0 }
    }

    /// Builds a config of `kind` from raw hyperparameters, zeroing the ones the
    /// kind does not use.
    pub fn of_kind(kind: OperatorKind, hw: u32, cin: u32, cout: u32, k_s: u32, s: u32) -> Self {
        match kind {
            OperatorKind::Conv => Self::conv(hw, cin, cout, k_s, s),
            OperatorKind::Fc => Self::fc(cin, cout),
            OperatorKind::Bn => Self::bn(hw, cin),
            OperatorKind::MaxPool => Self::max_pool(hw, cin, k_s, s),
            OperatorKind::AvgPool => Self::avg_pool(hw, cin, k_s, s),
            OperatorKind::Add => Self::add(hw, cin),
            OperatorKind::Concat => Self::concat(hw, cin),
            OperatorKind::Identity => Self::identity(hw, cin),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("{} operator: {what} ({self:?})", self.kind)));
        if self.cin == 0 || self.cout == 0 {
            return bad("channels must be >= 1");
        }
        if self.kind.is_spatial() && self.kind != OperatorKind::Identity && self.hw == 0 {
            return bad("hw must be >= 1");
        }
        if self.kind.uses_kernel() {
            if !KERNEL_SIZES.contains(&self.k_s) {
                return bad("kernel size must be one of 1, 3, 5, 7");
            }
            if !STRIDES.contains(&self.s) {
                return bad("stride must be one of 1, 2, 3");
            }
            if self.hw < self.k_s {
                return bad("kernel larger than input");
            }
        } else if self.k_s != 0 || self.s != 0 {
            return bad("kernel/stride not used by this kind");
        }
        if self.kind != OperatorKind::Conv && self.kind != OperatorKind::Fc && self.cout != self.cin {
            return bad("cout must equal cin");
        }
        if self.kind == OperatorKind::Fc && self.hw != 0 {
            return bad("fc has no spatial extent");
        }
        Ok(())
    }

    /// False for FC and for an `Identity` applied to a flat vector (`hw == 0`).
    pub fn is_spatial(&self) -> bool {
        self.kind.is_spatial() && !(self.kind == OperatorKind::Identity && self.hw == 0)
    }

    /// Output spatial size; zero for flat outputs.
    pub fn out_hw(&self) -> u32 {
        if self.kind.uses_kernel() {
            (self.hw - self.k_s) / self.s + 1
        } else if self.is_spatial() {
            self.hw
        } else {
            0
        }
    }

    pub fn input_elements(&self) -> u64 {
        if self.is_spatial() {
            (self.hw as u64).pow(2) * self.cin as u64
        } else {
            self.cin as u64
        }
    }

    pub fn output_elements(&self) -> u64 {
        if self.is_spatial() {
            (self.out_hw() as u64).pow(2) * self.cout as u64
        } else {
            self.cout as u64
        }
    }

    pub fn input_bytes(&self) -> u64 {
        self.input_elements() * BYTES_PER_ELEMENT
    }

    pub fn out_bytes(&self) -> u64 {
        self.output_elements() * BYTES_PER_ELEMENT
    }

    pub fn param_count(&self) -> u64 {
        let (cin, cout, k) = (self.cin as u64, self.cout as u64, self.k_s as u64);
        match self.kind {
            OperatorKind::Conv => k * k * cin * cout + cout,
            OperatorKind::Fc => cin * cout + cout,
            // scale, shift, running mean, running variance
            OperatorKind::Bn => 4 * cin,
            _ => 0,
        }
    }

    pub fn param_bytes(&self) -> u64 {
        self.param_count() * BYTES_PER_ELEMENT
    }

    /// FLOPs with one multiply-accumulate counted as two operations.
    pub fn flops(&self) -> u64 {
        let hw = self.hw as u64;
        let out = self.out_hw() as u64;
        let (cin, cout, k) = (self.cin as u64, self.cout as u64, self.k_s as u64);
        match self.kind {
            OperatorKind::Conv => 2 * out * out * k * k * cin * cout,
            OperatorKind::Fc => 2 * cin * cout,
            OperatorKind::Bn => 4 * hw * hw * cin,
            OperatorKind::MaxPool | OperatorKind::AvgPool => out * out * k * k * cin,
            OperatorKind::Add => hw * hw * cin,
            OperatorKind::Concat | OperatorKind::Identity => 0,
        }
    }

    pub fn mflops(&self) -> f64 {
        self.flops() as f64 / 1e6
    }

    /// Whether every used hyperparameter lies in the profiled sampling ranges.
    pub fn in_sample_space(&self) -> bool {
        let dim_ok = |v: u32| (1..=SAMPLE_DIM_MAX).contains(&v);
        self.validate().is_ok()
            && dim_ok(self.cin)
            && dim_ok(self.cout)
            && (!self.is_spatial() || dim_ok(self.hw))
    }
}

/// Cost-annotated node of a [`DnnGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: usize,
    pub label: String,
    /// Layer-level block the operator belongs to.
    pub layer: usize,
    #[serde(flatten)]
    pub config: OpConfig,
    pub out_hw: u32,
    pub out_bytes: u64,
    pub param_bytes: u64,
    pub flops: u64,
}

impl OperatorNode {
    pub fn new(id: usize, label: impl Into<String>, layer: usize, config: OpConfig) -> Result<Self> {
        config.validate()?;
        Ok(OperatorNode {
            id,
            label: label.into(),
            layer,
            out_hw: config.out_hw(),
            out_bytes: config.out_bytes(),
            param_bytes: config.param_bytes(),
            flops: config.flops(),
            config,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.config.kind
    }

    pub fn mflops(&self) -> f64 {
        self.flops as f64 / 1e6
    }
}

/// Operator FLOP count in MFLOPs.
pub fn operator_flops(op: &OperatorNode) -> f64 {
    op.config.mflops()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
}

/// A boundary in topological order crossed by exactly one tensor edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPoint {
    /// The cut lies after `topo_order[index]`.
    pub index: usize,
    pub crossing_edge: Edge,
    pub crossing_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnGraph {
    name: String,
    input_hw: u32,
    input_channels: u32,
    nodes: Vec<OperatorNode>,
    edges: Vec<Edge>,
    topo: Vec<usize>,
}

impl DnnGraph {
    /// Validates the operators and wiring and fixes the topological order.
    ///
    /// Node ids must equal their position in `nodes`. Edge byte annotations
    /// are recomputed from the producer.
    pub fn new(
        name: impl Into<String>,
        input: (u32, u32),
        nodes: Vec<OperatorNode>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::invalid("graph has no operators"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::invalid(format!("node at position {i} has id {}", node.id)));
            }
            node.config.validate()?;
        }
        let mut seen = BTreeSet::new();
        let mut full_edges = Vec::with_capacity(edges.len());
        for &(from, to) in &edges {
            if from >= n || to >= n {
                return Err(Error::invalid(format!("edge {from}->{to} references a missing node")));
            }
            if from == to || !seen.insert((from, to)) {
                return Err(Error::invalid(format!("self-loop or duplicate edge {from}->{to}")));
            }
            full_edges.push(Edge { from, to, bytes: nodes[from].out_bytes });
        }
        let graph = DnnGraph {
            name: name.into(),
            input_hw: input.0,
            input_channels: input.1,
            topo: Vec::new(),
            nodes,
            edges: full_edges,
        };
        let topo = graph.topological_order()?;
        let graph = DnnGraph { topo, ..graph };
        graph.check_wiring()?;
        Ok(graph)
    }

    fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            indegree[e.to] += 1;
        }
        let succ = self.successors();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(u)) = ready.pop() {
            order.push(u);
            for &v in &succ[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(Reverse(v));
                }
            }
        }
        if order.len() != n {
            return Err(Error::invalid(format!("graph '{}' contains a cycle", self.name)));
        }
        Ok(order)
    }

    fn check_wiring(&self) -> Result<()> {
        let preds = self.predecessors();
        let succ = self.successors();
        let sources: Vec<_> = (0..self.nodes.len()).filter(|&i| preds[i].is_empty()).collect();
        let sinks: Vec<_> = (0..self.nodes.len()).filter(|&i| succ[i].is_empty()).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(Error::invalid(format!(
                "graph '{}' must have one source and one sink (found {} and {})",
                self.name,
                sources.len(),
                sinks.len()
            )));
        }
        let src = &self.nodes[sources[0]].config;
        let src_hw = if src.is_spatial() { src.hw } else { 0 };
        if src.cin != self.input_channels || src_hw != self.input_hw {
            return Err(Error::invalid("source operator does not match the input shape"));
        }
        for node in &self.nodes {
            let inputs: Vec<&OperatorNode> = preds[node.id].iter().map(|&p| &self.nodes[p]).collect();
            if inputs.is_empty() {
                continue;
            }
            let cfg = &node.config;
            let mismatch = |what: &str| {
                Err(Error::invalid(format!(
                    "operator {} ({}): {what}",
                    node.id, node.label
                )))
            };
            match cfg.kind {
                OperatorKind::Add | OperatorKind::Concat => {
                    if inputs.len() < 2 {
                        return mismatch("merge operator needs at least two inputs");
                    }
                    if inputs.iter().any(|p| !p.config.is_spatial()) {
                        return mismatch("merge inputs must be spatial");
                    }
                    let min_hw = inputs.iter().map(|p| p.out_hw).min().unwrap_or(0);
                    if cfg.hw != min_hw {
                        return mismatch("hw must equal the smallest input size");
                    }
                    let channels_ok = if cfg.kind == OperatorKind::Add {
                        inputs.iter().all(|p| p.config.cout == cfg.cin)
                    } else {
                        inputs.iter().map(|p| p.config.cout).sum::<u32>() == cfg.cin
                    };
                    if !channels_ok {
                        return mismatch("input channels do not match");
                    }
                }
                _ => {
                    if inputs.len() != 1 {
                        return mismatch("expected exactly one input");
                    }
                    let p = inputs[0];
                    // A Conv with cin = 1 consuming cout channels is depthwise.
                    let depthwise = cfg.kind == OperatorKind::Conv && cfg.cin == 1 && p.config.cout == cfg.cout;
                    let ok = if !cfg.is_spatial() {
                        p.config.output_elements() == cfg.cin as u64
                            && (cfg.kind == OperatorKind::Fc || !p.config.is_spatial())
                    } else {
                        p.config.is_spatial()
                            && p.out_hw == cfg.hw
                            && (p.config.cout == cfg.cin || depthwise)
                    };
                    if !ok {
                        return mismatch("input shape does not match producer output");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> (u32, u32) {
        (self.input_hw, self.input_channels)
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &OperatorNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operator ids in execution order (smallest id first among ready nodes).
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn source(&self) -> &OperatorNode {
        &self.nodes[self.topo[0]]
    }

    pub fn sink(&self) -> &OperatorNode {
        &self.nodes[*self.topo.last().expect("non-empty graph")]
    }

    pub fn input_bytes(&self) -> u64 {
        self.source().config.input_bytes()
    }

    pub fn output_bytes(&self) -> u64 {
        self.sink().out_bytes
    }

    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn total_param_bytes(&self) -> u64 {
        self.nodes.iter().map(|n| n.param_bytes).sum()
    }

    pub fn layer_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer).collect::<BTreeSet<_>>().len()
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            succ[e.from].push(e.to);
        }
        succ
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.to].push(e.from);
        }
        preds
    }

    /// Operators before and after a cut, in execution order.
    pub fn split_at(&self, cut: &CutPoint) -> (Vec<usize>, Vec<usize>) {
        let (head, tail) = self.topo.split_at(cut.index + 1);
        (head.to_vec(), tail.to_vec())
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            schema_version: GRAPH_SCHEMA_VERSION,
            name: self.name.clone(),
            input: InputShape { hw: self.input_hw, channels: self.input_channels },
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        if file.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported graph schema version {}",
                file.schema_version
            )));
        }
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| OperatorNode::new(n.id, n.label, n.layer, n.config))
            .collect::<Result<Vec<_>>>()?;
        let edges = file.edges.iter().map(|e| (e.from, e.to)).collect();
        let graph = DnnGraph::new(file.name, (file.input.hw, file.input.channels), nodes, edges)?;
        for (declared, derived) in file.edges.iter().zip(graph.edges()) {
            if declared.bytes != derived.bytes {
                return Err(Error::invalid(format!(
                    "edge {}->{} declares {} bytes, producer emits {}",
                    declared.from, declared.to, declared.bytes, derived.bytes
                )));
            }
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputShape {
    pub hw: u32,
    pub channels: u32,
}

/// On-disk graph representation; see `docs/graph-schema.md`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub schema_version: u32,
    pub name: String,
    pub input: InputShape,
    pub nodes: Vec<OperatorNode>,
    pub edges: Vec<Edge>,
}

/// Every boundary of the topological order crossed by exactly one tensor:
/// all crossing edges leave the same producer. A tensor fanning out to
/// several consumers is sent once, so the cut carries the producer's output
/// bytes; `crossing_edge` is the producer's edge to its earliest consumer.
pub fn valid_cut_points(graph: &DnnGraph) -> Vec<CutPoint> {
    let n = graph.len();
    let mut pos = vec![0usize; n];
    for (i, &id) in graph.topo_order().iter().enumerate() {
        pos[id] = i;
    }
    // Producer u's tensor crosses every boundary in [pos(u), last consumer).
    let mut first: Vec<Option<usize>> = vec![None; n];
    let mut last = vec![0usize; n];
    for (ei, e) in graph.edges().iter().enumerate() {
        let better = match first[e.from] {
            Some(f) => pos[e.to] < pos[graph.edges()[f].to],
            None => true,
        };
        if better {
            first[e.from] = Some(ei);
        }
        last[e.from] = last[e.from].max(pos[e.to]);
    }
    let mut delta = vec![0i64; n + 1];
    let mut xor_producer = vec![0usize; n + 1];
    for u in (0..n).filter(|&u| first[u].is_some()) {
        let (a, b) = (pos[u], last[u]);
        delta[a] += 1;
        delta[b] -= 1;
        xor_producer[a] ^= u;
        xor_producer[b] ^= u;
    }
    let mut cuts = Vec::new();
    let (mut crossing, mut acc) = (0i64, 0usize);
    for i in 0..n.saturating_sub(1) {
        crossing += delta[i];
        acc ^= xor_producer[i];
        if crossing == 1 {
            let edge = graph.edges()[first[acc].expect("crossing producer has an edge")];
            cuts.push(CutPoint { index: i, crossing_edge: edge, crossing_bytes: graph.node(acc).out_bytes });
        }
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(len: usize) -> DnnGraph {
        let mut nodes = Vec::new();
        for i in 0..len {
            nodes.push(OperatorNode::new(i, format!("bn{i}"), i, OpConfig::bn(8, 4)).unwrap());
        }
        let edges = (1..len).map(|i| (i - 1, i)).collect();
        DnnGraph::new("chain", (8, 4), nodes, edges).unwrap()
    }

    #[test]
    fn conv_flops_hand_computed() {
        let c = OpConfig::conv(34, 3, 16, 3, 1);
        assert_eq!(c.out_hw(), 32);
        assert_eq!(c.flops(), 884_736);
        assert!((c.mflops() - 0.884736).abs() < 1e-12);
        assert_eq!(OpConfig::fc(100, 10).flops(), 2_000);
        assert_eq!(OpConfig::conv(1, 1, 1, 1, 1).flops(), 2);
    }

    #[test]
    fn out_bytes_follow_shapes() {
        let c = OpConfig::conv(34, 3, 16, 3, 1);
        assert_eq!(c.out_bytes(), 32 * 32 * 16 * 4);
        assert_eq!(OpConfig::fc(100, 10).out_bytes(), 40);
        let p = OpConfig::max_pool(9, 8, 3, 3);
        assert_eq!(p.out_hw(), 3);
        assert_eq!(p.out_bytes(), 3 * 3 * 8 * 4);
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        assert!(OpConfig::conv(10, 3, 8, 4, 1).validate().is_err());
        assert!(OpConfig::conv(10, 3, 8, 3, 4).validate().is_err());
        assert!(OpConfig::conv(2, 3, 8, 3, 1).validate().is_err());
        assert!(OpConfig::conv(10, 0, 8, 3, 1).validate().is_err());
        assert!(OpConfig::fc(0, 3).validate().is_err());
        assert!(OpConfig::bn(0, 3).validate().is_err());
    }

    #[test]
    fn chain_cut_points() {
        let g = chain(5);
        let cuts = valid_cut_points(&g);
        assert_eq!(cuts.len(), 4);
        assert!(cuts.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn diamond_cuts_only_at_single_tensors() {
        // a -> split -> {b1, b2} -> merge -> z
        let cfg = OpConfig::bn(8, 4);
        let mut nodes: Vec<_> = ["a", "split", "b1", "b2"]
            .iter()
            .enumerate()
            .map(|(i, l)| OperatorNode::new(i, *l, i, cfg).unwrap())
            .collect();
        nodes.push(OperatorNode::new(4, "merge", 4, OpConfig::add(8, 4)).unwrap());
        nodes.push(OperatorNode::new(5, "z", 5, cfg).unwrap());
        let g = DnnGraph::new("diamond", (8, 4), nodes, vec![(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)])
            .unwrap();
        let cuts: Vec<_> = valid_cut_points(&g).iter().map(|c| (c.crossing_edge.from, c.crossing_edge.to)).collect();
        // The split's output fans out but is still one tensor.
        assert_eq!(cuts, vec![(0, 1), (1, 2), (4, 5)]);
        assert_eq!(valid_cut_points(&g)[1].crossing_bytes, g.node(1).out_bytes);
    }

    #[test]
    fn rejects_cycles_and_multiple_sinks() {
        let cfg = OpConfig::bn(8, 4);
        let nodes: Vec<_> = (0..3).map(|i| OperatorNode::new(i, "x", 0, cfg).unwrap()).collect();
        assert!(DnnGraph::new("cyc", (8, 4), nodes.clone(), vec![(0, 1), (1, 2), (2, 1)]).is_err());
        assert!(DnnGraph::new("fork", (8, 4), nodes, vec![(0, 1), (0, 2)]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let nodes = vec![
            OperatorNode::new(0, "c", 0, OpConfig::conv(8, 4, 16, 3, 1)).unwrap(),
            OperatorNode::new(1, "b", 0, OpConfig::bn(8, 16)).unwrap(),
        ];
        assert!(DnnGraph::new("bad", (8, 4), nodes, vec![(0, 1)]).is_err());
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let g = chain(4);
        let back = DnnGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let mut file = g.to_file();
        file.edges[0].bytes += 1;
        assert!(DnnGraph::from_file(file).is_err());
    }
}
