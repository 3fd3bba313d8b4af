//! CPPN genomes, feed-forward activation and ring-constrained rendering.
//!
//! Every genome has four inputs `(u, v, d, bias)` and one output per image
//! channel. Rendering maps each pixel to band-local pattern coordinates so
//! the pattern repeats around every ring, with odd rings inverted.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImagingError, Raster};

pub type NodeId = u32;
pub type InnovationId = u64;

/// Number of input nodes: u, v, d and a constant bias input.
pub const INPUT_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum CppnError {
    #[error("genome contains a cycle among its enabled connections")]
    CyclicGenome,
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
    #[error("genome has {genome} outputs but {mode:?} mode needs {needed}")]
    ChannelMismatch {
        genome: usize,
        needed: usize,
        mode: RenderMode,
    },
    #[error("invalid ring geometry: {0}")]
    InvalidGeometry(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Sine,
    Gaussian,
    Abs,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Sine,
        Activation::Gaussian,
        Activation::Abs,
        Activation::Identity,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Sine => x.sin(),
            Activation::Gaussian => (-x * x).exp(),
            Activation::Abs => x.abs(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub activation: Activation,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGene {
    pub innovation_id: InnovationId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub weight: f64,
    pub enabled: bool,
}

/// A CPPN genotype. Serializes to `{"nodes": [...], "connections": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppnGenome {
    pub nodes: Vec<NodeGene>,
    pub connections: Vec<ConnectionGene>,
}

impl CppnGenome {
    /// Inputs (ids 0..4) and `channels` identity outputs with zero bias, no
    /// connections.
    pub fn bare(channels: usize) -> Self {
        let mut nodes: Vec<NodeGene> = (0..INPUT_COUNT as NodeId)
            .map(|node_id| NodeGene {
                node_id,
                kind: NodeKind::Input,
                activation: Activation::Identity,
                bias: 0.0,
            })
            .collect();
        nodes.extend((0..channels as NodeId).map(|c| NodeGene {
            node_id: INPUT_COUNT as NodeId + c,
            kind: NodeKind::Output,
            activation: Activation::Identity,
            bias: 0.0,
        }));
        Self {
            nodes,
            connections: Vec::new(),
        }
    }

    pub fn input_ids(&self) -> Vec<NodeId> {
        self.ids_of(NodeKind::Input)
    }

    pub fn output_ids(&self) -> Vec<NodeId> {
        self.ids_of(NodeKind::Output)
    }

    fn ids_of(&self, kind: NodeKind) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.node_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn channels(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Output)
            .count()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeGene> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn max_node_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.node_id).max().unwrap_or(0)
    }

    /// Checks id uniqueness, the input/output layout, dangling references and
    /// acyclicity of the enabled graph.
    pub fn validate(&self) -> Result<(), CppnError> {
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.node_id) {
                return Err(CppnError::InvalidGenome(format!(
                    "duplicate node id {}",
                    n.node_id
                )));
            }
        }
        let inputs = self.input_ids().len();
        if inputs != INPUT_COUNT {
            return Err(CppnError::InvalidGenome(format!(
                "expected {INPUT_COUNT} input nodes, found {inputs}"
            )));
        }
        let outputs = self.channels();
        if outputs != 1 && outputs != 3 {
            return Err(CppnError::InvalidGenome(format!(
                "expected 1 or 3 output nodes, found {outputs}"
            )));
        }
        let mut innovations = HashSet::new();
        for c in &self.connections {
            if !innovations.insert(c.innovation_id) {
                return Err(CppnError::InvalidGenome(format!(
                    "duplicate innovation id {}",
                    c.innovation_id
                )));
            }
            let (Some(_), Some(to)) = (self.node(c.from_node), self.node(c.to_node)) else {
                return Err(CppnError::InvalidGenome(format!(
                    "connection {} references a missing node",
                    c.innovation_id
                )));
            };
            if to.kind == NodeKind::Input {
                return Err(CppnError::InvalidGenome(format!(
                    "connection {} targets input node {}",
                    c.innovation_id, to.node_id
                )));
            }
        }
        topological_order(self).map(|_| ())
    }
}

/// Kahn's algorithm over enabled connections; ties resolved by node id so
/// the order is deterministic.
fn topological_order(genome: &CppnGenome) -> Result<Vec<NodeId>, CppnError> {
    let mut indegree: HashMap<NodeId, usize> =
        genome.nodes.iter().map(|n| (n.node_id, 0)).collect();
    let mut succ: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for c in genome.connections.iter().filter(|c| c.enabled) {
        *indegree
            .get_mut(&c.to_node)
            .ok_or_else(|| CppnError::InvalidGenome(format!("missing node {}", c.to_node)))? += 1;
        if !indegree.contains_key(&c.from_node) {
            return Err(CppnError::InvalidGenome(format!(
                "missing node {}",
                c.from_node
            )));
        }
        succ.entry(c.from_node).or_default().push(c.to_node);
    }
    let mut ready: Vec<NodeId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    ready.sort_unstable_by(|a, b| b.cmp(a));
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(id) = ready.pop() {
        order.push(id);
        if let Some(next) = succ.get(&id) {
            for &to in next {
                let d = indegree.get_mut(&to).expect("checked above");
                *d -= 1;
                if *d == 0 {
                    let pos = ready.partition_point(|&r| r > to);
                    ready.insert(pos, to);
                }
            }
        }
    }
    if order.len() != indegree.len() {
        return Err(CppnError::CyclicGenome);
    }
    Ok(order)
}

/// True when adding `from -> to` would close a cycle, considering every
/// connection gene (enabled or not).
pub fn creates_cycle(genome: &CppnGenome, from: NodeId, to: NodeId) -> bool {
    if from == to {
        return true;
    }
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([to]);
    while let Some(n) = queue.pop_front() {
        if n == from {
            return true;
        }
        if !seen.insert(n) {
            continue;
        }
        queue.extend(
            genome
                .connections
                .iter()
                .filter(|c| c.from_node == n)
                .map(|c| c.to_node),
        );
    }
    false
}

#[derive(Debug, Clone)]
struct CompiledNode {
    activation: Activation,
    bias: f64,
    output_slot: Option<usize>,
    /// (source slot, weight)
    incoming: Vec<(usize, f64)>,
}

/// A genome flattened into evaluation order.
#[derive(Debug, Clone)]
pub struct CppnNetwork {
    input_slots: [usize; INPUT_COUNT],
    nodes: Vec<CompiledNode>,
    channels: usize,
}

impl CppnNetwork {
    pub fn compile(genome: &CppnGenome) -> Result<Self, CppnError> {
        genome.validate()?;
        let order = topological_order(genome)?;
        let slot: HashMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let inputs = genome.input_ids();
        let outputs = genome.output_ids();
        let mut input_slots = [0usize; INPUT_COUNT];
        for (k, id) in inputs.iter().enumerate() {
            input_slots[k] = slot[id];
        }
        let mut nodes: Vec<CompiledNode> = order
            .iter()
            .map(|&id| {
                let gene = genome.node(id).expect("ordered ids come from the genome");
                CompiledNode {
                    activation: gene.activation,
                    bias: gene.bias,
                    output_slot: outputs.iter().position(|&o| o == id),
                    incoming: Vec::new(),
                }
            })
            .collect();
        for c in genome.connections.iter().filter(|c| c.enabled) {
            nodes[slot[&c.to_node]]
                .incoming
                .push((slot[&c.from_node], c.weight));
        }
        Ok(Self {
            input_slots,
            nodes,
            channels: outputs.len(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Evaluates the network, writing one value in `[0, 1]` per output.
    pub fn activate_into(
        &self,
        inputs: [f64; INPUT_COUNT],
        values: &mut Vec<f64>,
        out: &mut [f64],
    ) {
        values.clear();
        values.resize(self.nodes.len(), 0.0);
        for (k, &s) in self.input_slots.iter().enumerate() {
            values[s] = inputs[k];
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if self.input_slots.contains(&i) {
                continue;
            }
            let sum = node.bias
                + node
                    .incoming
                    .iter()
                    .map(|&(src, w)| w * values[src])
                    .sum::<f64>();
            let mut value = node.activation.apply(sum);
            if let Some(o) = node.output_slot {
                value = (value.tanh() + 1.0) / 2.0;
                out[o] = if value.is_finite() { value } else { 0.5 };
            }
            values[i] = value;
        }
    }

    pub fn activate(&self, inputs: [f64; INPUT_COUNT]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.channels];
        self.activate_into(inputs, &mut scratch, &mut out);
        out
    }
}

/// One-shot evaluation of `genome` on `inputs`; outputs lie in `[0, 1]`.
pub fn activate(genome: &CppnGenome, inputs: [f64; INPUT_COUNT]) -> Result<Vec<f64>, CppnError> {
    Ok(CppnNetwork::compile(genome)?.activate(inputs))
}

/// Concentric bands around `center`, each carrying `angular_period`
/// repetitions of the pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingGeometry {
    pub center: (f64, f64),
    pub ring_count: u32,
    pub band_width: f64,
    pub angular_period: u32,
    pub inner_radius: f64,
}

impl RingGeometry {
    /// Geometry used for 160x120 renders: three 16 px bands starting 8 px
    /// from the center, eight repetitions per ring.
    pub fn default_for(width: usize, height: usize) -> Self {
        Self {
            center: (width as f64 / 2.0, height as f64 / 2.0),
            ring_count: 3,
            band_width: 16.0,
            angular_period: 8,
            inner_radius: 8.0,
        }
    }

    pub fn outer_radius(&self) -> f64 {
        self.inner_radius + self.ring_count as f64 * self.band_width
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), CppnError> {
        let bad = |msg: String| Err(CppnError::InvalidGeometry(msg));
        if self.ring_count < 2 {
            return bad(format!("ring_count {} < 2", self.ring_count));
        }
        if !(self.band_width > 0.0) {
            return bad(format!("band_width {} must be positive", self.band_width));
        }
        if self.angular_period < 1 {
            return bad("angular_period must be at least 1".into());
        }
        if !(self.inner_radius >= 0.0) {
            return bad(format!("inner_radius {} is negative", self.inner_radius));
        }
        let (cx, cy) = self.center;
        let room = cx.min(cy).min(width as f64 - cx).min(height as f64 - cy);
        if self.outer_radius() > room {
            return bad(format!(
                "outer radius {} does not fit around ({cx}, {cy}) in {width}x{height}",
                self.outer_radius()
            ));
        }
        Ok(())
    }
}

/// Band-local coordinates of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternCoords {
    /// Triangle-wave phase around the ring, in `[-1, 1]`.
    pub u: f64,
    /// Radial position inside the band, in `[-1, 1)`.
    pub v: f64,
    pub band_index: i64,
    pub inside: bool,
}

#[inline]
fn triangle(phase: f64) -> f64 {
    let frac = phase - phase.floor();
    1.0 - 4.0 * (frac - 0.5).abs()
}

pub fn pattern_coords(px: f64, py: f64, geom: &RingGeometry) -> PatternCoords {
    let (dx, dy) = (px - geom.center.0, py - geom.center.1);
    let r = dx.hypot(dy);
    let theta = dy.atan2(dx).rem_euclid(TAU);
    let u = triangle(theta / TAU * geom.angular_period as f64);
    let radial = (r - geom.inner_radius) / geom.band_width;
    let band = radial.floor();
    let v = 2.0 * (radial - band) - 1.0;
    PatternCoords {
        u,
        v,
        band_index: band as i64,
        inside: r >= geom.inner_radius && r < geom.outer_radius(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Gray,
    Color,
    Binary,
}

impl RenderMode {
    pub fn channels(self) -> usize {
        match self {
            RenderMode::Color => 3,
            RenderMode::Gray | RenderMode::Binary => 1,
        }
    }
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gray" => Ok(RenderMode::Gray),
            "color" => Ok(RenderMode::Color),
            "binary" => Ok(RenderMode::Binary),
            other => Err(format!("unknown mode `{other}` (gray|color|binary)")),
        }
    }
}

/// Coordinate frame the CPPN sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    /// Band-local `(u, v, d)` with ring inversion and a white background.
    Rings(RingGeometry),
    /// Plain image coordinates scaled to `[-1, 1]`, no rings (ablation).
    Global,
}

/// Value of one ring-frame sample before any binary thresholding, or `None`
/// for background. Works at subpixel positions so matched-phase points can be
/// probed directly.
pub fn shade_point(
    net: &CppnNetwork,
    px: f64,
    py: f64,
    geom: &RingGeometry,
    out: &mut [f64],
) -> Option<PatternCoords> {
    shade_rings(net, px, py, geom, &mut Vec::new(), out)
}

fn shade_rings(
    net: &CppnNetwork,
    px: f64,
    py: f64,
    geom: &RingGeometry,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) -> Option<PatternCoords> {
    let pc = pattern_coords(px, py, geom);
    if !pc.inside {
        return None;
    }
    let d = pc.u.hypot(pc.v);
    net.activate_into([pc.u, pc.v, d, 1.0], scratch, out);
    // odd bands carry the inverted pattern
    if pc.band_index % 2 != 0 {
        out.iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    Some(pc)
}

pub fn render(
    genome: &CppnGenome,
    frame: &Frame,
    width: usize,
    height: usize,
    mode: RenderMode,
) -> Result<Raster, CppnError> {
    let needed = mode.channels();
    if genome.channels() != needed {
        return Err(CppnError::ChannelMismatch {
            genome: genome.channels(),
            needed,
            mode,
        });
    }
    let net = CppnNetwork::compile(genome)?;
    let mut scratch = Vec::new();
    let mut out = vec![0.0f64; needed];
    let mut data = Vec::with_capacity(width * height * needed);
    let (half_w, half_h) = (width as f64 / 2.0, height as f64 / 2.0);
    for y in 0..height {
        for x in 0..width {
            let shaded = match frame {
                Frame::Rings(geom) => {
                    shade_rings(&net, x as f64, y as f64, geom, &mut scratch, &mut out).is_some()
                }
                Frame::Global => {
                    let gx = (x as f64 - half_w) / half_w;
                    let gy = (y as f64 - half_h) / half_h;
                    net.activate_into([gx, gy, gx.hypot(gy), 1.0], &mut scratch, &mut out);
                    true
                }
            };
            if !shaded {
                data.extend(std::iter::repeat_n(1.0f32, needed));
                continue;
            }
            for &v in &out {
                let v = v as f32;
                data.push(match mode {
                    RenderMode::Binary => {
                        if v >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => v.clamp(0.0, 1.0),
                });
            }
        }
    }
    Ok(Raster::from_data(width, height, needed, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn(innovation_id: u64, from_node: u32, to_node: u32, weight: f64) -> ConnectionGene {
        ConnectionGene {
            innovation_id,
            from_node,
            to_node,
            weight,
            enabled: true,
        }
    }

    /// Output value fixed at `level` regardless of input.
    pub(crate) fn constant_genome(level: f64) -> CppnGenome {
        let mut g = CppnGenome::bare(1);
        g.nodes[INPUT_COUNT].bias = (2.0 * level - 1.0).atanh();
        g
    }

    #[test]
    fn bias_only_network_outputs_half() {
        let g = CppnGenome::bare(1);
        for inputs in [[0.0, 0.0, 0.0, 1.0], [0.7, -0.2, 0.3, 1.0]] {
            assert_eq!(activate(&g, inputs).unwrap(), vec![0.5]);
        }
    }

    #[test]
    fn single_connection_closed_form() {
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(0, 0, 4, 2.0));
        assert_eq!(activate(&g, [0.0, 0.0, 0.0, 1.0]).unwrap(), vec![0.5]);
        let out = activate(&g, [1.0, 0.0, 0.0, 1.0]).unwrap()[0];
        assert!((out - (2.0f64.tanh() + 1.0) / 2.0).abs() < 1e-12);
        assert!((out - 0.9820).abs() < 1e-4);
    }

    #[test]
    fn hidden_identity_path() {
        let mut g = CppnGenome::bare(1);
        g.nodes.push(NodeGene {
            node_id: 5,
            kind: NodeKind::Hidden,
            activation: Activation::Identity,
            bias: 0.0,
        });
        g.connections.push(conn(0, 0, 5, 1.0));
        g.connections.push(conn(1, 5, 4, 3.0));
        assert_eq!(activate(&g, [0.0, 0.5, 0.5, 1.0]).unwrap(), vec![0.5]);
        let v = activate(&g, [0.25, 0.0, 0.0, 1.0]).unwrap()[0];
        assert!((v - (0.75f64.tanh() + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cycles_are_rejected() {
        let mut g = CppnGenome::bare(1);
        for id in [5, 6] {
            g.nodes.push(NodeGene {
                node_id: id,
                kind: NodeKind::Hidden,
                activation: Activation::Tanh,
                bias: 0.0,
            });
        }
        g.connections.push(conn(0, 5, 6, 1.0));
        g.connections.push(conn(1, 6, 5, 1.0));
        g.connections.push(conn(2, 6, 4, 1.0));
        assert!(matches!(
            activate(&g, [0.0; 4]),
            Err(CppnError::CyclicGenome)
        ));
        assert!(creates_cycle(&g, 4, 5));
        assert!(creates_cycle(&g, 6, 6));
        let mut acyclic = CppnGenome::bare(1);
        acyclic.nodes.push(g.nodes[5].clone());
        acyclic.connections.push(conn(0, 0, 5, 1.0));
        acyclic.connections.push(conn(1, 5, 4, 1.0));
        assert!(creates_cycle(&acyclic, 4, 5));
        assert!(!creates_cycle(&acyclic, 1, 5));
    }

    #[test]
    fn validation_catches_layout_errors() {
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(0, 0, 9, 1.0));
        assert!(matches!(g.validate(), Err(CppnError::InvalidGenome(_))));
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(0, 4, 0, 1.0));
        assert!(g.validate().is_err());
        let g = CppnGenome::bare(2);
        assert!(g.validate().is_err());
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(3, 0, 4, 1.0));
        g.connections.push(conn(3, 1, 4, 1.0));
        assert!(g.validate().is_err());
    }

    #[test]
    fn pattern_coords_examples() {
        let geom = RingGeometry {
            center: (0.0, 0.0),
            ring_count: 3,
            band_width: 5.0,
            angular_period: 4,
            inner_radius: 10.0,
        };
        assert!(!pattern_coords(0.0, 0.0, &geom).inside);

        let at_inner = pattern_coords(10.0, 0.0, &geom);
        assert!(at_inner.inside);
        assert_eq!(at_inner.band_index, 0);
        assert_eq!(at_inner.v, -1.0);
        assert_eq!(at_inner.u, triangle(0.0));

        let pc = pattern_coords(0.0, 17.0, &geom);
        assert_eq!(pc.band_index, 1);
        assert!((pc.v - (-0.2)).abs() < 1e-12);
        assert!(pc.inside);

        assert!(!pattern_coords(25.0, 0.0, &geom).inside);
        assert!(pattern_coords(24.9, 0.0, &geom).inside);
    }

    #[test]
    fn triangle_wave_is_continuous_and_bounded() {
        for i in 0..=1000 {
            let p = i as f64 / 250.0;
            let t = triangle(p);
            assert!((-1.0..=1.0).contains(&t));
            assert!((triangle(p + 1e-9) - t).abs() < 1e-7);
        }
        assert_eq!(triangle(0.0), -1.0);
        assert_eq!(triangle(0.5), 1.0);
    }

    #[test]
    fn constant_genome_exposes_inversion_and_binary() {
        let geom = RingGeometry::default_for(160, 120);
        let g = constant_genome(0.3);
        let frame = Frame::Rings(geom);
        let gray = render(&g, &frame, 160, 120, RenderMode::Gray).unwrap();
        let bin = render(&g, &frame, 160, 120, RenderMode::Binary).unwrap();
        for y in 0..120 {
            for x in 0..160 {
                let pc = pattern_coords(x as f64, y as f64, &geom);
                let (want_gray, want_bin) = match (pc.inside, pc.band_index % 2) {
                    (false, _) => (1.0, 1.0),
                    (true, 0) => (0.3, 0.0),
                    _ => (0.7, 1.0),
                };
                assert!((gray.get(x, y, 0) - want_gray).abs() < 1e-6, "({x},{y})");
                assert_eq!(bin.get(x, y, 0), want_bin);
            }
        }
    }

    #[test]
    fn adjacent_band_pixels_are_inverted() {
        let geom = RingGeometry::default_for(160, 120);
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(0, 0, 4, 1.3));
        g.connections.push(conn(1, 1, 4, -0.8));
        let img = render(&g, &Frame::Rings(geom), 160, 120, RenderMode::Gray).unwrap();
        // (88+r, 60) and (88+r+16, 60) share u and v
        for r in 0..16 {
            let a = img.get(80 + 8 + r, 60, 0);
            let b = img.get(80 + 8 + r + 16, 60, 0);
            assert!((a + b - 1.0).abs() < 1e-6, "r = {r}: {a} vs {b}");
        }
    }

    #[test]
    fn render_checks_channels() {
        let g = CppnGenome::bare(1);
        let frame = Frame::Rings(RingGeometry::default_for(160, 120));
        assert!(matches!(
            render(&g, &frame, 160, 120, RenderMode::Color),
            Err(CppnError::ChannelMismatch { .. })
        ));
        let c = CppnGenome::bare(3);
        let img = render(&c, &frame, 160, 120, RenderMode::Color).unwrap();
        assert_eq!(img.channels(), 3);
    }

    #[test]
    fn global_frame_has_no_background() {
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(0, 0, 4, 2.0));
        let img = render(&g, &Frame::Global, 32, 24, RenderMode::Gray).unwrap();
        assert!(img.get(0, 12, 0) < 0.1);
        assert!(img.get(31, 12, 0) > 0.9);
    }

    #[test]
    fn geometry_validation() {
        assert!(RingGeometry::default_for(160, 120)
            .validate(160, 120)
            .is_ok());
        let mut g = RingGeometry::default_for(160, 120);
        g.ring_count = 1;
        assert!(g.validate(160, 120).is_err());
        let mut g = RingGeometry::default_for(160, 120);
        g.band_width = 30.0;
        assert!(g.validate(160, 120).is_err());
    }

    #[test]
    fn genome_json_field_names() {
        let mut g = CppnGenome::bare(1);
        g.connections.push(conn(7, 2, 4, 0.5));
        let json = serde_json::to_value(&g).unwrap();
        let c = &json["connections"][0];
        for key in ["innovation_id", "from_node", "to_node", "weight", "enabled"] {
            assert!(c.get(key).is_some(), "{key}");
        }
        let n = &json["nodes"][4];
        assert_eq!(n["kind"], "output");
        assert_eq!(n["activation"], "identity");
        assert!(n.get("node_id").is_some() && n.get("bias").is_some());
        let back: CppnGenome = serde_json::from_value(json).unwrap();
        assert_eq!(back, g);
    }
}
