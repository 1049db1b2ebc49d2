//! Network topologies as declarative layer graphs.
//!
//! Every 3x3 convolution is unpadded ("valid"), so each one trims a border
//! of `dilation` pixels; together with three 2x2 poolings and three 2x
//! up-convolutions this maps a 128x128 frame onto an 82x82 probability map
//! for all four models. Skip connections center-crop to the smaller map.

mod checkpoint;
mod network;
mod trace;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use network::{ForwardPass, Network, Param, ParamRole, ParamSpec};
pub use trace::{shape_trace, NodeShape, ShapeTrace};

/// Parameter count of the original full-size UNet, used only as a
/// reference constant for size ratios.
pub const REFERENCE_UNET_PARAMS: u64 = 31_042_369;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    SUNet,
    SDeepLab,
    BowNet,
    WBowNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::SUNet,
        ModelKind::SDeepLab,
        ModelKind::BowNet,
        ModelKind::WBowNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SUNet => "sUNet",
            ModelKind::SDeepLab => "sDeepLab",
            ModelKind::BowNet => "BowNet",
            ModelKind::WBowNet => "wBowNet",
        }
    }

    /// Stable numeric tag used in checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::SUNet => 1,
            ModelKind::SDeepLab => 2,
            ModelKind::BowNet => 3,
            ModelKind::WBowNet => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Filter count of the first level in the published configuration.
    pub fn default_filter_base(self) -> usize {
        match self {
            ModelKind::SUNet | ModelKind::SDeepLab => 32,
            ModelKind::BowNet | ModelKind::WBowNet => 16,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Which published parameter table a build reproduces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Online-augmentation models (the main results table).
    #[default]
    Standard,
    /// Offline-augmentation models, whose published counts differ slightly:
    /// wBowNet gains the bottleneck concat with the dilated path, BowNet
    /// gains batchnorm after each up-convolution.
    Offline,
}

impl Variant {
    pub fn tag(self) -> u32 {
        match self {
            Variant::Standard => 0,
            Variant::Offline => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Variant::Standard),
            1 => Some(Variant::Offline),
            _ => None,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "online" => Ok(Variant::Standard),
            "offline" => Ok(Variant::Offline),
            _ => Err(Error::invalid(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// 3 or 5.
    pub kernel_size: usize,
    /// Overrides [`ModelKind::default_filter_base`]; channel counts scale
    /// linearly with it.
    pub filter_base: Option<usize>,
    pub variant: Variant,
    pub dropout: f64,
    pub input_extent: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            filter_base: None,
            variant: Variant::Standard,
            dropout: 0.0,
            input_extent: 128,
        }
    }
}

impl ArchConfig {
    pub fn with_filter_base(mut self, base: usize) -> Self {
        self.filter_base = Some(base);
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv,
    DilatedConv,
    TransposeConv,
    MaxPool,
    ConcatCrop,
    /// 1x1 convolution to a single channel followed by a sigmoid.
    Output,
}

/// How a layer is normalized and how its normalization is counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    None,
    /// gamma and beta counted (2 per channel).
    Affine,
    /// gamma, beta and the two running statistics counted (4 per channel).
    Tracked,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    /// Output channels for convolutions; 0 where derived from inputs.
    pub kernels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// Consecutive copies; the first maps the input channels to `kernels`.
    pub repeat: usize,
    pub batchnorm: BnMode,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub layer: LayerDef,
    pub inputs: Vec<usize>,
}

/// Layer graph in topological order; node 0 is the input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGraph {
    pub kind: ModelKind,
    pub config: ArchConfig,
    nodes: Vec<GraphNode>,
    output: usize,
}

impl NetGraph {
    pub fn build(kind: ModelKind, config: ArchConfig) -> Result<Self> {
        if config.kernel_size != 3 && config.kernel_size != 5 {
            return Err(Error::invalid(format!(
                "kernel size must be 3 or 5, got {}",
                config.kernel_size
            )));
        }
        if config.filter_base == Some(0) {
            return Err(Error::invalid("filter base must be positive"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        let base = config.filter_base.unwrap_or(kind.default_filter_base());
        let mut b = Builder::new(&config);
        match kind {
            ModelKind::SUNet => build_sunet(&mut b, base),
            ModelKind::SDeepLab => build_sdeeplab(&mut b, base),
            ModelKind::BowNet => build_bownet(&mut b, base),
            ModelKind::WBowNet => build_wbownet(&mut b, base),
        }
        let output = b.nodes.len() - 1;
        let graph = Self {
            kind,
            config,
            nodes: b.nodes,
            output,
        };
        shape_trace(&graph, graph.config.input_extent)?;
        Ok(graph)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn filter_base(&self) -> usize {
        self.config.filter_base.unwrap_or(self.kind.default_filter_base())
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.layer.name == name)
    }

    /// Nodes whose value feeds the output.
    pub fn reachable(&self) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        live[self.output] = true;
        for i in (0..self.nodes.len()).rev() {
            if live[i] {
                for &j in &self.nodes[i].inputs {
                    live[j] = true;
                }
            }
        }
        live
    }

    /// Output channels of every node.
    pub fn channels(&self) -> Vec<usize> {
        let mut ch = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let c = match node.layer.kind {
                LayerKind::Input => 1,
                LayerKind::MaxPool => ch[node.inputs[0]],
                LayerKind::ConcatCrop => node.inputs.iter().map(|&i| ch[i]).sum(),
                LayerKind::Output => 1,
                _ => node.layer.kernels,
            };
            ch.push(c);
        }
        ch
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        network::param_specs(self)
    }

    /// Kernels, biases and counted normalization parameters.
    pub fn count_params(&self) -> u64 {
        network::param_specs(self).iter().map(|s| s.counted() as u64).sum()
    }

    /// Single-precision storage for the counted parameters.
    pub fn memory_bytes(&self) -> u64 {
        4 * self.count_params()
    }

    pub fn pool_count(&self) -> usize {
        self.count_kind(LayerKind::MaxPool)
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.nodes.iter().filter(|n| n.layer.kind == kind).count()
    }

    /// Names of nodes with no inputs other than the graph input, i.e. the
    /// roots of parallel paths.
    pub fn roots(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.inputs == [0])
            .map(|n| n.layer.name.as_str())
            .collect()
    }

    /// Drops one of the two paths of a BowNet-style graph, replacing the
    /// final concat with its surviving input. Structural sanity checks
    /// only; the result is not a trained configuration.
    pub fn without_path(&self, path: usize) -> Result<Self> {
        let last = self
            .nodes
            .iter()
            .rposition(|n| n.layer.kind == LayerKind::ConcatCrop)
            .ok_or_else(|| Error::invalid("graph has no concat"))?;
        if self.nodes[self.output].inputs != [last] || self.nodes[last].inputs.len() != 2 {
            return Err(Error::invalid("graph does not end in a two-path concat"));
        }
        let keep = self.nodes[last].inputs[1 - path.min(1)];
        let mut g = self.clone();
        g.nodes[self.output].inputs = vec![keep];
        g.prune();
        Ok(g)
    }

    fn prune(&mut self) {
        let live = self.reachable();
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if live[i] || i == 0 {
                remap[i] = nodes.len();
                let mut n = node.clone();
                n.inputs = n.inputs.iter().map(|&j| remap[j]).collect();
                nodes.push(n);
            }
        }
        self.output = remap[self.output];
        self.nodes = nodes;
    }
}

struct Builder {
    nodes: Vec<GraphNode>,
    kernel_size: usize,
    dropout: f64,
    variant: Variant,
}

impl Builder {
    fn new(config: &ArchConfig) -> Self {
        let input = GraphNode {
            layer: LayerDef {
                name: "INPUT".into(),
                kind: LayerKind::Input,
                kernels: 1,
                kernel_size: 0,
                dilation: 1,
                repeat: 1,
                batchnorm: BnMode::None,
                dropout: 0.0,
            },
            inputs: vec![],
        };
        Self {
            nodes: vec![input],
            kernel_size: config.kernel_size,
            dropout: config.dropout,
            variant: config.variant,
        }
    }

    fn push(&mut self, layer: LayerDef, inputs: Vec<usize>) -> usize {
        self.nodes.push(GraphNode { layer, inputs });
        self.nodes.len() - 1
    }

    fn layer(&self, name: &str, kind: LayerKind) -> LayerDef {
        LayerDef {
            name: name.into(),
            kind,
            kernels: 0,
            kernel_size: 0,
            dilation: 1,
            repeat: 1,
            batchnorm: BnMode::None,
            dropout: 0.0,
        }
    }

    fn conv(&mut self, name: &str, from: usize, kernels: usize, dilation: usize, repeat: usize) -> usize {
        let kind = if dilation > 1 {
            LayerKind::DilatedConv
        } else {
            LayerKind::Conv
        };
        let layer = LayerDef {
            kernels,
            kernel_size: self.kernel_size,
            dilation,
            repeat,
            batchnorm: BnMode::Affine,
            dropout: self.dropout,
            ..self.layer(name, kind)
        };
        self.push(layer, vec![from])
    }

    fn pool(&mut self, name: &str, from: usize) -> usize {
        let layer = self.layer(name, LayerKind::MaxPool);
        self.push(layer, vec![from])
    }

    fn up(&mut self, name: &str, from: usize, kernels: usize, bn: BnMode) -> usize {
        let layer = LayerDef {
            kernels,
            kernel_size: 2,
            batchnorm: bn,
            ..self.layer(name, LayerKind::TransposeConv)
        };
        self.push(layer, vec![from])
    }

    fn concat(&mut self, name: &str, inputs: Vec<usize>) -> usize {
        let layer = self.layer(name, LayerKind::ConcatCrop);
        self.push(layer, inputs)
    }

    fn output(&mut self, from: usize) -> usize {
        let layer = LayerDef {
            kernels: 1,
            kernel_size: 1,
            ..self.layer("OUTPUT", LayerKind::Output)
        };
        self.push(layer, vec![from])
    }
}

/// Encoder shared by sUNet, BowNet and wBowNet; returns the level outputs
/// (c1, c2, c3) and the bottleneck input.
fn encoder(b: &mut Builder, f: usize, level1_convs: usize) -> [usize; 4] {
    let c1 = b.conv("CONV-1", 0, f, 1, level1_convs);
    let p1 = b.pool("POOL-1", c1);
    let c2 = b.conv("CONV-2", p1, 2 * f, 1, 1);
    let p2 = b.pool("POOL-2", c2);
    let c3 = b.conv("CONV-3", p2, 4 * f, 1, 1);
    let p3 = b.pool("POOL-3", c3);
    [c1, c2, c3, p3]
}

fn build_sunet(b: &mut Builder, f: usize) {
    let [c1, c2, c3, p3] = encoder(b, f, 1);
    let c5 = b.conv("CONV-5", p3, 8 * f, 1, 1);
    let c8 = decoder(b, f, c5, [c3, c2, c1], [None; 3], BnMode::None);
    b.output(c8);
}

fn build_sdeeplab(b: &mut Builder, f: usize) {
    let c1 = b.conv("CONV-1", 0, f, 1, 1);
    let d2 = b.conv("CONV-D2", c1, 2 * f, 2, 1);
    let d4 = b.conv("CONV-D4", d2, 4 * f, 4, 1);
    let d8 = b.conv("CONV-D8", d4, 8 * f, 8, 1);
    let d4b = b.conv("CONV-D4-2", d8, 4 * f, 4, 1);
    let d2b = b.conv("CONV-D2-2", d4b, 2 * f, 2, 1);
    let c4 = b.conv("CONV-4", d2b, f, 1, 1);
    let c5 = b.conv("CONV-5", c4, f, 1, 1);
    b.output(c5);
}

/// Decoder with skip concats; `extra` adds one more source per level
/// (deepest first), as in the weaved model.
fn decoder(
    b: &mut Builder,
    f: usize,
    bottom: usize,
    skips: [usize; 3],
    extra: [Option<usize>; 3],
    up_bn: BnMode,
) -> usize {
    let mut x = bottom;
    let names = [
        ("UP-CONV-1", "CONCAT-1", "CONV-6", 4),
        ("UP-CONV-2", "CONCAT-2", "CONV-7", 2),
        ("UP-CONV-3", "CONCAT-3", "CONV-8", 1),
    ];
    for (level, (up, cat, conv, mult)) in names.into_iter().enumerate() {
        let u = b.up(up, x, mult * f, up_bn);
        let mut srcs = vec![u, skips[level]];
        srcs.extend(extra[level]);
        let k = b.concat(cat, srcs);
        x = b.conv(conv, k, mult * f, 1, 1);
    }
    x
}

fn build_bownet(b: &mut Builder, f: usize) {
    let [c1, c2, c3, p3] = encoder(b, f, 2);
    let c5 = b.conv("CONV-5", p3, 8 * f, 1, 1);
    let up_bn = match b.variant {
        Variant::Standard => BnMode::None,
        Variant::Offline => BnMode::Tracked,
    };
    let c8 = decoder(b, f, c5, [c3, c2, c1], [None; 3], up_bn);
    // Path 2: dilated, no pooling, branching after the first level.
    let d2 = b.conv("CONV-D2", c1, 2 * f, 2, 1);
    let d4 = b.conv("CONV-D4", d2, 4 * f, 4, 1);
    let d8 = b.conv("CONV-D8", d4, 8 * f, 8, 1);
    let d4b = b.conv("CONV-D4-2", d8, 4 * f, 4, 1);
    let d2b = b.conv("CONV-D2-2", d4b, 2 * f, 2, 1);
    let c4 = b.conv("CONV-4", d2b, f, 1, 1);
    let k = b.concat("CONCAT-4", vec![c8, c4]);
    b.output(k);
}

fn build_wbownet(b: &mut Builder, f: usize) {
    let [c1, c2, c3, p3] = encoder(b, f, 2);
    let d2 = b.conv("CONV-D2", c1, 2 * f, 2, 4);
    let d4 = b.conv("CONV-D4", d2, 4 * f, 4, 4);
    let d8 = b.conv("CONV-D8", d4, 8 * f, 8, 1);
    let d4b = b.conv("CONV-D4-2", d8, 4 * f, 4, 4);
    let d2b = b.conv("CONV-D2-2", d4b, 2 * f, 2, 4);
    let c4 = b.conv("CONV-4", p3, 8 * f, 1, 1);
    // The published online-augmentation count leaves CONV-D2-2 out of the
    // bottleneck concat (its weights exist but do not reach the output).
    let bottom = match b.variant {
        Variant::Standard => c4,
        Variant::Offline => b.concat("CONCAT-0", vec![c4, d2b]),
    };
    let c8 = decoder(b, f, bottom, [c3, c2, c1], [Some(d4b), Some(d8), Some(d2)], BnMode::None);
    b.output(c8);
}
