use std::fmt;

use super::{LayerKind, NetGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeShape {
    pub name: String,
    pub kind: LayerKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Rows (and columns) trimmed from each input before this node: the
    /// center crop of a concat, or the trailing row of an odd pool input.
    pub crops: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    pub input_extent: usize,
    pub nodes: Vec<NodeShape>,
    pub output: usize,
}

impl ShapeTrace {
    pub fn output_extent(&self) -> usize {
        self.nodes[self.output].height
    }

    pub fn node(&self, name: &str) -> Option<&NodeShape> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

/// Propagates `C x H x W` through the graph for a square input.
pub fn shape_trace(graph: &NetGraph, input_extent: usize) -> Result<ShapeTrace> {
    let channels = graph.channels();
    let mut nodes: Vec<NodeShape> = Vec::with_capacity(graph.nodes().len());
    for (i, node) in graph.nodes().iter().enumerate() {
        let l = &node.layer;
        let fail = |detail: String| Error::Extent {
            node: l.name.clone(),
            detail,
        };
        let input = node.inputs.first().map(|&j| &nodes[j]);
        let mut crops = Vec::new();
        let extent = match l.kind {
            LayerKind::Input => input_extent,
            LayerKind::Conv | LayerKind::DilatedConv => {
                let shrink = l.repeat * l.dilation * (l.kernel_size - 1);
                let h = input.unwrap().height;
                if h <= shrink {
                    return Err(fail(format!("{h}px input cannot absorb a {shrink}px valid-conv shrink")));
                }
                h - shrink
            }
            LayerKind::MaxPool => {
                let h = input.unwrap().height;
                if h < 2 {
                    return Err(fail(format!("cannot pool a {h}px map")));
                }
                crops.push(h % 2);
                h / 2
            }
            LayerKind::TransposeConv => 2 * input.unwrap().height,
            LayerKind::ConcatCrop => {
                let h = node.inputs.iter().map(|&j| nodes[j].height).min().unwrap();
                crops = node.inputs.iter().map(|&j| nodes[j].height - h).collect();
                h
            }
            LayerKind::Output => input.unwrap().height,
        };
        if extent == 0 {
            return Err(fail("zero extent".into()));
        }
        nodes.push(NodeShape {
            name: l.name.clone(),
            kind: l.kind,
            channels: channels[i],
            height: extent,
            width: extent,
            crops,
        });
    }
    Ok(ShapeTrace {
        input_extent,
        nodes,
        output: graph.output(),
    })
}

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>5} {:>9}  crops", "node", "C", "HxW")?;
        for n in &self.nodes {
            let hw = format!("{}x{}", n.height, n.width);
            write!(f, "{:<12} {:>5} {:>9}", n.name, n.channels, hw)?;
            if !n.crops.is_empty() {
                let c: Vec<String> = n.crops.iter().map(|c| c.to_string()).collect();
                write!(f, "  {}", c.join(","))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
