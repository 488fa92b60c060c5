//! Cost-annotated operator graphs for common CNN architectures.
//!
//! Topologies follow the published architectures but convolutions are
//! unpadded, so spatial sizes shrink faster than in the originals; input
//! resolutions are chosen so every network still ends at 1x1 before its
//! classifier. Classifiers emit 100 classes and channel widths are capped at
//! 512 so that at scale 1 every operator lies inside the profiled sampling
//! ranges. A scale `k` multiplies every hidden channel width by `k`.

use crate::error::{Error, Result};
use crate::graph::{DnnGraph, OpConfig, OperatorNode};

pub const MODEL_NAMES: [&str; 6] = ["alexnet", "vgg16", "googlenet", "resnet18", "mobilenet", "tinyyolo"];

const CLASSES: u32 = 100;

pub fn build_model(name: &str, scale: u32) -> Result<DnnGraph> {
    if scale == 0 {
        return Err(Error::invalid("model scale must be >= 1"));
    }
    match name.to_ascii_lowercase().as_str() {
        "alexnet" => alexnet(scale),
        "vgg16" => vgg16(scale),
        "googlenet" => googlenet(scale),
        "resnet18" => resnet18(scale),
        "mobilenet" => mobilenet(scale),
        "tinyyolo" => tiny_yolo(scale),
        _ => Err(Error::NotFound(format!("model builder '{name}'"))),
    }
}

struct Net {
    name: &'static str,
    input: (u32, u32),
    scale: u32,
    nodes: Vec<OperatorNode>,
    edges: Vec<(usize, usize)>,
    layer: usize,
    block: String,
    tail: Option<usize>,
}

impl Net {
    fn new(name: &'static str, hw: u32, channels: u32, scale: u32) -> Self {
        Net {
            name,
            input: (hw, channels),
            scale,
            nodes: Vec::new(),
            edges: Vec::new(),
            layer: 0,
            block: String::new(),
            tail: None,
        }
    }

    /// Starts a new layer-level block; the first call names block 0.
    fn block(&mut self, label: &str) {
        if !self.nodes.is_empty() && self.nodes.last().map(|n| n.layer) == Some(self.layer) {
            self.layer += 1;
        }
        self.block = label.to_string();
    }

    /// (hw, channels) produced by `from`, or the network input.
    fn shape(&self, from: Option<usize>) -> (u32, u32) {
        match from {
            Some(id) => (self.nodes[id].out_hw, self.nodes[id].config.cout),
            None => self.input,
        }
    }

    fn flat(&self, from: Option<usize>) -> u32 {
        match from {
            Some(id) => self.nodes[id].config.output_elements() as u32,
            None => self.input.0 * self.input.0 * self.input.1,
        }
    }

    fn push(&mut self, cfg: OpConfig, inputs: &[usize]) -> Result<usize> {
        let id = self.nodes.len();
        let label = format!("{}/{}{}", self.block, cfg.kind, id);
        self.nodes.push(OperatorNode::new(id, label, self.layer, cfg)?);
        self.edges.extend(inputs.iter().map(|&p| (p, id)));
        self.tail = Some(id);
        Ok(id)
    }

    fn inputs(from: Option<usize>) -> Vec<usize> {
        from.into_iter().collect()
    }

    fn conv_at(&mut self, from: Option<usize>, k: u32, s: u32, cout: u32) -> Result<usize> {
        let (hw, c) = self.shape(from);
        self.push(OpConfig::conv(hw, c, cout * self.scale, k, s), &Self::inputs(from))
    }

    fn conv(&mut self, k: u32, s: u32, cout: u32) -> Result<usize> {
        self.conv_at(self.tail, k, s, cout)
    }

    /// Depthwise convolution, modelled as a one-input-channel convolution per
    /// output channel (identical multiply-accumulate count).
    fn depthwise(&mut self, k: u32, s: u32) -> Result<usize> {
        let (hw, c) = self.shape(self.tail);
        self.push(OpConfig::conv(hw, 1, c, k, s), &Self::inputs(self.tail))
    }

    fn bn_at(&mut self, from: Option<usize>) -> Result<usize> {
        let (hw, c) = self.shape(from);
        self.push(OpConfig::bn(hw, c), &Self::inputs(from))
    }

    fn bn(&mut self) -> Result<usize> {
        self.bn_at(self.tail)
    }

    fn identity(&mut self) -> Result<usize> {
        let (hw, c) = self.shape(self.tail);
        self.push(OpConfig::identity(hw, c), &Self::inputs(self.tail))
    }

    fn max_pool_at(&mut self, from: Option<usize>, k: u32, s: u32) -> Result<usize> {
        let (hw, c) = self.shape(from);
        self.push(OpConfig::max_pool(hw, c, k, s), &Self::inputs(from))
    }

    fn max_pool(&mut self, k: u32, s: u32) -> Result<usize> {
        self.max_pool_at(self.tail, k, s)
    }

    fn avg_pool(&mut self, k: u32, s: u32) -> Result<usize> {
        let (hw, c) = self.shape(self.tail);
        self.push(OpConfig::avg_pool(hw, c, k, s), &Self::inputs(self.tail))
    }

    fn fc(&mut self, cout: u32) -> Result<usize> {
        let cin = self.flat(self.tail);
        self.push(OpConfig::fc(cin, cout), &Self::inputs(self.tail))
    }

    fn add(&mut self, inputs: &[usize]) -> Result<usize> {
        let hw = inputs.iter().map(|&i| self.nodes[i].out_hw).min().unwrap_or(0);
        let c = self.nodes[inputs[0]].config.cout;
        self.push(OpConfig::add(hw, c), inputs)
    }

    fn concat(&mut self, inputs: &[usize]) -> Result<usize> {
        let hw = inputs.iter().map(|&i| self.nodes[i].out_hw).min().unwrap_or(0);
        let c = inputs.iter().map(|&i| self.nodes[i].config.cout).sum();
        self.push(OpConfig::concat(hw, c), inputs)
    }

    fn finish(self) -> Result<DnnGraph> {
        DnnGraph::new(self.name, self.input, self.nodes, self.edges)
    }
}

/// 23 operators in 8 layer blocks: five convolutional, three fully connected.
fn alexnet(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("alexnet", 224, 3, scale);
    n.block("conv1");
    n.conv(7, 3, 64)?;
    n.identity()?;
    n.bn()?;
    n.max_pool(3, 2)?;
    n.block("conv2");
    n.conv(5, 1, 192)?;
    n.identity()?;
    n.bn()?;
    n.max_pool(3, 2)?;
    n.block("conv3");
    n.conv(3, 1, 384)?;
    n.identity()?;
    n.block("conv4");
    n.conv(3, 1, 256)?;
    n.identity()?;
    n.block("conv5");
    n.conv(3, 1, 256)?;
    n.identity()?;
    n.max_pool(3, 3)?;
    n.avg_pool(3, 1)?;
    for name in ["fc6", "fc7"] {
        n.block(name);
        n.identity()?;
        n.fc(512 * scale)?;
        n.identity()?;
    }
    n.block("fc8");
    n.fc(CLASSES)?;
    n.finish()
}

fn vgg16(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("vgg16", 224, 3, scale);
    let stages: [(u32, usize, u32); 5] = [(64, 2, 3), (128, 2, 3), (256, 3, 3), (512, 3, 3), (512, 3, 1)];
    let mut idx = 0;
    for (si, &(width, convs, pool_k)) in stages.iter().enumerate() {
        for ci in 0..convs {
            idx += 1;
            n.block(&format!("conv{idx}"));
            n.conv(3, 1, width)?;
            n.identity()?;
            if ci + 1 == convs {
                n.max_pool(pool_k, if si == 4 { 1 } else { 2 })?;
            }
        }
    }
    for name in ["fc14", "fc15"] {
        n.block(name);
        n.fc(512 * scale)?;
        n.identity()?;
    }
    n.block("fc16");
    n.fc(CLASSES)?;
    n.finish()
}

/// Inception module: 1x1, 1x1 -> 3x3, 1x1 -> 3x3 (stands in for the 5x5
/// branch) and 3x3 max-pool -> 1x1, concatenated after center-cropping.
fn inception(n: &mut Net, name: &str, widths: [u32; 6]) -> Result<usize> {
    n.block(name);
    let entry = n.tail;
    let [b1, r3, b3, r5, b5, pp] = widths;
    let a = n.conv_at(entry, 1, 1, b1)?;
    let r = n.conv_at(entry, 1, 1, r3)?;
    let b = n.conv_at(Some(r), 3, 1, b3)?;
    let r = n.conv_at(entry, 1, 1, r5)?;
    let c = n.conv_at(Some(r), 3, 1, b5)?;
    let p = n.max_pool_at(entry, 3, 1)?;
    let d = n.conv_at(Some(p), 1, 1, pp)?;
    n.concat(&[a, b, c, d])
}

fn googlenet(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("googlenet", 480, 3, scale);
    n.block("stem1");
    n.conv(7, 2, 64)?;
    n.max_pool(3, 2)?;
    n.block("stem2");
    n.conv(1, 1, 64)?;
    n.conv(3, 1, 192)?;
    n.max_pool(3, 2)?;
    inception(&mut n, "inception3a", [64, 96, 128, 16, 32, 32])?;
    inception(&mut n, "inception3b", [128, 128, 192, 32, 96, 64])?;
    n.max_pool(3, 2)?;
    inception(&mut n, "inception4a", [192, 96, 208, 16, 48, 64])?;
    inception(&mut n, "inception4b", [160, 112, 224, 24, 64, 64])?;
    inception(&mut n, "inception4c", [128, 128, 256, 24, 64, 64])?;
    inception(&mut n, "inception4d", [112, 144, 272, 32, 64, 64])?;
    inception(&mut n, "inception4e", [128, 160, 256, 32, 64, 64])?;
    n.max_pool(3, 2)?;
    inception(&mut n, "inception5a", [128, 160, 256, 32, 64, 64])?;
    inception(&mut n, "inception5b", [128, 160, 256, 32, 64, 64])?;
    n.block("classifier");
    n.avg_pool(3, 1)?;
    n.fc(CLASSES)?;
    n.finish()
}

fn basic_block(n: &mut Net, name: &str, width: u32, stride: u32) -> Result<()> {
    n.block(name);
    let entry = n.tail;
    n.conv(3, stride, width)?;
    n.bn()?;
    n.identity()?;
    n.conv(3, 1, width)?;
    let main = n.bn()?;
    let shortcut = match entry {
        Some(e) if stride == 1 && n.nodes[e].config.cout == width * n.scale => e,
        _ => {
            let proj = n.conv_at(entry, 1, stride, width)?;
            n.bn_at(Some(proj))?
        }
    };
    n.add(&[main, shortcut])?;
    n.identity()?;
    Ok(())
}

fn resnet18(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("resnet18", 448, 3, scale);
    n.block("stem");
    n.conv(7, 2, 64)?;
    n.bn()?;
    n.identity()?;
    n.max_pool(3, 2)?;
    for (stage, width) in [64u32, 128, 256, 512].into_iter().enumerate() {
        let stride = if stage == 0 { 1 } else { 2 };
        basic_block(&mut n, &format!("res{}a", stage + 2), width, stride)?;
        basic_block(&mut n, &format!("res{}b", stage + 2), width, 1)?;
    }
    n.block("classifier");
    n.avg_pool(1, 1)?;
    n.fc(CLASSES)?;
    n.finish()
}

fn mobilenet(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("mobilenet", 320, 3, scale);
    n.block("stem");
    n.conv(3, 2, 32)?;
    n.bn()?;
    let blocks: [(u32, u32); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 2),
        (512, 1),
    ];
    for (i, &(width, stride)) in blocks.iter().enumerate() {
        n.block(&format!("dwsep{}", i + 1));
        n.depthwise(3, stride)?;
        n.conv(1, 1, width)?;
        n.bn()?;
    }
    n.block("classifier");
    n.avg_pool(1, 1)?;
    n.fc(CLASSES)?;
    n.finish()
}

fn tiny_yolo(scale: u32) -> Result<DnnGraph> {
    let mut n = Net::new("tinyyolo", 416, 3, scale);
    for (i, width) in [16u32, 32, 64, 128, 256, 512].into_iter().enumerate() {
        n.block(&format!("conv{}", i + 1));
        n.conv(3, 1, width)?;
        n.bn()?;
        if i == 5 {
            n.max_pool(1, 1)?;
        } else {
            n.max_pool(3, 2)?;
        }
    }
    n.block("conv7");
    n.conv(3, 1, 512)?;
    n.bn()?;
    n.block("detect");
    n.conv(1, 1, 125)?;
    n.finish()
}
