use crate::error::{Error, Result};
use crate::ops::{BatchNormSpec, Conv3dSpec};

/// Which convolutions carry a bias term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiasConvention {
    /// Every convolution except the 1×1×1 group convolutions. This is the
    /// layout whose parameter and FLOP totals reproduce the published costs
    /// (51,616 parameters for 200 bands / 16 classes).
    Calibrated,
    /// Convolutions directly followed by batch norm carry no bias.
    NoneBeforeBn,
    /// Every convolution carries a bias.
    Everywhere,
}

impl BiasConvention {
    pub const ALL: [BiasConvention; 3] = [
        BiasConvention::Calibrated,
        BiasConvention::NoneBeforeBn,
        BiasConvention::Everywhere,
    ];

    pub fn code(self) -> u32 {
        match self {
            BiasConvention::Calibrated => 0,
            BiasConvention::NoneBeforeBn => 1,
            BiasConvention::Everywhere => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.code() == code)
            .ok_or_else(|| Error::Config(format!("unknown bias convention code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasConvention::Calibrated => "calibrated",
            BiasConvention::NoneBeforeBn => "none-before-bn",
            BiasConvention::Everywhere => "everywhere",
        }
    }

    fn has_bias(self, role: ConvRole) -> bool {
        match self {
            BiasConvention::Calibrated => role != ConvRole::Group,
            BiasConvention::NoneBeforeBn => !role.followed_by_bn(),
            BiasConvention::Everywhere => true,
        }
    }
}

/// Which branch carries the second depthwise + pointwise pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchLayout {
    /// Branch 2 is the longer one (five rows in the layer table).
    ExtraPairInSecond,
    /// Branch 1 is the longer one (the prose walkthrough).
    ExtraPairInFirst,
}

impl BranchLayout {
    pub fn code(self) -> u32 {
        match self {
            BranchLayout::ExtraPairInSecond => 0,
            BranchLayout::ExtraPairInFirst => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(BranchLayout::ExtraPairInSecond),
            1 => Ok(BranchLayout::ExtraPairInFirst),
            _ => Err(Error::Config(format!("unknown branch layout code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ConvRole {
    Stem,
    Group,
    Depthwise,
    Pointwise,
}

impl ConvRole {
    fn followed_by_bn(self) -> bool {
        matches!(self, ConvRole::Stem | ConvRole::Group | ConvRole::Pointwise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    /// Spatial patch extent (square).
    pub patch: usize,
    pub bands: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    /// Output width of the 1×1×1 group convolution opening each branch.
    pub expand_channels: usize,
    pub branch_channels: usize,
    pub head_channels: usize,
    pub groups: usize,
    pub stem_kernel_depth: usize,
    pub stem_stride: usize,
    pub bias: BiasConvention,
    pub layout: BranchLayout,
}

impl NetworkConfig {
    pub fn new(patch: usize, bands: usize, num_classes: usize) -> Self {
        NetworkConfig {
            patch,
            bands,
            num_classes,
            stem_channels: 24,
            expand_channels: 48,
            branch_channels: 12,
            head_channels: 60,
            groups: 3,
            stem_kernel_depth: 7,
            stem_stride: 2,
            bias: BiasConvention::Calibrated,
            layout: BranchLayout::ExtraPairInSecond,
        }
    }

    pub fn with_bias(mut self, bias: BiasConvention) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_layout(mut self, layout: BranchLayout) -> Self {
        self.layout = layout;
        self
    }

    /// Spectral depth after the strided stem convolution.
    pub fn stem_depth(&self) -> usize {
        (self.bands - self.stem_kernel_depth) / self.stem_stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands < 9 {
            return Err(Error::Config(format!(
                "at least 9 spectral bands are required, got {}",
                self.bands
            )));
        }
        if self.patch == 0 || self.num_classes == 0 {
            return Err(Error::Config("patch size and class count must be positive".into()));
        }
        if self.patch % 2 == 0 {
            return Err(Error::Config(format!("patch size must be odd, got {}", self.patch)));
        }
        let widths = [
            self.stem_channels,
            self.expand_channels,
            self.branch_channels,
            self.head_channels,
            self.groups,
            self.stem_kernel_depth,
            self.stem_stride,
        ];
        if widths.contains(&0) {
            return Err(Error::Config(format!("channel widths must be positive: {self:?}")));
        }
        if self.stem_channels % self.groups != 0 || self.expand_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups {} must divide stem width {} and expansion width {}",
                self.groups, self.stem_channels, self.expand_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input,
    Conv(Conv3dSpec),
    BatchNorm(BatchNormSpec),
    Relu,
    Concat,
    GlobalAvgPool,
    FullyConnected { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of producer layers, all smaller than this layer's own index.
    pub inputs: Vec<usize>,
}

impl LayerSpec {
    /// Short kind label: `conv3d`, `groupConv3d`, `depthwise3d`, `pointwise3d`, ...
    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            LayerKind::Input => "input",
            LayerKind::Conv(s) if s.is_depthwise() && s.groups > 1 => "depthwise3d",
            LayerKind::Conv(s) if s.groups > 1 => "groupConv3d",
            LayerKind::Conv(s) if s.is_pointwise() => "pointwise3d",
            LayerKind::Conv(_) => "conv3d",
            LayerKind::BatchNorm(_) => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Concat => "concat",
            LayerKind::GlobalAvgPool => "globalAvgPool",
            LayerKind::FullyConnected { .. } => "fullyConnected",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv(_) | LayerKind::BatchNorm(_) | LayerKind::FullyConnected { .. }
        )
    }
}

/// The architecture as a DAG in topological order; layer 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub config: NetworkConfig,
    pub layers: Vec<LayerSpec>,
}

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<usize>) -> usize {
        self.layers.push(LayerSpec { name, kind, inputs });
        self.layers.len() - 1
    }

    fn conv(&mut self, name: String, spec: Conv3dSpec, from: usize) -> usize {
        self.push(name, LayerKind::Conv(spec), vec![from])
    }

    /// `conv → BN → ReLU`; returns the ReLU index.
    fn conv_bn_relu(&mut self, prefix: &str, spec: Conv3dSpec, from: usize) -> usize {
        let c = self.conv(format!("{prefix}.conv"), spec, from);
        let b = self.push(
            format!("{prefix}.bn"),
            LayerKind::BatchNorm(BatchNormSpec::new(spec.out_channels)),
            vec![c],
        );
        self.push(format!("{prefix}.relu"), LayerKind::Relu, vec![b])
    }
}

pub fn build_network(cfg: &NetworkConfig) -> Result<NetworkGraph> {
    cfg.validate()?;
    let depth = cfg.stem_depth();
    let bias = |role| cfg.bias.has_bias(role);
    let mut b = Builder { layers: Vec::new() };

    let input = b.push("input".into(), LayerKind::Input, vec![]);
    let stem = b.conv_bn_relu(
        "stem",
        Conv3dSpec::new(1, cfg.stem_channels, [1, 1, cfg.stem_kernel_depth])
            .with_stride([1, 1, cfg.stem_stride])
            .with_bias(bias(ConvRole::Stem)),
        input,
    );

    let branch = |b: &mut Builder, prefix: &str, long: bool| {
        let g = b.conv_bn_relu(
            &format!("{prefix}.group"),
            Conv3dSpec::pointwise(cfg.stem_channels, cfg.expand_channels)
                .with_groups(cfg.groups)
                .with_bias(bias(ConvRole::Group)),
            stem,
        );
        let dw = b.conv(
            format!("{prefix}.dw1"),
            Conv3dSpec::depthwise(cfg.expand_channels, [3, 3, 3], [1, 1, 1])
                .with_bias(bias(ConvRole::Depthwise)),
            g,
        );
        let mut out = b.conv_bn_relu(
            &format!("{prefix}.pw1"),
            Conv3dSpec::pointwise(cfg.expand_channels, cfg.branch_channels)
                .with_bias(bias(ConvRole::Pointwise)),
            dw,
        );
        if long {
            let dw2 = b.conv(
                format!("{prefix}.dw2"),
                Conv3dSpec::depthwise(cfg.branch_channels, [3, 3, 3], [1, 1, 1])
                    .with_bias(bias(ConvRole::Depthwise)),
                out,
            );
            out = b.conv_bn_relu(
                &format!("{prefix}.pw2"),
                Conv3dSpec::pointwise(cfg.branch_channels, cfg.branch_channels)
                    .with_bias(bias(ConvRole::Pointwise)),
                dw2,
            );
        }
        out
    };
    let first_long = cfg.layout == BranchLayout::ExtraPairInFirst;
    let b1 = branch(&mut b, "branch1", first_long);
    let b2 = branch(&mut b, "branch2", !first_long);

    let cat = b.push("concat".into(), LayerKind::Concat, vec![stem, b1, b2]);
    let concat_channels = cfg.stem_channels + 2 * cfg.branch_channels;
    let head_dw = b.conv(
        "head.dw".into(),
        Conv3dSpec::depthwise(concat_channels, [3, 3, depth], [1, 1, 0])
            .with_bias(bias(ConvRole::Depthwise)),
        cat,
    );
    let head = b.conv_bn_relu(
        "head.pw",
        Conv3dSpec::pointwise(concat_channels, cfg.head_channels)
            .with_bias(bias(ConvRole::Pointwise)),
        head_dw,
    );
    let pool = b.push("pool".into(), LayerKind::GlobalAvgPool, vec![head]);
    b.push(
        "fc".into(),
        LayerKind::FullyConnected {
            inputs: cfg.head_channels,
            outputs: cfg.num_classes,
        },
        vec![pool],
    );

    let graph = NetworkGraph {
        config: *cfg,
        layers: b.layers,
    };
    graph.validate()?;
    Ok(graph)
}

impl NetworkGraph {
    pub fn output(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Consumers of each layer.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for &j in &l.inputs {
                out[j].push(i);
            }
        }
        out
    }

    /// DAG order, arity and BN placement checks.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs.iter().any(|&j| j >= i) {
                return Err(Error::Config(format!("layer `{}` is not in topological order", l.name)));
            }
            let arity_ok = match l.kind {
                LayerKind::Input => l.inputs.is_empty() && i == 0,
                LayerKind::Concat => !l.inputs.is_empty(),
                _ => l.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::Config(format!("layer `{}` has a bad input list", l.name)));
            }
        }
        if let Some((dw, _)) = self.depthwise_pointwise_violations().first() {
            return Err(Error::Config(format!(
                "depthwise layer `{}` is followed by normalization or activation",
                self.layers[*dw].name
            )));
        }
        Ok(())
    }

    /// `(depthwise, consumer)` pairs where a depthwise convolution feeds
    /// anything other than a convolution. Empty for a well-formed graph.
    pub fn depthwise_pointwise_violations(&self) -> Vec<(usize, usize)> {
        let consumers = self.consumers();
        let mut bad = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let LayerKind::Conv(s) = &l.kind {
                if s.is_depthwise() && s.groups > 1 {
                    for &c in &consumers[i] {
                        if !matches!(self.layers[c].kind, LayerKind::Conv(_)) {
                            bad.push((i, c));
                        }
                    }
                }
            }
        }
        bad
    }

    /// Output shape of every layer for a given input shape `(n, 1, h, w, bands)`.
    pub fn shape_ledger(&self, input: [usize; 5]) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let s = infer_shape(l, &shapes, input).map_err(|e| e.in_layer(&l.name))?;
            shapes.push(s);
        }
        Ok(shapes)
    }
}

fn infer_shape(l: &LayerSpec, shapes: &[Vec<usize>], input: [usize; 5]) -> Result<Vec<usize>> {
    let src = |k: usize| &shapes[l.inputs[k]];
    match &l.kind {
        LayerKind::Input => {
            if input[1] != 1 {
                return Err(Error::Shape(format!("input must have one channel, got {:?}", input)));
            }
            Ok(input.to_vec())
        }
        LayerKind::Conv(spec) => {
            let s = src(0);
            let sh = crate::tensor::Shape5::new(s[0], s[1], s[2], s[3], s[4])?;
            Ok(spec.output_shape(sh)?.dims().to_vec())
        }
        LayerKind::BatchNorm(spec) => {
            let s = src(0);
            if s.len() != 5 || s[1] != spec.channels {
                return Err(Error::Shape(format!("batch norm over {} channels got {:?}", spec.channels, s)));
            }
            Ok(s.clone())
        }
        LayerKind::Relu => Ok(src(0).clone()),
        LayerKind::Concat => {
            let first = src(0).clone();
            let mut c = 0;
            for k in 0..l.inputs.len() {
                let s = src(k);
                if s.len() != 5 || (s[0], s[2], s[3], s[4]) != (first[0], first[2], first[3], first[4]) {
                    return Err(Error::Shape(format!("concat inputs disagree: {:?} vs {:?}", s, first)));
                }
                c += s[1];
            }
            Ok(vec![first[0], c, first[2], first[3], first[4]])
        }
        LayerKind::GlobalAvgPool => {
            let s = src(0);
            if s.len() != 5 {
                return Err(Error::Shape(format!("pooling expects rank 5, got {s:?}")));
            }
            Ok(vec![s[0], s[1]])
        }
        LayerKind::FullyConnected { inputs, outputs } => {
            let s = src(0);
            if s.len() != 2 || s[1] != *inputs {
                return Err(Error::Shape(format!("fully connected expects width {inputs}, got {s:?}")));
            }
            Ok(vec![s[0], *outputs])
        }
    }
}

/// Render a shape the way the layer table does: `(h×w×d,c)` or `(1×c)`.
pub fn table_notation(shape: &[usize]) -> String {
    match shape {
        [_, c, h, w, d] => format!("({h}×{w}×{d},{c})"),
        [_, c] => format!("(1×{c})"),
        other => format!("{other:?}"),
    }
}
