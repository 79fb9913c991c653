use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, BatchNormCache,
    Conv2d, Conv2dCache, MaxPool2d, MaxPoolCache, Mode,
};
use super::param::{Buffer, Module, Param};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which feature extractor sits at the bottom of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Bottleneck ResNet-50 with a 2048-wide pooled output.
    ReferenceResnet50,
    /// Small stack of 3×3 conv + batch norm + ReLU blocks; the first block
    /// keeps resolution, every later block halves it.
    ToyCnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Square input side in pixels; inputs are `input_size × input_size × 3`.
    pub input_size: usize,
    /// Width of the globally pooled feature vector.
    pub feature_dim: usize,
    /// Output channels of each toy-cnn block. Ignored for ResNet-50.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub toy_channels: Vec<usize>,
}

pub const RESNET50_FEATURE_DIM: usize = 2048;
pub const TOY_MIN_INPUT: usize = 16;

impl BackboneSpec {
    pub fn resnet50() -> Self {
        BackboneSpec {
            kind: BackboneKind::ReferenceResnet50,
            input_size: 224,
            feature_dim: RESNET50_FEATURE_DIM,
            toy_channels: Vec::new(),
        }
    }

    pub fn toy(input_size: usize, channels: Vec<usize>) -> Self {
        BackboneSpec {
            kind: BackboneKind::ToyCnn,
            input_size,
            feature_dim: channels.last().copied().unwrap_or(0),
            toy_channels: channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("backbone.feature_dim must be positive".into()));
        }
        match self.kind {
            BackboneKind::ReferenceResnet50 => {
                if self.feature_dim != RESNET50_FEATURE_DIM {
                    return Err(Error::Config(format!(
                        "backbone.feature_dim must be {RESNET50_FEATURE_DIM} for reference-resnet50, got {}",
                        self.feature_dim
                    )));
                }
                if self.input_size < 32 {
                    return Err(Error::Config(format!(
                        "backbone.input_size {} too small for reference-resnet50 (minimum 32)",
                        self.input_size
                    )));
                }
            }
            BackboneKind::ToyCnn => {
                if self.toy_channels.is_empty() || self.toy_channels.contains(&0) {
                    return Err(Error::Config(
                        "backbone.toy_channels must be a non-empty list of positive widths".into(),
                    ));
                }
                if self.toy_channels.last() != Some(&self.feature_dim) {
                    return Err(Error::Config(format!(
                        "backbone.feature_dim {} must equal the last toy channel width {}",
                        self.feature_dim,
                        self.toy_channels.last().unwrap()
                    )));
                }
                if self.input_size < TOY_MIN_INPUT {
                    return Err(Error::Config(format!(
                        "backbone.input_size {} below the toy-cnn minimum {TOY_MIN_INPUT}",
                        self.input_size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Convolution followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct ConvBnCache {
    conv: Conv2dCache,
    bn: BatchNormCache,
    /// Post-activation output, kept when a ReLU follows.
    relu_out: Option<Array2<f64>>,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        bn_prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(prefix, cin, cout, kernel, stride, padding, false, rng),
            bn: BatchNorm::new(bn_prefix, cout),
        }
    }

    pub fn forward(&mut self, x: &FeatureMap, mode: Mode, with_relu: bool) -> Result<(FeatureMap, ConvBnCache)> {
        let (y, conv) = self.conv.forward(x)?;
        let (data, bn) = self.bn.forward(&y.data, mode)?;
        let (data, relu_out) = if with_relu {
            let r = relu(&data);
            (r.clone(), Some(r))
        } else {
            (data, None)
        };
        Ok((
            FeatureMap { data, ..y },
            ConvBnCache { conv, bn, relu_out },
        ))
    }

    /// Returns the input gradient when `need_input` is set.
    pub fn backward(&mut self, cache: &ConvBnCache, dy: &FeatureMap, need_input: bool) -> Option<FeatureMap> {
        let d = match &cache.relu_out {
            Some(out) => relu_backward(out, &dy.data),
            None => dy.data.clone(),
        };
        let d = self.bn.backward(&cache.bn, &d);
        let dmap = FeatureMap { data: d, ..dy.clone() };
        self.conv.backward_params(&cache.conv, &dmap);
        need_input.then(|| self.conv.input_grad(&cache.conv, &dmap))
    }
}

impl Module for ConvBn {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv.collect_params_mut(out);
        self.bn.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.bn.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.bn.collect_buffers_mut(out);
    }
}

#[derive(Clone, Debug)]
pub struct ToyCnn {
    pub blocks: Vec<ConvBn>,
}

impl ToyCnn {
    pub fn new(prefix: &str, channels: &[usize], rng: &mut Rng) -> Self {
        let mut cin = 3;
        let blocks = channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let stride = if i == 0 { 1 } else { 2 };
                let block = ConvBn::new(
                    &format!("{prefix}.conv{i}"),
                    &format!("{prefix}.bn{i}"),
                    cin,
                    cout,
                    3,
                    stride,
                    1,
                    rng,
                );
                cin = cout;
                block
            })
            .collect();
        ToyCnn { blocks }
    }
}

/// Bottleneck residual block (1×1 → 3×3 → 1×1, expansion 4), stride on the
/// 3×3 convolution.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub expand: ConvBn,
    pub downsample: Option<ConvBn>,
}

#[derive(Clone, Debug)]
pub struct BottleneckCache {
    reduce: ConvBnCache,
    spatial: ConvBnCache,
    expand: ConvBnCache,
    downsample: Option<ConvBnCache>,
    out: Array2<f64>,
}

pub const BOTTLENECK_EXPANSION: usize = 4;

impl Bottleneck {
    pub fn new(prefix: &str, cin: usize, planes: usize, stride: usize, rng: &mut Rng) -> Self {
        let cout = planes * BOTTLENECK_EXPANSION;
        let downsample = (stride != 1 || cin != cout).then(|| {
            ConvBn::new(
                &format!("{prefix}.downsample.0"),
                &format!("{prefix}.downsample.1"),
                cin,
                cout,
                1,
                stride,
                0,
                rng,
            )
        });
        Bottleneck {
            reduce: ConvBn::new(&format!("{prefix}.conv1"), &format!("{prefix}.bn1"), cin, planes, 1, 1, 0, rng),
            spatial: ConvBn::new(&format!("{prefix}.conv2"), &format!("{prefix}.bn2"), planes, planes, 3, stride, 1, rng),
            expand: ConvBn::new(&format!("{prefix}.conv3"), &format!("{prefix}.bn3"), planes, cout, 1, 1, 0, rng),
            downsample,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap, mode: Mode) -> Result<(FeatureMap, BottleneckCache)> {
        let (a, reduce) = self.reduce.forward(x, mode, true)?;
        let (b, spatial) = self.spatial.forward(&a, mode, true)?;
        let (c, expand) = self.expand.forward(&b, mode, false)?;
        let (shortcut, downsample) = match &mut self.downsample {
            Some(ds) => {
                let (s, cache) = ds.forward(x, mode, false)?;
                (s.data, Some(cache))
            }
            None => (x.data.clone(), None),
        };
        let out = relu(&(c.data + shortcut));
        Ok((
            FeatureMap { data: out.clone(), ..c },
            BottleneckCache { reduce, spatial, expand, downsample, out },
        ))
    }

    pub fn backward(&mut self, cache: &BottleneckCache, dy: &FeatureMap) -> FeatureMap {
        let d = FeatureMap {
            data: relu_backward(&cache.out, &dy.data),
            ..dy.clone()
        };
        let db = self.expand.backward(&cache.expand, &d, true).expect("input grad");
        let da = self.spatial.backward(&cache.spatial, &db, true).expect("input grad");
        let mut dx = self.reduce.backward(&cache.reduce, &da, true).expect("input grad");
        match (&mut self.downsample, &cache.downsample) {
            (Some(ds), Some(c)) => {
                let dshort = ds.backward(c, &d, true).expect("input grad");
                dx.data += &dshort.data;
            }
            _ => dx.data += &d.data,
        }
        dx
    }
}

impl Module for Bottleneck {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.reduce.collect_params(out);
        self.spatial.collect_params(out);
        self.expand.collect_params(out);
        if let Some(ds) = &self.downsample {
            ds.collect_params(out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.reduce.collect_params_mut(out);
        self.spatial.collect_params_mut(out);
        self.expand.collect_params_mut(out);
        if let Some(ds) = &mut self.downsample {
            ds.collect_params_mut(out);
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.reduce.collect_buffers(out);
        self.spatial.collect_buffers(out);
        self.expand.collect_buffers(out);
        if let Some(ds) = &self.downsample {
            ds.collect_buffers(out);
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.reduce.collect_buffers_mut(out);
        self.spatial.collect_buffers_mut(out);
        self.expand.collect_buffers_mut(out);
        if let Some(ds) = &mut self.downsample {
            ds.collect_buffers_mut(out);
        }
    }
}

/// Depth and width of a bottleneck ResNet. ResNet-50 is `[3, 4, 6, 3]` with
/// base width 64.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResNetLayout {
    pub blocks: [usize; 4],
    pub base_width: usize,
}

impl ResNetLayout {
    pub const RESNET50: ResNetLayout = ResNetLayout {
        blocks: [3, 4, 6, 3],
        base_width: 64,
    };

    pub fn feature_dim(&self) -> usize {
        self.base_width * 8 * BOTTLENECK_EXPANSION
    }
}

#[derive(Clone, Debug)]
pub struct ResNet {
    pub stem: ConvBn,
    pub pool: MaxPool2d,
    pub stages: Vec<Vec<Bottleneck>>,
}

impl ResNet {
    pub fn new(prefix: &str, layout: ResNetLayout, rng: &mut Rng) -> Self {
        let w = layout.base_width;
        let stem = ConvBn::new(&format!("{prefix}.conv1"), &format!("{prefix}.bn1"), 3, w, 7, 2, 3, rng);
        let mut cin = w;
        let stages = layout
            .blocks
            .iter()
            .enumerate()
            .map(|(s, &count)| {
                let planes = w << s;
                (0..count)
                    .map(|b| {
                        let stride = if s > 0 && b == 0 { 2 } else { 1 };
                        let block = Bottleneck::new(&format!("{prefix}.layer{}.{b}", s + 1), cin, planes, stride, rng);
                        cin = planes * BOTTLENECK_EXPANSION;
                        block
                    })
                    .collect()
            })
            .collect();
        ResNet {
            stem,
            pool: MaxPool2d {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            stages,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Backbone {
    Toy(ToyCnn),
    ResNet(ResNet),
}

#[derive(Clone, Debug)]
pub enum BackboneCache {
    Toy {
        blocks: Vec<ConvBnCache>,
        pooled_shape: [usize; 4],
    },
    ResNet {
        stem: ConvBnCache,
        pool: MaxPoolCache,
        blocks: Vec<BottleneckCache>,
        pooled_shape: [usize; 4],
    },
}

impl Backbone {
    pub fn build(spec: &BackboneSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        Ok(match spec.kind {
            BackboneKind::ToyCnn => Backbone::Toy(ToyCnn::new("backbone", &spec.toy_channels, rng)),
            BackboneKind::ReferenceResnet50 => {
                Backbone::ResNet(ResNet::new("backbone", ResNetLayout::RESNET50, rng))
            }
        })
    }

    pub fn resnet(layout: ResNetLayout, rng: &mut Rng) -> Self {
        Backbone::ResNet(ResNet::new("backbone", layout, rng))
    }

    /// Pooled features, `N × feature_dim`.
    pub fn forward(&mut self, x: &FeatureMap, mode: Mode) -> Result<(Array2<f64>, BackboneCache)> {
        if x.channels() != 3 {
            return Err(Error::Dimension(format!(
                "backbone expects 3 input channels, got {}",
                x.channels()
            )));
        }
        match self {
            Backbone::Toy(net) => {
                let mut caches = Vec::with_capacity(net.blocks.len());
                let mut h = x.clone();
                for block in &mut net.blocks {
                    let (y, c) = block.forward(&h, mode, true)?;
                    caches.push(c);
                    h = y;
                }
                Ok((
                    global_avg_pool(&h),
                    BackboneCache::Toy {
                        blocks: caches,
                        pooled_shape: h.shape(),
                    },
                ))
            }
            Backbone::ResNet(net) => {
                let (h, stem) = net.stem.forward(x, mode, true)?;
                let (mut h, pool) = net.pool.forward(&h)?;
                let mut blocks = Vec::new();
                for block in net.stages.iter_mut().flatten() {
                    let (y, c) = block.forward(&h, mode)?;
                    blocks.push(c);
                    h = y;
                }
                Ok((
                    global_avg_pool(&h),
                    BackboneCache::ResNet {
                        stem,
                        pool,
                        blocks,
                        pooled_shape: h.shape(),
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients given the gradient of the pooled
    /// features. The input gradient is not needed by any caller and is not
    /// computed for the first layer.
    pub fn backward(&mut self, cache: &BackboneCache, dfeat: &Array2<f64>) {
        match (self, cache) {
            (Backbone::Toy(net), BackboneCache::Toy { blocks, pooled_shape }) => {
                let mut d = global_avg_pool_backward(dfeat, *pooled_shape);
                for (i, (block, c)) in net.blocks.iter_mut().zip(blocks).enumerate().rev() {
                    match block.backward(c, &d, i > 0) {
                        Some(next) => d = next,
                        None => break,
                    }
                }
            }
            (
                Backbone::ResNet(net),
                BackboneCache::ResNet {
                    stem,
                    pool,
                    blocks,
                    pooled_shape,
                },
            ) => {
                let mut d = global_avg_pool_backward(dfeat, *pooled_shape);
                let mut flat: Vec<&mut Bottleneck> = net.stages.iter_mut().flatten().collect();
                for (block, c) in flat.iter_mut().zip(blocks).rev() {
                    d = block.backward(c, &d);
                }
                let d = net.pool.backward(pool, &d);
                net.stem.backward(stem, &d, false);
            }
            _ => panic!("backbone cache does not match backbone variant"),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Toy(net) => net.blocks.last().map_or(0, |b| b.bn.channels()),
            Backbone::ResNet(net) => net
                .stages
                .last()
                .and_then(|s| s.last())
                .map_or(0, |b| b.expand.bn.channels()),
        }
    }
}

impl Module for Backbone {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Backbone::Toy(net) => net.blocks.iter().for_each(|b| b.collect_params(out)),
            Backbone::ResNet(net) => {
                net.stem.collect_params(out);
                net.stages.iter().flatten().for_each(|b| b.collect_params(out));
            }
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Backbone::Toy(net) => net.blocks.iter_mut().for_each(|b| b.collect_params_mut(out)),
            Backbone::ResNet(net) => {
                net.stem.collect_params_mut(out);
                net.stages.iter_mut().flatten().for_each(|b| b.collect_params_mut(out));
            }
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        match self {
            Backbone::Toy(net) => net.blocks.iter().for_each(|b| b.collect_buffers(out)),
            Backbone::ResNet(net) => {
                net.stem.collect_buffers(out);
                net.stages.iter().flatten().for_each(|b| b.collect_buffers(out));
            }
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        match self {
            Backbone::Toy(net) => net.blocks.iter_mut().for_each(|b| b.collect_buffers_mut(out)),
            Backbone::ResNet(net) => {
                net.stem.collect_buffers_mut(out);
                net.stages.iter_mut().flatten().for_each(|b| b.collect_buffers_mut(out));
            }
        }
    }
}
