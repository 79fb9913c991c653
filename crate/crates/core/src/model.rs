//! The SimSiam computation graph: encoder `f` (backbone + projection MLP),
//! predictor `h`, and the two-branch forward/backward pass.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{symmetric_loss_with_grads, LossGradients, LossValue, StopGradient};
use crate::nn::layers::{relu, relu_backward, BatchNormCache};
use crate::nn::{Backbone, BackboneCache, BackboneSpec, BatchNorm, FeatureMap, Linear, Mode, Module};
use crate::nn::{Buffer, Param};
use crate::rng::{self, Rng};

fn default_proj_hidden() -> Vec<usize> {
    vec![1024, 512]
}
fn default_proj_out() -> usize {
    2048
}
fn default_true() -> bool {
    true
}
fn default_pred_hidden() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub backbone: BackboneSpec,
    #[serde(default = "default_proj_hidden")]
    pub proj_hidden: Vec<usize>,
    #[serde(default = "default_proj_out")]
    pub proj_out_dim: usize,
    #[serde(default = "default_true")]
    pub batchnorm_on_output: bool,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            backbone: BackboneSpec::resnet50(),
            proj_hidden: default_proj_hidden(),
            proj_out_dim: default_proj_out(),
            batchnorm_on_output: true,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.proj_hidden.len() != 2 {
            return Err(Error::Config(format!(
                "projection head must have exactly 3 layers (2 hidden widths), got {} hidden widths",
                self.proj_hidden.len()
            )));
        }
        if self.proj_hidden.contains(&0) || self.proj_out_dim == 0 {
            return Err(Error::Config("projection widths must be positive".into()));
        }
        Ok(())
    }

    /// Widths of the projection layers, input first.
    pub fn projection_widths(&self) -> Vec<usize> {
        let mut w = vec![self.backbone.feature_dim];
        w.extend(&self.proj_hidden);
        w.push(self.proj_out_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    #[serde(default = "default_proj_out")]
    pub in_dim: usize,
    #[serde(default = "default_pred_hidden")]
    pub hidden: usize,
    #[serde(default = "default_proj_out")]
    pub out_dim: usize,
    #[serde(default = "default_true")]
    pub batchnorm_on_hidden: bool,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            in_dim: default_proj_out(),
            hidden: default_pred_hidden(),
            out_dim: default_proj_out(),
            batchnorm_on_hidden: true,
        }
    }
}

impl PredictorSpec {
    pub fn for_embedding(dim: usize, hidden: usize) -> Self {
        PredictorSpec {
            in_dim: dim,
            hidden,
            out_dim: dim,
            batchnorm_on_hidden: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config("predictor widths must be positive".into()));
        }
        if self.in_dim != self.out_dim {
            return Err(Error::Config(format!(
                "predictor output dimension {} must equal its input dimension {}",
                self.out_dim, self.in_dim
            )));
        }
        Ok(())
    }
}

/// Linear layer with optional batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

#[derive(Clone, Debug)]
pub struct MlpLayerCache {
    input: Array2<f64>,
    bn: Option<BatchNormCache>,
    relu_out: Option<Array2<f64>>,
}

impl MlpLayer {
    fn new(prefix: &str, din: usize, dout: usize, bn: bool, relu: bool, rng: &mut Rng) -> Self {
        MlpLayer {
            linear: Linear::new(&format!("{prefix}.linear"), din, dout, !bn, rng),
            bn: bn.then(|| BatchNorm::new(&format!("{prefix}.bn"), dout)),
            relu,
        }
    }

    fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, MlpLayerCache)> {
        let mut y = self.linear.forward(x)?;
        let bn = match &mut self.bn {
            Some(bn) => {
                let (out, cache) = bn.forward(&y, mode)?;
                y = out;
                Some(cache)
            }
            None => None,
        };
        let relu_out = self.relu.then(|| {
            y = relu(&y);
            y.clone()
        });
        Ok((
            y,
            MlpLayerCache {
                input: x.clone(),
                bn,
                relu_out,
            },
        ))
    }

    fn backward(&mut self, cache: &MlpLayerCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut d = match &cache.relu_out {
            Some(out) => relu_backward(out, dy),
            None => dy.clone(),
        };
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            d = bn.backward(c, &d);
        }
        self.linear.backward(&cache.input, &d)
    }
}

impl Module for MlpLayer {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.linear.collect_params(out);
        if let Some(bn) = &self.bn {
            bn.collect_params(out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.linear.collect_params_mut(out);
        if let Some(bn) = &mut self.bn {
            bn.collect_params_mut(out);
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        if let Some(bn) = &self.bn {
            bn.collect_buffers(out);
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        if let Some(bn) = &mut self.bn {
            bn.collect_buffers_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

pub type MlpCache = Vec<MlpLayerCache>;

impl Mlp {
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&h, mode)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter_mut().zip(cache).rev() {
            d = layer.backward(c, &d);
        }
        d
    }
}

impl Module for Mlp {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.layers.iter().for_each(|l| l.collect_params(out));
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.layers.iter_mut().for_each(|l| l.collect_params_mut(out));
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.layers.iter().for_each(|l| l.collect_buffers(out));
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.layers.iter_mut().for_each(|l| l.collect_buffers_mut(out));
    }
}

/// Encoder `f`: backbone features followed by the 3-layer projection MLP.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub backbone: Backbone,
    pub projector: Mlp,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    backbone: BackboneCache,
    projector: MlpCache,
}

/// Builds the projection head only; used when the backbone comes from elsewhere.
pub fn build_projector(spec: &EncoderSpec, rng: &mut Rng) -> Result<Mlp> {
    spec.validate()?;
    let widths = spec.projection_widths();
    let layers = (0..3)
        .map(|i| {
            let last = i == 2;
            let bn = !last || spec.batchnorm_on_output;
            MlpLayer::new(&format!("projector.{i}"), widths[i], widths[i + 1], bn, !last, rng)
        })
        .collect();
    Ok(Mlp { layers })
}

pub fn build_encoder(spec: &EncoderSpec, rng: &mut Rng) -> Result<Encoder> {
    spec.validate()?;
    let backbone = Backbone::build(&spec.backbone, rng)?;
    let projector = build_projector(spec, rng)?;
    Ok(Encoder {
        spec: spec.clone(),
        backbone,
        projector,
    })
}

impl Encoder {
    pub fn forward(&mut self, x: &FeatureMap, mode: Mode) -> Result<(Array2<f64>, EncoderCache)> {
        let (feat, backbone) = self.backbone.forward(x, mode)?;
        let (z, projector) = self.projector.forward(&feat, mode)?;
        Ok((z, EncoderCache { backbone, projector }))
    }

    pub fn backward(&mut self, cache: &EncoderCache, dz: &Array2<f64>) {
        let dfeat = self.projector.backward(&cache.projector, dz);
        self.backbone.backward(&cache.backbone, &dfeat);
    }
}

impl Module for Encoder {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.backbone.collect_params(out);
        self.projector.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.backbone.collect_params_mut(out);
        self.projector.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.backbone.collect_buffers(out);
        self.projector.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.backbone.collect_buffers_mut(out);
        self.projector.collect_buffers_mut(out);
    }
}

/// Predictor `h`: `D → hidden → D`, batch norm on the hidden layer only.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub spec: PredictorSpec,
    pub mlp: Mlp,
    identity: bool,
}

pub fn build_predictor(spec: &PredictorSpec, rng: &mut Rng) -> Result<Predictor> {
    spec.validate()?;
    let mlp = Mlp {
        layers: vec![
            MlpLayer::new("predictor.0", spec.in_dim, spec.hidden, spec.batchnorm_on_hidden, true, rng),
            MlpLayer::new("predictor.1", spec.hidden, spec.out_dim, false, false, rng),
        ],
    };
    Ok(Predictor {
        spec: spec.clone(),
        mlp,
        identity: false,
    })
}

impl Predictor {
    /// Test hook: when set, `h` returns its input unchanged.
    pub fn set_identity_override(&mut self, on: bool) {
        self.identity = on;
    }

    pub fn forward(&mut self, z: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, MlpCache)> {
        if z.ncols() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "predictor expects width {}, got {}",
                self.spec.in_dim,
                z.ncols()
            )));
        }
        if self.identity {
            return Ok((z.clone(), Vec::new()));
        }
        self.mlp.forward(z, mode)
    }

    pub fn backward(&mut self, cache: &MlpCache, dp: &Array2<f64>) -> Array2<f64> {
        if self.identity {
            return dp.clone();
        }
        self.mlp.backward(cache, dp)
    }
}

impl Module for Predictor {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.mlp.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.mlp.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.mlp.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.mlp.collect_buffers_mut(out);
    }
}

/// Two augmented views of the same source batch; row `i` of both views comes
/// from source image `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub view1: FeatureMap,
    pub view2: FeatureMap,
}

impl ViewPair {
    pub fn new(view1: FeatureMap, view2: FeatureMap) -> Result<Self> {
        if view1.shape() != view2.shape() {
            return Err(Error::Dimension(format!(
                "views differ in shape: {:?} vs {:?}",
                view1.shape(),
                view2.shape()
            )));
        }
        Ok(ViewPair { view1, view2 })
    }

    pub fn swapped(&self) -> Self {
        ViewPair {
            view1: self.view2.clone(),
            view2: self.view1.clone(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.view1.n
    }
}

/// Outputs of both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSiamForward {
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
}

/// Result of one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: LossValue,
    pub forward: SimSiamForward,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub predictor: PredictorSpec,
}

/// Encoder and predictor with a single shared parameter set.
#[derive(Clone, Debug)]
pub struct SimSiam {
    pub encoder: Encoder,
    pub predictor: Predictor,
}

struct BranchCache {
    encoder: EncoderCache,
    predictor: MlpCache,
}

impl SimSiam {
    pub fn new(encoder: EncoderSpec, predictor: PredictorSpec, seed: u64) -> Result<Self> {
        if predictor.in_dim != encoder.proj_out_dim {
            return Err(Error::Config(format!(
                "predictor input width {} must equal projection output width {}",
                predictor.in_dim, encoder.proj_out_dim
            )));
        }
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let encoder = build_encoder(&encoder, &mut rng)?;
        let predictor = build_predictor(&predictor, &mut rng)?;
        Ok(SimSiam { encoder, predictor })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder.spec.clone(),
            predictor: self.predictor.spec.clone(),
        }
    }

    fn branch(&mut self, x: &FeatureMap, mode: Mode) -> Result<(Array2<f64>, Array2<f64>, BranchCache)> {
        let (z, encoder) = self.encoder.forward(x, mode)?;
        let (p, predictor) = self.predictor.forward(&z, mode)?;
        Ok((z, p, BranchCache { encoder, predictor }))
    }

    pub fn forward(&mut self, views: &ViewPair, mode: Mode) -> Result<SimSiamForward> {
        let (z1, p1, _) = self.branch(&views.view1, mode)?;
        let (z2, p2, _) = self.branch(&views.view2, mode)?;
        Ok(SimSiamForward { z1, z2, p1, p2 })
    }

    /// Forward both views, evaluate the symmetric loss, and accumulate
    /// parameter gradients. Gradients are added to whatever is already
    /// stored; call `zero_grad` first for a fresh step.
    pub fn forward_backward(&mut self, views: &ViewPair, mode: Mode, sg: StopGradient) -> Result<StepOutput> {
        let (z1, p1, c1) = self.branch(&views.view1, mode)?;
        let (z2, p2, c2) = self.branch(&views.view2, mode)?;
        let forward = SimSiamForward { z1, z2, p1, p2 };
        let LossGradients {
            loss,
            dp1,
            dp2,
            dz1,
            dz2,
            ..
        } = symmetric_loss_with_grads(&forward, sg)?;

        for (cache, dp, dz_direct) in [(&c1, &dp1, dz1), (&c2, &dp2, dz2)] {
            let mut dz = self.predictor.backward(&cache.predictor, dp);
            if let Some(extra) = dz_direct {
                dz += &extra;
            }
            self.encoder.backward(&cache.encoder, &dz);
        }
        Ok(StepOutput { loss, forward })
    }
}

impl Module for SimSiam {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.encoder.collect_params(out);
        self.predictor.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.encoder.collect_params_mut(out);
        self.predictor.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.encoder.collect_buffers(out);
        self.predictor.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.encoder.collect_buffers_mut(out);
        self.predictor.collect_buffers_mut(out);
    }
}

/// SHA-256 over all parameter and buffer values (names, shapes, and the
/// little-endian bit patterns), hex encoded.
pub fn state_hash<M: Module + ?Sized>(module: &M) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in module.params() {
        h.update(p.name.as_bytes());
        for d in &p.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    }
    for b in module.buffers() {
        h.update(b.name.as_bytes());
        for v in &b.value {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
