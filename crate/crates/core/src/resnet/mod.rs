//! Residual CNN with named layer groups, regression and classification heads,
//! progressive unfreezing, and a versioned binary checkpoint format.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, FORMAT_VERSION};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ndtensor::{BatchNormMode, BatchNormStats, Graph, Tensor, TensorError, Var};
use crate::rng::stream_rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ResnetError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown layer group `{0}`")]
    UnknownGroup(String),
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error("expected input of shape [N, {channels}, {size}, {size}], got {got:?}")]
    InputShape { channels: usize, size: usize, got: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ResnetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Regression,
    Classification,
    Both,
}

impl Head {
    pub fn has_regression(self) -> bool {
        matches!(self, Head::Regression | Head::Both)
    }

    pub fn has_classification(self) -> bool {
        matches!(self, Head::Classification | Head::Both)
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Regression => "regression",
            Head::Classification => "classification",
            Head::Both => "both",
        })
    }
}

impl FromStr for Head {
    type Err = ResnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Head::Regression),
            "classification" => Ok(Head::Classification),
            "both" => Ok(Head::Both),
            other => Err(ResnetError::Config(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub blocks_per_stage: Vec<usize>,
    pub channels_per_stage: Vec<usize>,
    pub head: Head,
}

impl ModelConfig {
    /// Stages [3, 4, 6, 3] x [64, 128, 256, 512] on 256 px RGB input.
    pub fn resnet34() -> Self {
        Self {
            input_size: 256,
            in_channels: 3,
            stem_channels: 64,
            blocks_per_stage: vec![3, 4, 6, 3],
            channels_per_stage: vec![64, 128, 256, 512],
            head: Head::Regression,
        }
    }

    /// Desk-scale network for 64 px single-channel phantoms.
    pub fn micro() -> Self {
        Self {
            input_size: 64,
            in_channels: 1,
            stem_channels: 8,
            blocks_per_stage: vec![1, 1],
            channels_per_stage: vec![8, 16],
            head: Head::Regression,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "resnet34" => Ok(Self::resnet34()),
            "micro" => Ok(Self::micro()),
            other => Err(ResnetError::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.channels_per_stage.len()
    }

    /// Total spatial downsampling: stem conv, max pool, then every stage after the first.
    pub fn downsample(&self) -> usize {
        1 << (self.stages() + 1)
    }

    pub fn feature_size(&self) -> usize {
        self.input_size / self.downsample()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ResnetError::Config(m));
        if self.stages() == 0 || self.blocks_per_stage.len() != self.stages() {
            return bad(format!(
                "blocks_per_stage {:?} and channels_per_stage {:?} must have equal non-zero length",
                self.blocks_per_stage, self.channels_per_stage
            ));
        }
        if self.blocks_per_stage.contains(&0) || self.channels_per_stage.contains(&0) {
            return bad("stages need at least one block and one channel".into());
        }
        if self.in_channels == 0 || self.stem_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.input_size == 0 || self.input_size % self.downsample() != 0 {
            return bad(format!(
                "input_size {} must be a positive multiple of {}",
                self.input_size,
                self.downsample()
            ));
        }
        Ok(())
    }

    fn group_names(&self) -> Vec<String> {
        let mut g = vec!["stem".to_string()];
        g.extend((1..=self.stages()).map(|i| format!("stage{i}")));
        if self.head.has_regression() {
            g.push("head_regression".into());
        }
        if self.head.has_classification() {
            g.push("head_classification".into());
        }
        g
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    stride: usize,
    pad: usize,
    group: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct LinearHead {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvBn,
    stages: Vec<Vec<Block>>,
    regression: Option<LinearHead>,
    classification: Option<LinearHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// N(0, 2 / fan_in)
    He(usize),
    /// N(0, 1 / fan_in)
    Lecun(usize),
    Zeros,
    Ones,
}

#[derive(Default)]
struct LayoutBuilder {
    params: Vec<ParamMeta>,
    bn_names: Vec<String>,
    bn_channels: Vec<usize>,
    bn_groups: Vec<usize>,
}

impl LayoutBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>, group: usize, init: Init) -> usize {
        self.params.push(ParamMeta {
            name,
            shape,
            group,
            init,
        });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, group: usize) -> ConvBn {
        let weight = self.param(format!("{name}.weight"), vec![cout, cin, k, k], group, Init::He(cin * k * k));
        let gamma = self.param(format!("{name}.bn.gamma"), vec![cout], group, Init::Ones);
        let beta = self.param(format!("{name}.bn.beta"), vec![cout], group, Init::Zeros);
        self.bn_names.push(format!("{name}.bn"));
        self.bn_channels.push(cout);
        self.bn_groups.push(group);
        ConvBn {
            weight,
            gamma,
            beta,
            bn: self.bn_channels.len() - 1,
            stride,
            pad,
            group,
        }
    }

    fn head(&mut self, name: &str, fin: usize, group: usize) -> LinearHead {
        LinearHead {
            weight: self.param(format!("{name}.weight"), vec![1, fin], group, Init::Lecun(fin)),
            bias: self.param(format!("{name}.bias"), vec![1], group, Init::Zeros),
        }
    }
}

fn build_layout(cfg: &ModelConfig, groups: &[String]) -> (Layout, LayoutBuilder) {
    let gi = |name: &str| groups.iter().position(|g| g == name).expect("group exists");
    let mut b = LayoutBuilder::default();
    let stem = b.conv_bn("stem.conv", cfg.in_channels, cfg.stem_channels, 7, 2, 3, gi("stem"));
    let mut cin = cfg.stem_channels;
    let mut stages = Vec::new();
    for (s, (&nblocks, &cout)) in cfg.blocks_per_stage.iter().zip(&cfg.channels_per_stage).enumerate() {
        let group = gi(&format!("stage{}", s + 1));
        let mut blocks = Vec::new();
        for i in 0..nblocks {
            let stride = if s > 0 && i == 0 { 2 } else { 1 };
            let prefix = format!("stage{}.block{}", s + 1, i + 1);
            let conv1 = b.conv_bn(&format!("{prefix}.conv1"), cin, cout, 3, stride, 1, group);
            let conv2 = b.conv_bn(&format!("{prefix}.conv2"), cout, cout, 3, 1, 1, group);
            let shortcut = (stride != 1 || cin != cout)
                .then(|| b.conv_bn(&format!("{prefix}.shortcut"), cin, cout, 1, stride, 0, group));
            blocks.push(Block { conv1, conv2, shortcut });
            cin = cout;
        }
        stages.push(blocks);
    }
    let regression = cfg
        .head
        .has_regression()
        .then(|| b.head("head_regression", cin, gi("head_regression")));
    let classification = cfg
        .head
        .has_classification()
        .then(|| b.head("head_classification", cin, gi("head_classification")));
    (
        Layout {
            stem,
            stages,
            regression,
            classification,
        },
        b,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Record trainable parameters as gradient-tracking leaves.
    pub param_grads: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            param_grads: true,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            param_grads: false,
        }
    }
}

/// Handles into the graph produced by [`Model::forward`].
pub struct ForwardPass {
    /// Output of the last residual block (the Grad-CAM target layer).
    pub features: Var,
    /// z-scored thickness, shape [N, 1].
    pub regression: Option<Var>,
    /// Abnormality logit, shape [N, 1].
    pub logit: Option<Var>,
    /// One entry per parameter; `Some` when recorded as a tracked leaf.
    pub param_vars: Vec<Option<Var>>,
    /// Running statistics after this pass; commit with [`Model::commit_bn_stats`].
    pub bn_stats: Vec<BatchNormStats>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    groups: Vec<String>,
    trainable: Vec<bool>,
    meta: Vec<ParamMeta>,
    params: Vec<Tensor>,
    bn_names: Vec<String>,
    bn_groups: Vec<usize>,
    bn_stats: Vec<BatchNormStats>,
    layout: Layout,
    target_mean: f64,
    target_sd: f64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.trainable == other.trainable
            && self.params == other.params
            && self.bn_stats == other.bn_stats
            && self.target_mean.to_bits() == other.target_mean.to_bits()
            && self.target_sd.to_bits() == other.target_sd.to_bits()
    }
}

/// Builds a model with deterministic He-style initialization from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let mut model = Model::skeleton(config.clone())?;
    for (i, (meta, p)) in model.meta.iter().zip(&mut model.params).enumerate() {
        let mut rng = stream_rng(seed, &[0x696e_6974, i as u64]);
        let std = match meta.init {
            Init::He(fan_in) => (2.0 / fan_in as f64).sqrt(),
            Init::Lecun(fan_in) => (1.0 / fan_in as f64).sqrt(),
            Init::Zeros => continue,
            Init::Ones => {
                p.data_mut().fill(1.0);
                continue;
            }
        };
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in p.data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(model)
}

impl Model {
    /// All-zero parameters with the config's layout; default running stats.
    pub(crate) fn skeleton(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let groups = config.group_names();
        let (layout, b) = build_layout(&config, &groups);
        let params = b.params.iter().map(|m| Tensor::zeros(&m.shape)).collect();
        let bn_stats = b.bn_channels.iter().map(|&c| BatchNormStats::new(c)).collect();
        Ok(Self {
            trainable: vec![true; groups.len()],
            groups,
            meta: b.params,
            params,
            bn_names: b.bn_names,
            bn_groups: b.bn_groups,
            bn_stats,
            layout,
            config,
            target_mean: 0.0,
            target_sd: 1.0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_name(&self, i: usize) -> &str {
        &self.meta[i].name
    }

    pub fn param_group(&self, i: usize) -> usize {
        self.meta[i].group
    }

    pub(crate) fn meta(&self) -> &[ParamMeta] {
        &self.meta
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.bn_stats
    }

    pub(crate) fn bn_stats_mut(&mut self) -> &mut [BatchNormStats] {
        &mut self.bn_stats
    }

    pub(crate) fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    /// Number of trainable scalars (weights, BN affine, head weights/biases).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Number of non-trainable stored scalars (BN running mean and variance).
    pub fn buffer_count(&self) -> usize {
        self.bn_stats.iter().map(|s| s.mean.len() + s.var.len()).sum()
    }

    pub fn target_norm(&self) -> (f64, f64) {
        (self.target_mean, self.target_sd)
    }

    /// Sets the train-set thickness mean and SD used to z-score targets.
    pub fn set_target_norm(&mut self, mean: f64, sd: f64) -> Result<()> {
        if !mean.is_finite() || !(sd > 0.0) || !sd.is_finite() {
            return Err(ResnetError::Config(format!("invalid target normalization {mean} / {sd}")));
        }
        self.target_mean = mean;
        self.target_sd = sd;
        Ok(())
    }

    pub fn normalize_target(&self, um: f64) -> f64 {
        (um - self.target_mean) / self.target_sd
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        self.target_mean + self.target_sd * z
    }

    pub fn is_trainable(&self, group: usize) -> bool {
        self.trainable[group]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn group_index(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| ResnetError::UnknownGroup(name.to_string()))
    }

    /// Makes exactly `groups` trainable; everything else is frozen.
    pub fn set_trainable<S: AsRef<str>>(&mut self, groups: &[S]) -> Result<()> {
        let wanted: BTreeSet<usize> = groups
            .iter()
            .map(|g| self.group_index(g.as_ref()))
            .collect::<Result<_>>()?;
        for (i, t) in self.trainable.iter_mut().enumerate() {
            *t = wanted.contains(&i);
        }
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.trainable.fill(true);
    }

    /// The last stage plus every head: the groups opened first when fine-tuning.
    pub fn final_groups(&self) -> Vec<String> {
        let mut out = vec![format!("stage{}", self.config.stages())];
        out.extend(self.groups.iter().filter(|g| g.starts_with("head_")).cloned());
        out
    }

    pub fn commit_bn_stats(&mut self, stats: Vec<BatchNormStats>) {
        for (i, s) in stats.into_iter().enumerate() {
            if self.trainable[self.bn_groups[i]] {
                self.bn_stats[i] = s;
            }
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.in_channels || shape[2] != c.input_size || shape[3] != c.input_size || shape[0] == 0 {
            return Err(ResnetError::InputShape {
                channels: c.in_channels,
                size: c.input_size,
                got: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Records the network on `g`. Frozen groups always run batch norm in eval mode.
    pub fn forward(&self, g: &mut Graph, input: Var, opts: ForwardOptions) -> Result<ForwardPass> {
        self.check_input(g.value(input).shape())?;
        let mut param_vars = vec![None; self.params.len()];
        let mut vars = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let tracked = opts.param_grads && self.trainable[self.meta[i].group];
            let v = if tracked {
                let v = g.leaf(p.clone());
                param_vars[i] = Some(v);
                v
            } else {
                g.constant(p.clone())
            };
            vars.push(v);
        }
        let mut stats = self.bn_stats.clone();
        let run = |g: &mut Graph, stats: &mut [BatchNormStats], cb: &ConvBn, x: Var| -> Result<Var> {
            let y = g.conv2d(x, vars[cb.weight], None, cb.stride, cb.pad)?;
            let mode = if opts.mode == Mode::Train && self.trainable[cb.group] {
                BatchNormMode::Train { momentum: BN_MOMENTUM }
            } else {
                BatchNormMode::Eval
            };
            Ok(g.batchnorm2d(y, vars[cb.gamma], vars[cb.beta], &mut stats[cb.bn], mode, BN_EPS)?)
        };

        let x = run(g, &mut stats, &self.layout.stem, input)?;
        let x = g.relu(x)?;
        let mut x = g.maxpool2x2(x)?;
        for stage in &self.layout.stages {
            for block in stage {
                let h = run(g, &mut stats, &block.conv1, x)?;
                let h = g.relu(h)?;
                let h = run(g, &mut stats, &block.conv2, h)?;
                let short = match &block.shortcut {
                    Some(sc) => run(g, &mut stats, sc, x)?,
                    None => x,
                };
                let sum = g.add(h, short)?;
                x = g.relu(sum)?;
            }
        }
        let features = x;
        let pooled = g.global_avg_pool(features)?;
        let head = |g: &mut Graph, h: &Option<LinearHead>| -> Result<Option<Var>> {
            h.as_ref()
                .map(|h| g.linear(pooled, vars[h.weight], Some(vars[h.bias])))
                .transpose()
                .map_err(Into::into)
        };
        let regression = head(g, &self.layout.regression)?;
        let logit = head(g, &self.layout.classification)?;
        Ok(ForwardPass {
            features,
            regression,
            logit,
            param_vars,
            bn_stats: stats,
        })
    }

    /// Predicted thickness in micrometers, one value per sample.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let fwd = self.forward(&mut g, x, ForwardOptions::eval())?;
        let out = fwd.regression.ok_or(ResnetError::MissingHead("regression"))?;
        Ok(g.value(out).data().iter().map(|&z| self.denormalize_target(z)).collect())
    }

    /// Probability of abnormality (sigmoid of the classification logit).
    pub fn predict_prob(&self, batch: &Tensor) -> Result<Vec<f64>> {
        if !self.config.head.has_classification() {
            return Err(ResnetError::MissingHead("classification"));
        }
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let fwd = self.forward(&mut g, x, ForwardOptions::eval())?;
        let logit = fwd.logit.ok_or(ResnetError::MissingHead("classification"))?;
        let p = g.sigmoid(logit)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Zeroes the weights and bias of every head.
    pub fn zero_heads(&mut self) {
        for h in [&self.layout.regression, &self.layout.classification].into_iter().flatten() {
            self.params[h.weight].data_mut().fill(0.0);
            self.params[h.bias].data_mut().fill(0.0);
        }
    }

    /// Parameter indices of the residual branch (conv1, conv2) of a block.
    pub fn block_branch_params(&self, stage: usize, block: usize) -> Option<Vec<usize>> {
        let b = self.layout.stages.get(stage)?.get(block)?;
        Some(vec![b.conv1.weight, b.conv2.weight])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = stream_rng(seed, &[]);
        let len = n * cfg.in_channels * cfg.input_size * cfg.input_size;
        Tensor::new(
            vec![n, cfg.in_channels, cfg.input_size, cfg.input_size],
            (0..len).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(&ModelConfig::micro(), 11).unwrap();
        let b = build_model(&ModelConfig::micro(), 11).unwrap();
        let c = build_model(&ModelConfig::micro(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn micro_forward_yields_one_scalar() {
        let cfg = ModelConfig::micro();
        let m = build_model(&cfg, 1).unwrap();
        let out = m.predict(&image_batch(&cfg, 1, 3)).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_finite());
    }

    #[test]
    fn zero_head_emits_stored_mean() {
        let cfg = ModelConfig::micro();
        let mut m = build_model(&cfg, 1).unwrap();
        m.set_target_norm(82.5, 16.8).unwrap();
        m.zero_heads();
        for p in m.predict(&image_batch(&cfg, 3, 9)).unwrap() {
            assert_eq!(p, 82.5);
        }
    }

    #[test]
    fn rejects_wrong_input_size() {
        let m = build_model(&ModelConfig::micro(), 1).unwrap();
        let bad = Tensor::zeros(&[1, 1, 32, 32]);
        assert!(matches!(m.predict(&bad), Err(ResnetError::InputShape { .. })));
    }

    #[test]
    fn config_divisibility_enforced() {
        let mut cfg = ModelConfig::micro();
        cfg.input_size = 60;
        assert!(matches!(build_model(&cfg, 0), Err(ResnetError::Config(_))));
        cfg.input_size = 64;
        cfg.blocks_per_stage = vec![1];
        assert!(matches!(build_model(&cfg, 0), Err(ResnetError::Config(_))));
    }

    #[test]
    fn predict_prob_needs_classification_head() {
        let cfg = ModelConfig::micro();
        let m = build_model(&cfg, 1).unwrap();
        assert!(matches!(
            m.predict_prob(&image_batch(&cfg, 1, 0)),
            Err(ResnetError::MissingHead("classification"))
        ));
        let mut cfg2 = cfg.clone();
        cfg2.head = Head::Both;
        let m2 = build_model(&cfg2, 1).unwrap();
        let p = m2.predict_prob(&image_batch(&cfg2, 4, 0)).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_logit_gives_half() {
        let mut cfg = ModelConfig::micro();
        cfg.head = Head::Classification;
        let mut m = build_model(&cfg, 1).unwrap();
        m.zero_heads();
        assert_eq!(m.predict_prob(&image_batch(&cfg, 2, 0)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn unknown_group_rejected() {
        let mut m = build_model(&ModelConfig::micro(), 1).unwrap();
        assert!(matches!(m.set_trainable(&["stage9"]), Err(ResnetError::UnknownGroup(_))));
        m.set_trainable(&["stage2", "head_regression"]).unwrap();
        assert_eq!(m.trainable_mask(), &[false, false, true, true]);
        assert_eq!(m.final_groups(), vec!["stage2", "head_regression"]);
    }

    #[test]
    fn shortcut_only_where_shapes_change() {
        let m = build_model(&ModelConfig::micro(), 1).unwrap();
        let names: Vec<&str> = (0..m.params().len()).map(|i| m.param_name(i)).collect();
        assert!(!names.iter().any(|n| n.starts_with("stage1.block1.shortcut")));
        assert!(names.contains(&"stage2.block1.shortcut.weight"));
    }
}
