//! Model assembly: parameter storage, per-fold input preparation, and
//! the full forward pass from raw modalities to the combined loss.

use crate::attention::{attention_scores, init_head, neighbor_mask, AttentionConfig, HeadVars};
use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, ModalityKind, SplitRound};
use crate::error::{Error, Result};
use crate::graph::{
    continuous_modal_graph, discrete_modal_graph, fuse, init_projection, mmge_loss,
    ReferenceGraphs,
};
use crate::network::{
    branch_forward, branch_losses, fusion_forward, fusion_input, masked_cross_entropy,
    total_loss, FusionHeadVars, FusionMode,
};
use crate::spectral::build_laplacian;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which part of the architecture a parameter belongs to; the gradient
/// audit reports per named tensor but groups share these kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Per-modality graph projection.
    Projection,
    /// Attention head feature projection.
    AttentionProjection,
    /// Attention head pair scorer.
    AttentionScorer,
    /// Chebyshev branch filter weight.
    BranchWeight,
    /// Final fully connected head.
    FusionHead,
    /// Branch mixing logits (weight-fusion mode only).
    FusionMix,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Projection => "projection",
            ParamGroup::AttentionProjection => "attention_projection",
            ParamGroup::AttentionScorer => "attention_scorer",
            ParamGroup::BranchWeight => "branch_weight",
            ParamGroup::FusionHead => "fusion_head",
            ParamGroup::FusionMix => "fusion_mix",
        }
    }
}

/// One named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Modality supplying node features, attention features, and the
    /// function graph.
    pub dominant_modality: String,
    /// Projection width h shared by all modal graphs.
    pub projection_width: usize,
    pub ram_enabled: bool,
    pub ram_heads: usize,
    pub ram_hidden: usize,
    pub ram_threshold: f64,
    /// Chebyshev receptive-field orders, one branch each.
    pub kernel_orders: Vec<usize>,
    /// Hidden width between the two filter layers of a branch.
    pub hidden_width: usize,
    pub fusion_mode: FusionMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dominant_modality: "fc".into(),
            projection_width: 64,
            ram_enabled: true,
            ram_heads: 4,
            ram_hidden: 16,
            ram_threshold: 0.5,
            kernel_orders: vec![2, 3, 4],
            hidden_width: 64,
            fusion_mode: FusionMode::Ckdt,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            enabled: self.ram_enabled,
            heads: self.ram_heads,
            hidden: self.ram_hidden,
            threshold: self.ram_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_orders.is_empty() {
            return Err(Error::Config("at least one kernel order required".into()));
        }
        if self.projection_width == 0 || self.hidden_width == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.ram_enabled && (self.ram_heads == 0 || self.ram_hidden == 0) {
            return Err(Error::Config("attention needs heads and hidden width".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything a fold's forward pass consumes, computed once per round.
pub struct Prepared {
    /// Dominant-modality features (node features and attention input).
    pub x_dom: Array2<f64>,
    /// All continuous modalities in dataset order: (name, features).
    pub continuous: Vec<(String, Array2<f64>)>,
    /// Precomputed attribute-match graphs for discrete modalities.
    pub discrete_graphs: Vec<Array2<f64>>,
    pub refs: ReferenceGraphs,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub train: Vec<bool>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Prepared {
    pub fn build(dataset: &Dataset, round: &SplitRound, config: &ModelConfig) -> Result<Self> {
        let dominant = dataset
            .modality(&config.dominant_modality)
            .ok_or_else(|| {
                Error::Config(format!(
                    "dominant modality '{}' not in dataset",
                    config.dominant_modality
                ))
            })?;
        if dominant.kind != ModalityKind::Continuous {
            return Err(Error::Config("dominant modality must be continuous".into()));
        }
        let n = dataset.subjects();
        let mut train = vec![false; n];
        for &i in &round.train {
            train[i] = true;
        }
        let refs = ReferenceGraphs::build(dataset.labels(), &train, &dominant.data)?;

        let mut continuous = Vec::new();
        let mut discrete_graphs = Vec::new();
        for m in dataset.modalities() {
            match m.kind {
                ModalityKind::Continuous => {
                    continuous.push((m.name.clone(), m.data.clone()));
                }
                ModalityKind::Discrete => discrete_graphs.push(discrete_modal_graph(m)?),
            }
        }
        Ok(Prepared {
            x_dom: dominant.data.clone(),
            continuous,
            discrete_graphs,
            refs,
            labels: dataset.labels().to_vec(),
            class_count: dataset.class_count(),
            train,
            val: round.val.clone(),
            test: round.test.clone(),
        })
    }
}

/// Index of each role within `Model::params`.
#[derive(Debug, Clone)]
struct Layout {
    /// One projection per continuous modality, in `Prepared` order.
    projections: Vec<usize>,
    /// (projection, scorer) per attention head.
    heads: Vec<(usize, usize)>,
    /// (layer1 weights, layer2 weights) per branch.
    branches: Vec<(Vec<usize>, Vec<usize>)>,
    fusion_weight: usize,
    fusion_bias: usize,
    fusion_mix: Option<usize>,
}

/// The trainable model: plain parameter values plus the recipe for
/// replaying the forward pass on a fresh tape each epoch.
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    layout: Layout,
}

/// Outcome of one forward pass. Values live on the tape that built it.
pub struct ForwardPass {
    pub total: Var,
    pub mmge: Var,
    pub multi_kernel: Var,
    pub fusion: Var,
    /// N x t fused class probabilities.
    pub probs: Var,
    /// N x t pre-softmax fusion logits (saliency target).
    pub logits: Var,
    /// The normalized Laplacian the branches filtered with.
    pub laplacian: Var,
    /// Tape handles of `Model::params`, in the same order.
    pub param_vars: Vec<Var>,
}

impl Model {
    /// Initialize all parameters for a dataset shape. Every width comes
    /// from the config; feature widths come from the prepared fold.
    pub fn init(config: &ModelConfig, prepared: &Prepared, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let t = prepared.class_count;
        let dom_width = prepared.x_dom.dim().1;
        let mut params = Vec::new();

        let mut projections = Vec::new();
        for (name, feats) in &prepared.continuous {
            projections.push(params.len());
            params.push(Param {
                name: format!("theta.{name}"),
                group: ParamGroup::Projection,
                value: init_projection(feats.dim().1, config.projection_width, rng),
            });
        }

        let mut heads = Vec::new();
        if config.ram_enabled {
            for q in 0..config.ram_heads {
                let (proj, scorer) = init_head(dom_width, config.ram_hidden, rng);
                let pi = params.len();
                params.push(Param {
                    name: format!("attention.{q}.projection"),
                    group: ParamGroup::AttentionProjection,
                    value: proj,
                });
                let si = params.len();
                params.push(Param {
                    name: format!("attention.{q}.scorer"),
                    group: ParamGroup::AttentionScorer,
                    value: scorer,
                });
                heads.push((pi, si));
            }
        }

        let mut branches = Vec::new();
        for &order in &config.kernel_orders {
            let mut l1 = Vec::new();
            for i in 0..=order {
                l1.push(params.len());
                params.push(Param {
                    name: format!("branch.{order}.l1.{i}"),
                    group: ParamGroup::BranchWeight,
                    value: uniform_fan_in(dom_width, config.hidden_width, rng),
                });
            }
            let mut l2 = Vec::new();
            for i in 0..=order {
                l2.push(params.len());
                params.push(Param {
                    name: format!("branch.{order}.l2.{i}"),
                    group: ParamGroup::BranchWeight,
                    value: uniform_fan_in(config.hidden_width, t, rng),
                });
            }
            branches.push((l1, l2));
        }

        let width = config
            .fusion_mode
            .input_width(t, config.kernel_orders.len());
        let fusion_weight = params.len();
        params.push(Param {
            name: "fusion.weight".into(),
            group: ParamGroup::FusionHead,
            value: uniform_fan_in(width, t, rng),
        });
        let fusion_bias = params.len();
        params.push(Param {
            name: "fusion.bias".into(),
            group: ParamGroup::FusionHead,
            value: Array2::zeros((1, t)),
        });
        let fusion_mix = if config.fusion_mode == FusionMode::Weight {
            let idx = params.len();
            params.push(Param {
                name: "fusion.mix".into(),
                group: ParamGroup::FusionMix,
                value: Array2::zeros((1, config.kernel_orders.len())),
            });
            Some(idx)
        } else {
            None
        };

        Ok(Model {
            config: config.clone(),
            params,
            layout: Layout {
                projections,
                heads,
                branches,
                fusion_weight,
                fusion_bias,
                fusion_mix,
            },
        })
    }

    /// Rebuild a model from stored parameters (checkpoint load). The
    /// parameter list must have been produced by a model with the same
    /// config; roles are recovered from the parameter names.
    pub fn from_parts(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| -> Result<usize> {
            params
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))
        };
        let mut projections = Vec::new();
        for (i, p) in params.iter().enumerate() {
            if p.group == ParamGroup::Projection {
                projections.push(i);
            }
        }
        if projections.is_empty() {
            return Err(Error::Checkpoint("no projection parameters".into()));
        }
        let mut heads = Vec::new();
        if config.ram_enabled {
            for q in 0..config.ram_heads {
                heads.push((
                    find(&format!("attention.{q}.projection"))?,
                    find(&format!("attention.{q}.scorer"))?,
                ));
            }
        }
        let mut branches = Vec::new();
        for &order in &config.kernel_orders {
            let l1 = (0..=order)
                .map(|i| find(&format!("branch.{order}.l1.{i}")))
                .collect::<Result<Vec<_>>>()?;
            let l2 = (0..=order)
                .map(|i| find(&format!("branch.{order}.l2.{i}")))
                .collect::<Result<Vec<_>>>()?;
            branches.push((l1, l2));
        }
        let fusion_weight = find("fusion.weight")?;
        let fusion_bias = find("fusion.bias")?;
        let fusion_mix = if config.fusion_mode == FusionMode::Weight {
            Some(find("fusion.mix")?)
        } else {
            None
        };
        Ok(Model {
            config,
            params,
            layout: Layout {
                projections,
                heads,
                branches,
                fusion_weight,
                fusion_bias,
                fusion_mix,
            },
        })
    }

    /// Full pipeline on a fresh tape with trainable parameters.
    pub fn forward(&self, tape: &Tape, prepared: &Prepared) -> Result<ForwardPass> {
        let x_dom = tape.leaf(prepared.x_dom.clone());
        self.forward_from(tape, prepared, x_dom, true)
    }

    /// Forward pass with a caller-supplied dominant-feature variable
    /// (saliency passes a gradient-enabled leaf) and optionally frozen
    /// parameters.
    pub fn forward_from(
        &self,
        tape: &Tape,
        prepared: &Prepared,
        x_dom: Var,
        trainable: bool,
    ) -> Result<ForwardPass> {
        if prepared.continuous.len() != self.layout.projections.len() {
            return Err(Error::Config(format!(
                "model was built for {} continuous modalities, fold has {}",
                self.layout.projections.len(),
                prepared.continuous.len()
            )));
        }
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.leaf(p.value.clone())
                }
            })
            .collect();

        // Adaptive modal graphs, dominant modality reusing the shared
        // feature variable so input gradients flow through its graph.
        let mut graphs = Vec::new();
        for (slot, (name, feats)) in prepared.continuous.iter().enumerate() {
            let features = if *name == self.config.dominant_modality {
                x_dom
            } else {
                tape.leaf(feats.clone())
            };
            graphs.push(continuous_modal_graph(
                tape,
                features,
                param_vars[self.layout.projections[slot]],
                name.clone(),
            )?);
        }

        let mmge = mmge_loss(tape, &graphs, &prepared.refs)?.total;
        let fused = fuse(tape, &graphs, &prepared.discrete_graphs)?;

        // Attention rewrites the fused graph; without it the fused
        // weights are used directly, floored at zero so the Laplacian
        // precondition holds.
        let adjacency = if self.config.ram_enabled {
            let mask = tape.with_value(fused, |a| neighbor_mask(a, self.config.ram_threshold));
            let heads: Vec<HeadVars> = self
                .layout
                .heads
                .iter()
                .map(|&(p, s)| HeadVars {
                    projection: param_vars[p],
                    scorer: param_vars[s],
                })
                .collect();
            attention_scores(tape, x_dom, &heads, &mask)?
        } else {
            tape.clamp_min(fused, 0.0)?
        };

        let bundle = build_laplacian(tape, adjacency)?;

        let mut branch_probs = Vec::new();
        for (l1, l2) in &self.layout.branches {
            let w1: Vec<Var> = l1.iter().map(|&i| param_vars[i]).collect();
            let w2: Vec<Var> = l2.iter().map(|&i| param_vars[i]).collect();
            branch_probs.push(branch_forward(tape, &bundle, x_dom, &w1, &w2)?);
        }
        let multi_kernel = branch_losses(tape, &branch_probs, &prepared.labels, &prepared.train)?;

        let mix = self.layout.fusion_mix.map(|i| param_vars[i]);
        let fused_input = fusion_input(tape, self.config.fusion_mode, &branch_probs, mix)?;
        let head = FusionHeadVars {
            weight: param_vars[self.layout.fusion_weight],
            bias: param_vars[self.layout.fusion_bias],
        };
        let (probs, logits) = fusion_forward(tape, fused_input, &head)?;
        let fusion = masked_cross_entropy(tape, probs, &prepared.labels, &prepared.train)?;

        let total = total_loss(
            tape,
            mmge,
            multi_kernel,
            fusion,
            self.config.lambda1,
            self.config.lambda2,
            self.config.lambda3,
        )?;

        Ok(ForwardPass {
            total,
            mmge,
            multi_kernel,
            fusion,
            probs,
            logits,
            laplacian: bundle.laplacian,
            param_vars,
        })
    }
}

fn uniform_fan_in(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}
