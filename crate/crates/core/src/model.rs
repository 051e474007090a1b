//! The graph parsing network: link, message, update and readout functions
//! run for a fixed number of iterations over a [`SceneGraph`].
//!
//! One iteration `s` of joint parsing is
//!
//! 1. build the pair grid `F[v,w] = [h_v, h_w, m_vw]` from the previous hidden
//!    states and raw messages (the first iteration uses the raw edge features
//!    as the pair channel, zero-padded to the message width);
//! 2. infer the soft adjacency `A = σ(link(F))`, zeroing the diagonal;
//! 3. compute raw messages `M_vw = [W_V h_v, W_V h_w, W_E Γ_vw]` and the
//!    incoming message `m_v = Σ_{w≠v} A_vw M_vw`;
//! 4. update every node with a GRU: `h_v ← GRU(h_v, m_v)`.
//!
//! After the last iteration each readout head maps `h_v` to label scores.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{NodeKind, SceneGraph};
use crate::nn::{Activation, ConvLstm, EdgeMlp, GruCell, Linear, LstmState};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// How the adjacency used for message passing is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    /// Re-infer the adjacency from the current hidden states and messages at
    /// every iteration.
    #[default]
    JointIterative,
    /// Infer the adjacency once from the raw features and reuse it.
    StaticStructure,
    /// All-ones adjacency; the link network is unused.
    ConstantStructure,
    /// No message passing: readouts are applied to the node features.
    NoGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    /// Shared per-edge MLP (1×1 convolutions) with a sigmoid output.
    #[default]
    Mlp,
    /// Stacked per-edge convolutional LSTM carrying state across frames.
    ConvLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutActivation {
    /// Independent per-class probabilities (multi-label).
    Sigmoid,
    /// One distribution over classes per node.
    Softmax,
}

/// Which nodes a readout head is trained and evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NodeFilter {
    #[default]
    All,
    Human,
    Object,
}

impl NodeFilter {
    pub fn accepts(self, kind: NodeKind) -> bool {
        match self {
            NodeFilter::All => true,
            NodeFilter::Human => kind == NodeKind::Human,
            NodeFilter::Object => kind == NodeKind::Object,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            NodeFilter::All => 0,
            NodeFilter::Human => 1,
            NodeFilter::Object => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(NodeFilter::All),
            1 => Ok(NodeFilter::Human),
            2 => Ok(NodeFilter::Object),
            _ => Err(Error::Malformed(format!("unknown node filter code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub classes: usize,
    pub activation: ReadoutActivation,
    #[serde(default)]
    pub nodes: NodeFilter,
}

impl HeadSpec {
    pub fn sigmoid(name: &str, classes: usize) -> Self {
        HeadSpec {
            name: name.into(),
            classes,
            activation: ReadoutActivation::Sigmoid,
            nodes: NodeFilter::All,
        }
    }

    pub fn softmax(name: &str, classes: usize, nodes: NodeFilter) -> Self {
        HeadSpec {
            name: name.into(),
            classes,
            activation: ReadoutActivation::Softmax,
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `d_V`: node feature and hidden-state width.
    pub node_dim: usize,
    /// `d_E`: edge feature width.
    pub edge_dim: usize,
    /// `S`: number of parsing iterations.
    pub iterations: usize,
    pub link: LinkKind,
    /// Output width of every link layer; the last is 1.
    pub link_widths: Vec<usize>,
    pub link_activation: Activation,
    pub mode: GraphMode,
    pub heads: Vec<HeadSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            node_dim: 16,
            edge_dim: 16,
            iterations: 3,
            link: LinkKind::Mlp,
            link_widths: vec![128, 128, 1],
            link_activation: Activation::Relu,
            mode: GraphMode::JointIterative,
            heads: vec![HeadSpec::sigmoid("action", 4)],
        }
    }
}

impl ModelConfig {
    /// Raw message width `d_M = 2·d_V + d_E`.
    pub fn message_dim(&self) -> usize {
        2 * self.node_dim + self.edge_dim
    }

    /// Link input width `2·d_V + d_M`.
    pub fn link_input_dim(&self) -> usize {
        2 * self.node_dim + self.message_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations (S) must be at least 1".into()));
        }
        if self.node_dim == 0 || self.edge_dim == 0 {
            return Err(Error::Config(
                "node_dim and edge_dim must be positive".into(),
            ));
        }
        if self.link_widths.last() != Some(&1) || self.link_widths.contains(&0) {
            return Err(Error::Config(format!(
                "link_widths must be positive and end in 1, got {:?}",
                self.link_widths
            )));
        }
        if self.heads.is_empty() {
            return Err(Error::Config(
                "at least one readout head is required".into(),
            ));
        }
        for h in &self.heads {
            if h.classes == 0 {
                return Err(Error::Config(format!("head {} has zero classes", h.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum LinkNet {
    Mlp(EdgeMlp),
    ConvLstm(ConvLstm),
}

#[derive(Debug, Clone)]
pub struct Readout {
    pub spec: HeadSpec,
    pub layer: Linear,
}

/// Per-iteration convolutional-LSTM link state, carried across frames.
#[derive(Debug, Clone, Default)]
pub struct TemporalLinkState {
    per_iteration: Vec<Option<LstmState>>,
}

impl TemporalLinkState {
    pub fn new(iterations: usize) -> Self {
        TemporalLinkState {
            per_iteration: vec![None; iterations],
        }
    }
}

/// Working state of one parse: `h^s`, the raw pair messages `M^s` and `A^s`.
#[derive(Debug, Clone)]
pub struct ParseGraphState {
    /// `[n×d_V]`
    pub hidden: Var,
    /// `[n×n×d_M]`, absent before the first message round.
    pub raw_messages: Option<Var>,
    /// `[n×n]` adjacency of the current iteration.
    pub adjacency: Option<Var>,
    /// Adjacency inferred at the first iteration, reused in static mode.
    first_adjacency: Option<Var>,
    /// Iteration index `s`, starting at 1 once the first adjacency is inferred.
    pub iteration: usize,
    /// Raw edge features `Γ^E` on the tape.
    pub edge_features: Var,
    n: usize,
}

/// Differentiable outputs of one parse.
#[derive(Debug, Clone)]
pub struct ParseVars {
    /// `A^1 .. A^S`.
    pub adjacency: Vec<Var>,
    /// `h^0 .. h^S`.
    pub hidden: Vec<Var>,
    /// Aggregated messages `m^1 .. m^S`.
    pub messages: Vec<Var>,
    /// One `[n×Y]` output per head.
    pub outputs: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub adjacency: Tensor,
    pub hidden: Tensor,
}

/// Concrete result of a parse.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseResult {
    /// Final adjacency `A^S` (all zeros when no graph is used).
    pub adjacency: Tensor,
    /// Per-head node outputs `y_v`, `[n×Y]`.
    pub outputs: Vec<Tensor>,
    pub node_kinds: Vec<NodeKind>,
    /// `A^s` and `h^s` for every iteration.
    pub trace: Vec<IterationTrace>,
}

impl ParseResult {
    fn from_vars(tape: &Tape, vars: &ParseVars, kinds: &[NodeKind]) -> Self {
        let n = kinds.len();
        let adjacency = vars
            .adjacency
            .last()
            .map(|&a| tape.value(a).clone())
            .unwrap_or_else(|| Tensor::zeros(&[n, n]));
        ParseResult {
            adjacency,
            outputs: vars
                .outputs
                .iter()
                .map(|&o| tape.value(o).clone())
                .collect(),
            node_kinds: kinds.to_vec(),
            trace: vars
                .adjacency
                .iter()
                .zip(&vars.hidden[1..])
                .map(|(&a, &h)| IterationTrace {
                    adjacency: tape.value(a).clone(),
                    hidden: tape.value(h).clone(),
                })
                .collect(),
        }
    }

    /// Score of a human-object pair for class `class` of head `head`: the
    /// product of the two nodes' output probabilities.
    pub fn pair_score(
        &self,
        human: usize,
        object: usize,
        head: usize,
        class: usize,
    ) -> Result<f64> {
        let n = self.node_kinds.len();
        for (slot, node, kind) in [
            ("human", human, NodeKind::Human),
            ("object", object, NodeKind::Object),
        ] {
            if node >= n {
                return Err(Error::IndexOutOfRange {
                    op: "pair_score",
                    index: node,
                    len: n,
                });
            }
            if self.node_kinds[node] != kind {
                return Err(Error::NodeKind(format!(
                    "{slot} slot holds node {node} of kind {:?}",
                    self.node_kinds[node]
                )));
            }
        }
        let out = self.outputs.get(head).ok_or(Error::IndexOutOfRange {
            op: "pair_score",
            index: head,
            len: self.outputs.len(),
        })?;
        let y = out.shape()[1];
        if class >= y {
            return Err(Error::IndexOutOfRange {
                op: "pair_score",
                index: class,
                len: y,
            });
        }
        Ok(out.at(&[human, class]) * out.at(&[object, class]))
    }
}

#[derive(Debug, Clone)]
pub struct GpnnModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub link: LinkNet,
    /// `W_V^M`
    pub message_node: Linear,
    /// `W_E^M`
    pub message_edge: Linear,
    pub update: GruCell,
    pub readouts: Vec<Readout>,
}

/// Row indices that broadcast `h[n×d]` to the `v` and `w` slots of an
/// `n·n` pair grid.
fn pair_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    let left = (0..n * n).map(|i| i / n).collect();
    let right = (0..n * n).map(|i| i % n).collect();
    (left, right)
}

fn off_diagonal_mask(n: usize) -> Tensor {
    let mut m = Tensor::ones(&[n, n]);
    for i in 0..n {
        m.set(&[i, i], 0.0);
    }
    m
}

/// Builds `F[v,w] = [h_v, h_w, pair[v,w]]`, shape `[n×n×(2·d + c)]`.
pub fn build_feature_grid(tape: &mut Tape, hidden: Var, pair: Var) -> Result<Var> {
    build_padded_grid(tape, hidden, pair, None)
}

fn build_padded_grid(tape: &mut Tape, hidden: Var, pair: Var, width: Option<usize>) -> Result<Var> {
    let hs = tape.shape(hidden).to_vec();
    let ps = tape.shape(pair).to_vec();
    if hs.len() != 2 || ps.len() != 3 || ps[0] != hs[0] || ps[1] != hs[0] {
        return Err(Error::shape("build_feature_grid", &hs, &ps));
    }
    let (n, d, c) = (hs[0], hs[1], ps[2]);
    let (left, right) = pair_indices(n);
    let hv = tape.gather_rows(hidden, &left)?;
    let hw = tape.gather_rows(hidden, &right)?;
    let flat = tape.reshape(pair, &[n * n, c])?;
    let mut parts = vec![hv, hw, flat];
    let mut total = 2 * d + c;
    if let Some(w) = width {
        if w < total {
            return Err(Error::shape("build_feature_grid", &[total], &[w]));
        }
        if w > total {
            parts.push(tape.constant(Tensor::zeros(&[n * n, w - total])));
            total = w;
        }
    }
    let grid = tape.concat(&parts, 1)?;
    tape.reshape(grid, &[n, n, total])
}

impl GpnnModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let link_in = config.link_input_dim();
        let link = match config.link {
            LinkKind::Mlp => LinkNet::Mlp(EdgeMlp::new(
                &mut params,
                "link",
                link_in,
                &config.link_widths,
                config.link_activation,
                rng,
            )?),
            LinkKind::ConvLstm => LinkNet::ConvLstm(ConvLstm::new(
                &mut params,
                "link",
                link_in,
                &config.link_widths,
                rng,
            )?),
        };
        let (dv, de) = (config.node_dim, config.edge_dim);
        let message_node = Linear::new(&mut params, "message.node", dv, dv, rng);
        let message_edge = Linear::new(&mut params, "message.edge", de, de, rng);
        let update = GruCell::new(&mut params, "gru", config.message_dim(), dv, rng);
        let readouts = config
            .heads
            .iter()
            .map(|spec| Readout {
                layer: Linear::new(
                    &mut params,
                    &format!("readout.{}", spec.name),
                    dv,
                    spec.classes,
                    rng,
                ),
                spec: spec.clone(),
            })
            .collect();
        Ok(GpnnModel {
            config,
            params,
            link,
            message_node,
            message_edge,
            update,
            readouts,
        })
    }

    /// Model with the given parameter values; names and shapes must match
    /// what `config` registers.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = GpnnModel::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn heads(&self) -> impl Iterator<Item = &HeadSpec> {
        self.readouts.iter().map(|r| &r.spec)
    }

    fn check_scene(&self, scene: &SceneGraph) -> Result<()> {
        scene.validate()?;
        if scene.node_count() == 0 {
            return Err(Error::Config("scene has no nodes".into()));
        }
        if scene.node_dim() != self.config.node_dim {
            return Err(Error::shape(
                "parse.node_features",
                scene.node_features.shape(),
                &[scene.node_count(), self.config.node_dim],
            ));
        }
        if scene.edge_dim() != self.config.edge_dim {
            return Err(Error::shape(
                "parse.edge_features",
                scene.edge_features.shape(),
                &[scene.node_count(), scene.node_count(), self.config.edge_dim],
            ));
        }
        Ok(())
    }

    /// Fresh state with `h^0 = Γ^V`.
    pub fn init_state(&self, tape: &mut Tape, scene: &SceneGraph) -> Result<ParseGraphState> {
        self.check_scene(scene)?;
        Ok(ParseGraphState {
            hidden: tape.constant(scene.node_features.clone()),
            raw_messages: None,
            adjacency: None,
            first_adjacency: None,
            iteration: 0,
            edge_features: tape.constant(scene.edge_features.clone()),
            n: scene.node_count(),
        })
    }

    /// Infers `A^s` for the next iteration and stores it in `state`.
    ///
    /// The pair channel is `m^{s-1}` once messages exist and `Γ^E` before.
    /// `temporal` must be supplied for a convolutional-LSTM link.
    pub fn infer_adjacency(
        &self,
        tape: &mut Tape,
        params: &Bound,
        state: &mut ParseGraphState,
        temporal: Option<&mut TemporalLinkState>,
    ) -> Result<Var> {
        let n = state.n;
        let s = state.iteration + 1;
        let adjacency = match self.config.mode {
            GraphMode::ConstantStructure => tape.constant(Tensor::ones(&[n, n])),
            GraphMode::NoGraph => tape.constant(Tensor::zeros(&[n, n])),
            GraphMode::StaticStructure if state.first_adjacency.is_some() => {
                state.first_adjacency.expect("checked")
            }
            GraphMode::StaticStructure | GraphMode::JointIterative => {
                let pair = state.raw_messages.unwrap_or(state.edge_features);
                let grid = build_padded_grid(
                    tape,
                    state.hidden,
                    pair,
                    Some(self.config.link_input_dim()),
                )?;
                let raw = match &self.link {
                    LinkNet::Mlp(mlp) => mlp.forward(tape, params, grid)?,
                    LinkNet::ConvLstm(cell) => {
                        let temporal = temporal.ok_or(Error::MissingTemporalState(s))?;
                        if temporal.per_iteration.len() < s {
                            temporal.per_iteration.resize(s, None);
                        }
                        let prev = temporal.per_iteration[s - 1].as_ref();
                        let out = cell.step(tape, params, grid, prev)?;
                        temporal.per_iteration[s - 1] = Some(out.state);
                        tape.sigmoid(out.hidden)?
                    }
                };
                let mask = tape.constant(off_diagonal_mask(n));
                let a = tape.mul(raw, mask)?;
                if state.first_adjacency.is_none() {
                    state.first_adjacency = Some(a);
                }
                a
            }
        };
        state.iteration = s;
        state.adjacency = Some(adjacency);
        Ok(adjacency)
    }

    /// Computes raw messages `M_vw = [W_V h_v, W_V h_w, W_E Γ_vw]`, stores them
    /// in `state`, and returns `m_v = Σ_{w≠v} A_vw M_vw` as `[n×d_M]`.
    pub fn aggregate_messages(
        &self,
        tape: &mut Tape,
        params: &Bound,
        state: &mut ParseGraphState,
    ) -> Result<Var> {
        let n = state.n;
        let adjacency = state.adjacency.ok_or_else(|| {
            Error::Config("aggregate_messages called before infer_adjacency".into())
        })?;
        let a_shape = tape.shape(adjacency).to_vec();
        if a_shape != [n, n] {
            return Err(Error::shape("aggregate_messages", &a_shape, &[n, n]));
        }
        let dm = self.config.message_dim();
        let node = self.message_node.forward(tape, params, state.hidden)?;
        let edge = self
            .message_edge
            .forward(tape, params, state.edge_features)?;
        let (left, right) = pair_indices(n);
        let mv = tape.gather_rows(node, &left)?;
        let mw = tape.gather_rows(node, &right)?;
        let me = tape.reshape(edge, &[n * n, self.config.edge_dim])?;
        let raw = tape.concat(&[mv, mw, me], 1)?;
        state.raw_messages = Some(tape.reshape(raw, &[n, n, dm])?);

        let mask = tape.constant(off_diagonal_mask(n));
        let weights = tape.mul(adjacency, mask)?;
        let weights = tape.reshape(weights, &[n * n])?;
        let weighted = tape.mul_rows(raw, weights)?;
        let weighted = tape.reshape(weighted, &[n, n, dm])?;
        tape.reduce_sum(weighted, 1)
    }

    fn readout(&self, tape: &mut Tape, params: &Bound, hidden: Var) -> Result<Vec<Var>> {
        self.readouts
            .iter()
            .map(|r| {
                let logits = r.layer.forward(tape, params, hidden)?;
                match r.spec.activation {
                    ReadoutActivation::Sigmoid => tape.sigmoid(logits),
                    ReadoutActivation::Softmax => tape.softmax(logits, 1),
                }
            })
            .collect()
    }

    /// Differentiable parse of one frame. `temporal` carries the link state of
    /// a convolutional-LSTM model across frames; `None` starts from zeros.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        scene: &SceneGraph,
        temporal: Option<&mut TemporalLinkState>,
    ) -> Result<ParseVars> {
        let mut state = self.init_state(tape, scene)?;
        let mut vars = ParseVars {
            adjacency: Vec::new(),
            hidden: vec![state.hidden],
            messages: Vec::new(),
            outputs: Vec::new(),
        };
        if self.config.mode == GraphMode::NoGraph {
            vars.outputs = self.readout(tape, params, state.hidden)?;
            return Ok(vars);
        }
        let mut fresh;
        let temporal = match temporal {
            Some(t) => t,
            None => {
                fresh = TemporalLinkState::new(self.config.iterations);
                &mut fresh
            }
        };
        for _ in 0..self.config.iterations {
            let a = self.infer_adjacency(tape, params, &mut state, Some(temporal))?;
            let m = self.aggregate_messages(tape, params, &mut state)?;
            state.hidden = self.update.step(tape, params, state.hidden, m)?;
            vars.adjacency.push(a);
            vars.messages.push(m);
            vars.hidden.push(state.hidden);
        }
        vars.outputs = self.readout(tape, params, state.hidden)?;
        Ok(vars)
    }

    /// Differentiable parse of a time-ordered sequence of frames with the
    /// link state carried from frame to frame.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        params: &Bound,
        frames: &[SceneGraph],
    ) -> Result<Vec<ParseVars>> {
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().find(|f| f.node_count() != first.node_count()) {
                return Err(Error::shape(
                    "parse_sequence",
                    &[first.node_count()],
                    &[bad.node_count()],
                ));
            }
        }
        let mut temporal = TemporalLinkState::new(self.config.iterations);
        frames
            .iter()
            .map(|f| self.forward(tape, params, f, Some(&mut temporal)))
            .collect()
    }

    /// Parses one frame without recording gradients. A convolutional-LSTM
    /// link starts from a zero state; use [`GpnnModel::parse_sequence`] to
    /// carry it across frames.
    pub fn parse(&self, scene: &SceneGraph) -> Result<ParseResult> {
        let mut tape = Tape::inference();
        let params = self.params.bind(&mut tape);
        let vars = self.forward(&mut tape, &params, scene, None)?;
        Ok(ParseResult::from_vars(&tape, &vars, &scene.node_kinds))
    }

    /// Parses a sequence of frames without recording gradients.
    pub fn parse_sequence(&self, frames: &[SceneGraph]) -> Result<Vec<ParseResult>> {
        let mut tape = Tape::inference();
        let params = self.params.bind(&mut tape);
        let vars = self.forward_sequence(&mut tape, &params, frames)?;
        Ok(vars
            .iter()
            .zip(frames)
            .map(|(v, f)| ParseResult::from_vars(&tape, v, &f.node_kinds))
            .collect())
    }
}
