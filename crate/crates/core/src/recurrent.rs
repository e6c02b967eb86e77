//! LSTM and GRU cells and sequence unrolling.
//!
//! Gates are computed one at a time (no fused gate matrix) so each weight
//! matrix can be audited independently. Hidden states live on the tape, so
//! unrolling a cell over a sequence records everything needed for
//! backpropagation through time.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{ParamId, ParamSet, Tensor};

/// Which recurrent cell family a layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::Lstm => write!(f, "lstm"),
            CellKind::Gru => write!(f, "gru"),
        }
    }
}

/// One gate: a weight on the step input, a weight on the previous hidden
/// state, and a bias.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
}

impl GateParams {
    fn init(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        GateParams {
            input_weight: params.add_uniform(
                format!("{name}.input_weight"),
                vec![hidden_dim, input_dim],
                rng,
            ),
            hidden_weight: params.add_uniform(
                format!("{name}.hidden_weight"),
                vec![hidden_dim, hidden_dim],
                rng,
            ),
            bias: params.add_uniform(format!("{name}.bias"), vec![hidden_dim], rng),
        }
    }

    /// sigma-or-tanh pre-activation: W_x.x + W_h.h + b.
    fn preactivation(
        &self,
        g: &mut Graph,
        x: NodeId,
        h: NodeId,
        params: &ParamSet,
    ) -> Result<NodeId> {
        let wx = g.param(self.input_weight, params);
        let wh = g.param(self.hidden_weight, params);
        let b = g.param(self.bias, params);
        let from_input = g.matvec(wx, x)?;
        let from_hidden = g.matvec(wh, h)?;
        let s = g.add(from_input, from_hidden)?;
        g.add(s, b)
    }
}

#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub candidate: GateParams,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug)]
pub struct GruParams {
    pub reset_gate: GateParams,
    pub update_gate: GateParams,
    pub candidate: GateParams,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug)]
pub enum CellParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_dim,
            CellParams::Gru(p) => p.hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input_dim,
            CellParams::Gru(p) => p.input_dim,
        }
    }
}

/// Recurrent state: hidden vector, plus the memory cell for LSTM.
#[derive(Clone, Copy, Debug)]
pub struct RnnState {
    pub hidden: NodeId,
    pub cell: Option<NodeId>,
}

/// Every weight and bias drawn i.i.d. uniform on [-0.1, 0.1].
pub fn init_lstm(
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut Rng,
) -> LstmParams {
    LstmParams {
        input_gate: GateParams::init(
            params,
            &format!("{prefix}.input_gate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        forget_gate: GateParams::init(
            params,
            &format!("{prefix}.forget_gate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        output_gate: GateParams::init(
            params,
            &format!("{prefix}.output_gate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        candidate: GateParams::init(
            params,
            &format!("{prefix}.candidate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        input_dim,
        hidden_dim,
    }
}

pub fn init_gru(
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut Rng,
) -> GruParams {
    GruParams {
        reset_gate: GateParams::init(
            params,
            &format!("{prefix}.reset_gate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        update_gate: GateParams::init(
            params,
            &format!("{prefix}.update_gate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        candidate: GateParams::init(
            params,
            &format!("{prefix}.candidate"),
            input_dim,
            hidden_dim,
            rng,
        ),
        input_dim,
        hidden_dim,
    }
}

pub fn init_cell(
    kind: CellKind,
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut Rng,
) -> CellParams {
    match kind {
        CellKind::Lstm => CellParams::Lstm(init_lstm(params, prefix, input_dim, hidden_dim, rng)),
        CellKind::Gru => CellParams::Gru(init_gru(params, prefix, input_dim, hidden_dim, rng)),
    }
}

/// Zero initial state of the right shape for the cell family.
pub fn zero_state(g: &mut Graph, kind: CellKind, hidden_dim: usize) -> RnnState {
    let hidden = g.input(Tensor::zeros(vec![hidden_dim]));
    let cell = match kind {
        CellKind::Lstm => Some(g.input(Tensor::zeros(vec![hidden_dim]))),
        CellKind::Gru => None,
    };
    RnnState { hidden, cell }
}

/// Initial state from explicit vectors (e.g. a stored uniform draw).
pub fn state_from_values(
    g: &mut Graph,
    kind: CellKind,
    hidden: Tensor,
    cell: Option<Tensor>,
) -> RnnState {
    let hidden = g.input(hidden);
    let cell = match kind {
        CellKind::Lstm => Some(g.input(cell.expect("lstm state needs a memory cell"))),
        CellKind::Gru => None,
    };
    RnnState { hidden, cell }
}

/// One LSTM step:
/// i,f,o = sigmoid(W_x.x + W_h.h + b) per gate, g = tanh(...),
/// c_t = f*c + i*g, h_t = o*tanh(c_t).
pub fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    prev: &RnnState,
    p: &LstmParams,
    params: &ParamSet,
) -> Result<RnnState> {
    let prev_cell = prev.cell.ok_or_else(|| {
        Error::State("lstm_cell needs a memory cell in the previous state".into())
    })?;
    let i_pre = p.input_gate.preactivation(g, x, prev.hidden, params)?;
    let input_gate = g.sigmoid(i_pre);
    let f_pre = p.forget_gate.preactivation(g, x, prev.hidden, params)?;
    let forget_gate = g.sigmoid(f_pre);
    let o_pre = p.output_gate.preactivation(g, x, prev.hidden, params)?;
    let output_gate = g.sigmoid(o_pre);
    let c_pre = p.candidate.preactivation(g, x, prev.hidden, params)?;
    let candidate = g.tanh(c_pre);

    let kept = g.mul(forget_gate, prev_cell)?;
    let written = g.mul(input_gate, candidate)?;
    let cell = g.add(kept, written)?;
    let cell_act = g.tanh(cell);
    let hidden = g.mul(output_gate, cell_act)?;
    Ok(RnnState {
        hidden,
        cell: Some(cell),
    })
}

/// One GRU step:
/// r,z = sigmoid(...), h~ = tanh(W_x.x + W_h.(r*h) + b), h_t = z*h + (1-z)*h~.
pub fn gru_cell(
    g: &mut Graph,
    x: NodeId,
    prev: &RnnState,
    p: &GruParams,
    params: &ParamSet,
) -> Result<RnnState> {
    let r_pre = p.reset_gate.preactivation(g, x, prev.hidden, params)?;
    let reset_gate = g.sigmoid(r_pre);
    let z_pre = p.update_gate.preactivation(g, x, prev.hidden, params)?;
    let update_gate = g.sigmoid(z_pre);

    let gated_hidden = g.mul(reset_gate, prev.hidden)?;
    let candidate_pre = p.candidate.preactivation(g, x, gated_hidden, params)?;
    let candidate = g.tanh(candidate_pre);

    // z*h + (1-z)*h~ written as z*h + h~ - z*h~
    let carried = g.mul(update_gate, prev.hidden)?;
    let damped = g.mul(update_gate, candidate)?;
    let new_part = g.sub(candidate, damped)?;
    let hidden = g.add(carried, new_part)?;
    Ok(RnnState { hidden, cell: None })
}

/// One step of whichever family the parameters belong to.
pub fn cell_step(
    g: &mut Graph,
    x: NodeId,
    prev: &RnnState,
    p: &CellParams,
    params: &ParamSet,
) -> Result<RnnState> {
    match p {
        CellParams::Lstm(p) => lstm_cell(g, x, prev, p, params),
        CellParams::Gru(p) => gru_cell(g, x, prev, p, params),
    }
}

/// Apply the cell sequentially over `inputs`, returning all hidden states.
pub fn unroll(
    g: &mut Graph,
    inputs: &[NodeId],
    p: &CellParams,
    initial: RnnState,
    params: &ParamSet,
) -> Result<Vec<NodeId>> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = initial;
    let mut hiddens = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = cell_step(g, x, &state, p, params)?;
        hiddens.push(state.hidden);
    }
    Ok(hiddens)
}
