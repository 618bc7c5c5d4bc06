//! Recurrent reprocessing heads and the classifier on top of them.
//!
//! Sequences are row-major `n×d` matrices and every weight is stored
//! `in × out`, so a step computes `x·P + h·Q + b` on row vectors.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::{self, Bound, ParamId, ParamStore};
use crate::rng::RandomSource;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Lstm,
    Gru,
}

impl CellKind {
    /// Gate order: vanilla `[candidate]`, LSTM `[candidate, forget, input,
    /// output]`, GRU `[update, reset, candidate]`.
    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Vanilla => &["candidate"],
            CellKind::Lstm => &["candidate", "forget", "input", "output"],
            CellKind::Gru => &["update", "reset", "candidate"],
        }
    }
}

/// The four recurrent variants exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnVariant {
    Lstm,
    Bilstm,
    Gru,
    Bigru,
}

impl RnnVariant {
    pub const ALL: [RnnVariant; 4] = [
        RnnVariant::Lstm,
        RnnVariant::Bilstm,
        RnnVariant::Gru,
        RnnVariant::Bigru,
    ];

    pub fn cell(self) -> CellKind {
        match self {
            RnnVariant::Lstm | RnnVariant::Bilstm => CellKind::Lstm,
            RnnVariant::Gru | RnnVariant::Bigru => CellKind::Gru,
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, RnnVariant::Bilstm | RnnVariant::Bigru)
    }

    pub fn name(self) -> &'static str {
        match self {
            RnnVariant::Lstm => "lstm",
            RnnVariant::Bilstm => "bilstm",
            RnnVariant::Gru => "gru",
            RnnVariant::Bigru => "bigru",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RnnVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown rnn variant {s:?}")))
    }
}

/// `Z = X·W + b`, aligning embedding width with the recurrent input width.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl BridgeParams {
    pub fn new(
        prefix: &str,
        input: usize,
        output: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        BridgeParams {
            weight: store.add(
                format!("{prefix}.weight"),
                params::xavier(input, output, rng),
            ),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let z = tape.matmul(x, bound[self.weight])?;
        tape.add_bias(z, bound[self.bias])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub gates: Vec<GateParams>,
}

impl RnnCellParams {
    pub fn new(
        prefix: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        let gates = kind
            .gate_names()
            .iter()
            .map(|g| GateParams {
                input: store.add(
                    format!("{prefix}.{g}.input"),
                    params::xavier(input_dim, hidden, rng),
                ),
                recurrent: store.add(
                    format!("{prefix}.{g}.recurrent"),
                    params::xavier(hidden, hidden, rng),
                ),
                bias: store.add(format!("{prefix}.{g}.bias"), Tensor::zeros(&[hidden])),
            })
            .collect();
        RnnCellParams {
            kind,
            input_dim,
            hidden,
            gates,
        }
    }
}

/// Hidden state, plus the cell state for LSTM. Both are `1×h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnState {
    pub hidden: Var,
    pub cell: Option<Var>,
}

impl RnnState {
    pub fn zero(tape: &mut Tape, cell: &RnnCellParams) -> Self {
        let hidden = tape.constant(Tensor::zeros(&[1, cell.hidden]));
        let c = match cell.kind {
            CellKind::Lstm => Some(tape.constant(Tensor::zeros(&[1, cell.hidden]))),
            _ => None,
        };
        RnnState { hidden, cell: c }
    }
}

fn gate_pre(tape: &mut Tape, bound: &Bound, gate: &GateParams, x_proj: Var, h: Var) -> Result<Var> {
    let r = tape.matmul(h, bound[gate.recurrent])?;
    let s = tape.add(x_proj, r)?;
    tape.add_bias(s, bound[gate.bias])
}

/// One step given the input already projected through each gate's `P`.
fn step_projected(
    tape: &mut Tape,
    bound: &Bound,
    cell: &RnnCellParams,
    x_proj: &[Var],
    state: RnnState,
) -> Result<RnnState> {
    let h = state.hidden;
    let g = &cell.gates;
    match cell.kind {
        CellKind::Vanilla => {
            let a = gate_pre(tape, bound, &g[0], x_proj[0], h)?;
            Ok(RnnState {
                hidden: tape.tanh(a),
                cell: None,
            })
        }
        CellKind::Lstm => {
            let c_prev = state
                .cell
                .ok_or_else(|| Error::param("lstm step needs a cell state"))?;
            let a = gate_pre(tape, bound, &g[0], x_proj[0], h)?;
            let candidate = tape.tanh(a);
            let a = gate_pre(tape, bound, &g[1], x_proj[1], h)?;
            let forget = tape.sigmoid(a);
            let a = gate_pre(tape, bound, &g[2], x_proj[2], h)?;
            let input = tape.sigmoid(a);
            let a = gate_pre(tape, bound, &g[3], x_proj[3], h)?;
            let output = tape.sigmoid(a);
            let fresh = tape.mul(input, candidate)?;
            let kept = tape.mul(forget, c_prev)?;
            let c = tape.add(fresh, kept)?;
            let squashed = tape.tanh(c);
            Ok(RnnState {
                hidden: tape.mul(output, squashed)?,
                cell: Some(c),
            })
        }
        CellKind::Gru => {
            let a = gate_pre(tape, bound, &g[0], x_proj[0], h)?;
            let update = tape.sigmoid(a);
            let a = gate_pre(tape, bound, &g[1], x_proj[1], h)?;
            let reset = tape.sigmoid(a);
            let gated = tape.mul(reset, h)?;
            let a = gate_pre(tape, bound, &g[2], x_proj[2], gated)?;
            let candidate = tape.tanh(a);
            // (1 - z)·h̃ + z·h  ==  h̃ + z·(h - h̃)
            let diff = tape.sub(h, candidate)?;
            let moved = tape.mul(update, diff)?;
            Ok(RnnState {
                hidden: tape.add(candidate, moved)?,
                cell: None,
            })
        }
    }
}

fn check_input(tape: &Tape, cell: &RnnCellParams, x: Var, op: &'static str) -> Result<()> {
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != cell.input_dim {
        return Err(Error::dim(op, shape, &[cell.input_dim]));
    }
    Ok(())
}

/// One recurrence step on a `1×d` input row.
pub fn rnn_step(
    tape: &mut Tape,
    bound: &Bound,
    cell: &RnnCellParams,
    x: Var,
    state: RnnState,
) -> Result<RnnState> {
    check_input(tape, cell, x, "rnn step")?;
    if tape.shape(x)[0] != 1 || tape.shape(state.hidden) != [1, cell.hidden] {
        return Err(Error::dim(
            "rnn step",
            tape.shape(x),
            tape.shape(state.hidden),
        ));
    }
    let proj = cell
        .gates
        .iter()
        .map(|g| tape.matmul(x, bound[g.input]))
        .collect::<Result<Vec<_>>>()?;
    step_projected(tape, bound, cell, &proj, state)
}

fn project_rows(
    tape: &mut Tape,
    bound: &Bound,
    cell: &RnnCellParams,
    seq: Var,
) -> Result<Vec<Var>> {
    cell.gates
        .iter()
        .map(|g| tape.matmul(seq, bound[g.input]))
        .collect()
}

fn row_of(tape: &mut Tape, projected: &[Var], t: usize) -> Result<Vec<Var>> {
    projected.iter().map(|&p| tape.slice(p, 0, t, 1)).collect()
}

fn stack(tape: &mut Tape, rows: &[Var]) -> Result<Var> {
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        tape.concat(rows, 0)
    }
}

/// Left-to-right scan from a zero state over an `n×d` sequence. Positions
/// at or past `valid_len` repeat the last state. Returns all `n×h` states
/// and the final state.
pub fn rnn_forward(
    tape: &mut Tape,
    bound: &Bound,
    cell: &RnnCellParams,
    seq: Var,
    valid_len: usize,
) -> Result<(Var, RnnState)> {
    check_input(tape, cell, seq, "rnn forward")?;
    let n = tape.shape(seq)[0];
    if valid_len > n {
        return Err(Error::dim("rnn forward", &[valid_len], &[n]));
    }
    let projected = project_rows(tape, bound, cell, seq)?;
    let mut state = RnnState::zero(tape, cell);
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        if t < valid_len {
            let x = row_of(tape, &projected, t)?;
            state = step_projected(tape, bound, cell, &x, state)?;
        }
        rows.push(state.hidden);
    }
    Ok((stack(tape, &rows)?, state))
}

/// Right-to-left scan starting at `valid_len - 1`. Rows past `valid_len`
/// stay zero. Returns all states and the state after position 0.
pub fn rnn_backward(
    tape: &mut Tape,
    bound: &Bound,
    cell: &RnnCellParams,
    seq: Var,
    valid_len: usize,
) -> Result<(Var, RnnState)> {
    check_input(tape, cell, seq, "rnn backward")?;
    let n = tape.shape(seq)[0];
    if valid_len > n {
        return Err(Error::dim("rnn backward", &[valid_len], &[n]));
    }
    let projected = project_rows(tape, bound, cell, seq)?;
    let mut state = RnnState::zero(tape, cell);
    let zero = state.hidden;
    let mut rows = alloc::vec![zero; n];
    for t in (0..valid_len).rev() {
        let x = row_of(tape, &projected, t)?;
        state = step_projected(tape, bound, cell, &x, state)?;
        rows[t] = state.hidden;
    }
    Ok((stack(tape, &rows)?, state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiRnnParams {
    pub forward: RnnCellParams,
    pub backward: RnnCellParams,
}

impl BiRnnParams {
    pub fn new(
        prefix: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        BiRnnParams {
            forward: RnnCellParams::new(
                &format!("{prefix}.fw"),
                kind,
                input_dim,
                hidden,
                store,
                rng,
            ),
            backward: RnnCellParams::new(
                &format!("{prefix}.bw"),
                kind,
                input_dim,
                hidden,
                store,
                rng,
            ),
        }
    }
}

/// Per-position concatenation of the forward and backward scans, `n×2h`.
pub fn birnn_forward(
    tape: &mut Tape,
    bound: &Bound,
    params: &BiRnnParams,
    seq: Var,
    valid_len: usize,
) -> Result<Var> {
    if params.forward.kind != params.backward.kind
        || params.forward.hidden != params.backward.hidden
    {
        return Err(Error::param(
            "bidirectional cells must share variant and hidden size",
        ));
    }
    let (fw, _) = rnn_forward(tape, bound, &params.forward, seq, valid_len)?;
    let (bw, _) = rnn_backward(tape, bound, &params.backward, seq, valid_len)?;
    tape.concat(&[fw, bw], 1)
}

/// Either recurrent layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Recurrent {
    Uni(RnnCellParams),
    Bi(BiRnnParams),
}

impl Recurrent {
    pub fn new(
        prefix: &str,
        variant: RnnVariant,
        input_dim: usize,
        hidden: usize,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Self {
        if variant.bidirectional() {
            Recurrent::Bi(BiRnnParams::new(
                prefix,
                variant.cell(),
                input_dim,
                hidden,
                store,
                rng,
            ))
        } else {
            Recurrent::Uni(RnnCellParams::new(
                &format!("{prefix}.fw"),
                variant.cell(),
                input_dim,
                hidden,
                store,
                rng,
            ))
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Recurrent::Uni(c) => c.hidden,
            Recurrent::Bi(b) => 2 * b.forward.hidden,
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        matches!(self, Recurrent::Bi(_))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        seq: Var,
        valid_len: usize,
    ) -> Result<Var> {
        match self {
            Recurrent::Uni(c) => Ok(rnn_forward(tape, bound, c, seq, valid_len)?.0),
            Recurrent::Bi(b) => birnn_forward(tape, bound, b, seq, valid_len),
        }
    }
}

/// Final valid forward state, joined with the first backward state when
/// the layout is bidirectional. `1×width`.
pub fn summarize(
    tape: &mut Tape,
    states: Var,
    valid_len: usize,
    bidirectional: bool,
) -> Result<Var> {
    let shape = tape.shape(states).to_vec();
    let last = valid_len.max(1) - 1;
    if !bidirectional {
        return tape.slice(states, 0, last, 1);
    }
    let h = shape[1] / 2;
    let fw = tape.slice(states, 1, 0, h)?;
    let fw = tape.slice(fw, 0, last, 1)?;
    let bw = tape.slice(states, 1, h, h)?;
    let bw = tape.slice(bw, 0, 0, 1)?;
    tape.concat(&[fw, bw], 1)
}

/// Dense ReLU layer followed by the `K`-way output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub dense_weight: ParamId,
    pub dense_bias: ParamId,
    pub output_weight: ParamId,
    pub output_bias: ParamId,
    pub classes: usize,
    pub dropout: f64,
}

impl ClassifierParams {
    pub fn new(
        prefix: &str,
        input: usize,
        dense: usize,
        classes: usize,
        dropout: f64,
        store: &mut ParamStore,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::param(format!(
                "classifier needs at least 2 classes, got {classes}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::param(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(ClassifierParams {
            dense_weight: store.add(
                format!("{prefix}.dense.weight"),
                params::xavier(input, dense, rng),
            ),
            dense_bias: store.add(format!("{prefix}.dense.bias"), Tensor::zeros(&[dense])),
            output_weight: store.add(
                format!("{prefix}.output.weight"),
                params::xavier(dense, classes, rng),
            ),
            output_bias: store.add(format!("{prefix}.output.bias"), Tensor::zeros(&[classes])),
            classes,
            dropout,
        })
    }

    /// `softmax(ReLU(s·W_d + b_d)·W_o + b_o)` on a `1×w` summary.
    pub fn probabilities(&self, tape: &mut Tape, bound: &Bound, summary: Var) -> Result<Var> {
        let z = tape.matmul(summary, bound[self.dense_weight])?;
        let z = tape.add_bias(z, bound[self.dense_bias])?;
        let z = tape.relu(z);
        let logits = tape.matmul(z, bound[self.output_weight])?;
        let logits = tape.add_bias(logits, bound[self.output_bias])?;
        if tape.shape(logits)[1] != self.classes {
            return Err(Error::dim(
                "classifier",
                tape.shape(logits),
                &[self.classes],
            ));
        }
        tape.softmax(logits, 1)
    }
}

/// Dropout on the recurrent states, summary, dense layer and softmax.
/// Returns `1×K` probabilities.
#[allow(clippy::too_many_arguments)]
pub fn classify(
    tape: &mut Tape,
    bound: &Bound,
    head: &ClassifierParams,
    states: Var,
    valid_len: usize,
    bidirectional: bool,
    rng: &mut RandomSource,
    training: bool,
) -> Result<Var> {
    let dropped = tape.dropout(states, head.dropout, rng, training)?;
    let summary = summarize(tape, dropped, valid_len, bidirectional)?;
    head.probabilities(tape, bound, summary)
}

/// Index of the largest probability; the lowest index wins ties.
pub fn predict(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

/// `-ln max(p[label], 1e-12)`.
pub fn cross_entropy_loss(probabilities: &[f64], label: usize) -> Result<f64> {
    let p = probabilities.get(label).ok_or_else(|| {
        Error::data(format!(
            "label {label} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-math::ln(p.max(crate::tape::PROB_FLOOR)))
}
