//! Flow/policy heads on top of an [`Mlp`] and the edge-balance objective
//! shared by detailed balance, its augmented (intrinsic reward) variant and
//! the outcome-conditioned loss.

use std::ops::Range;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampling::Trajectory;
use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::nn::{
    log_softmax_grad, masked_log_softmax, Activation, Adam, AdamConfig, Gradients, Mlp,
};

/// Architecture and optimizer settings of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
}

impl NetSpec {
    pub fn new(hidden: Vec<usize>, activation: Activation, lr: f64) -> Self {
        Self {
            hidden,
            activation,
            lr,
        }
    }

    pub fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }

    pub fn build(&self, input: usize, output: usize, rng: &mut impl Rng) -> (Mlp, Adam) {
        let net = Mlp::new(&self.sizes(input, output), self.activation, rng);
        let adam = Adam::for_net(AdamConfig::with_lr(self.lr), &net);
        (net, adam)
    }
}

/// Output layout `[log F | forward logits | backward logits]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub n_fwd: usize,
    pub n_bwd: usize,
}

impl HeadLayout {
    pub fn for_env(env: &dyn TaskGraph) -> Self {
        Self {
            n_fwd: env.num_actions(),
            n_bwd: env.num_backward_actions(),
        }
    }

    pub fn width(&self) -> usize {
        1 + self.n_fwd + self.n_bwd
    }

    pub fn fwd(&self) -> Range<usize> {
        1..1 + self.n_fwd
    }

    pub fn bwd(&self) -> Range<usize> {
        1 + self.n_fwd..self.width()
    }
}

/// Log-domain state flow and policies of one state (optionally given an outcome).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowEval {
    pub log_flow: f64,
    /// Per forward slot; `-inf` on illegal actions.
    pub log_pf: Vec<f64>,
    /// Per backward slot; `-inf` on illegal slots.
    pub log_pb: Vec<f64>,
}

/// Unconditional flows and policies.
pub trait FlowFunctions {
    fn evaluate(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Vec<FlowEval>>;
}

/// Network inputs plus the legality masks of each row.
#[derive(Clone, Debug, Default)]
pub struct RowBatch {
    pub inputs: Array2<f64>,
    pub fwd_mask: Vec<Vec<bool>>,
    pub bwd_mask: Vec<Vec<bool>>,
}

impl RowBatch {
    /// Rows encode `state` optionally concatenated with an outcome encoding.
    pub fn build<'a>(
        env: &dyn TaskGraph,
        rows: impl ExactSizeIterator<Item = (&'a State, Option<&'a State>)>,
        conditional: bool,
    ) -> Self {
        let d = env.encoding_dim();
        let width = if conditional { 2 * d } else { d };
        let n = rows.len();
        let mut inputs = Array2::zeros((n, width));
        let mut fwd_mask = Vec::with_capacity(n);
        let mut bwd_mask = Vec::with_capacity(n);
        for (i, (s, y)) in rows.enumerate() {
            let mut row = inputs.row_mut(i);
            let buf = row.as_slice_mut().expect("standard layout");
            env.encode_into(s, &mut buf[..d]);
            if let Some(y) = y {
                env.encode_into(y, &mut buf[d..]);
            }
            fwd_mask.push(env.forward_mask(s));
            bwd_mask.push(env.backward_mask(s));
        }
        Self {
            inputs,
            fwd_mask,
            bwd_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized heads for every row of a forward pass.
#[derive(Clone, Debug)]
pub struct HeadValues {
    pub log_flow: Vec<f64>,
    pub log_pf: Array2<f64>,
    pub log_pb: Array2<f64>,
}

impl HeadValues {
    pub fn from_outputs(out: &Array2<f64>, layout: HeadLayout, rows: &RowBatch) -> Self {
        let n = out.nrows();
        let mut log_pf = Array2::zeros((n, layout.n_fwd));
        let mut log_pb = Array2::zeros((n, layout.n_bwd));
        let mut log_flow = Vec::with_capacity(n);
        let mut fwd_buf = vec![0.0; layout.n_fwd];
        let mut bwd_buf = vec![0.0; layout.n_bwd];
        for i in 0..n {
            let row = out.row(i);
            log_flow.push(row[0]);
            fwd_buf
                .iter_mut()
                .zip(row.slice(s![layout.fwd()]))
                .for_each(|(b, v)| *b = *v);
            let mut pf = log_pf.row_mut(i);
            masked_log_softmax(&fwd_buf, &rows.fwd_mask[i], pf.as_slice_mut().unwrap());
            bwd_buf
                .iter_mut()
                .zip(row.slice(s![layout.bwd()]))
                .for_each(|(b, v)| *b = *v);
            let mut pb = log_pb.row_mut(i);
            masked_log_softmax(&bwd_buf, &rows.bwd_mask[i], pb.as_slice_mut().unwrap());
        }
        Self {
            log_flow,
            log_pf,
            log_pb,
        }
    }

    pub fn eval(&self, i: usize) -> FlowEval {
        FlowEval {
            log_flow: self.log_flow[i],
            log_pf: self.log_pf.row(i).to_vec(),
            log_pb: self.log_pb.row(i).to_vec(),
        }
    }
}

pub fn evaluate_rows(net: &Mlp, layout: HeadLayout, rows: &RowBatch) -> Result<HeadValues> {
    if rows.is_empty() {
        return Ok(HeadValues {
            log_flow: vec![],
            log_pf: Array2::zeros((0, layout.n_fwd)),
            log_pb: Array2::zeros((0, layout.n_bwd)),
        });
    }
    let out = net.predict(rows.inputs.view())?;
    Ok(HeadValues::from_outputs(&out, layout, rows))
}

/// One balance constraint `F(src) P_F(dst|src) = F(dst) P_B(src|dst) * scale + intrinsic`,
/// penalized as `weight * (lhs - rhs)^2` in log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTerm {
    pub src: usize,
    pub dst: usize,
    pub action: usize,
    pub bwd_slot: usize,
    /// Fixed log-flow of the destination (terminal boundary); `None` uses the learned head.
    pub dst_log_flow: Option<f64>,
    /// Log of the multiplicative factor on the destination side (e.g. `log R(x|y)`).
    pub log_scale: f64,
    /// Additive linear-domain term on the destination side.
    pub intrinsic: f64,
    pub weight: f64,
}

impl EdgeTerm {
    pub fn new(src: usize, dst: usize, action: usize, bwd_slot: usize) -> Self {
        Self {
            src,
            dst,
            action,
            bwd_slot,
            dst_log_flow: None,
            log_scale: 0.0,
            intrinsic: 0.0,
            weight: 1.0,
        }
    }
}

/// Log-space residual and the share of the right-hand side carried by the
/// flow term (1 when there is no intrinsic reward).
fn edge_residual(heads: &HeadValues, e: &EdgeTerm) -> Result<(f64, f64)> {
    let log_pf = heads.log_pf[(e.src, e.action)];
    let log_pb = heads.log_pb[(e.dst, e.bwd_slot)];
    if log_pf == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability(format!(
            "forward action {} of row {}",
            e.action, e.src
        )));
    }
    if log_pb == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability(format!(
            "backward slot {} of row {}",
            e.bwd_slot, e.dst
        )));
    }
    let dst_flow = e.dst_log_flow.unwrap_or(heads.log_flow[e.dst]);
    let lhs = heads.log_flow[e.src] + log_pf;
    let a = dst_flow + log_pb + e.log_scale;
    if e.intrinsic == 0.0 {
        return Ok((lhs - a, 1.0));
    }
    let rhs = log_add_exp(a, e.intrinsic.ln());
    Ok((lhs - rhs, (a - rhs).exp()))
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sum of weighted squared edge residuals.
pub fn edge_balance_value(
    net: &Mlp,
    layout: HeadLayout,
    rows: &RowBatch,
    edges: &[EdgeTerm],
) -> Result<f64> {
    let heads = evaluate_rows(net, layout, rows)?;
    edges.iter().try_fold(0.0, |acc, e| {
        let (delta, _) = edge_residual(&heads, e)?;
        Ok(acc + e.weight * delta * delta)
    })
}

/// Sum of weighted squared edge residuals and its parameter gradient.
pub fn edge_balance_loss(
    net: &Mlp,
    layout: HeadLayout,
    rows: &RowBatch,
    edges: &[EdgeTerm],
) -> Result<(f64, Gradients)> {
    let (out, cache) = net.forward(rows.inputs.view())?;
    let heads = HeadValues::from_outputs(&out, layout, rows);
    let mut grad = Array2::<f64>::zeros(out.dim());
    let mut loss = 0.0;
    for e in edges {
        let (delta, share) = edge_residual(&heads, e)?;
        loss += e.weight * delta * delta;
        let g = 2.0 * e.weight * delta;
        grad[(e.src, 0)] += g;
        {
            let mut row = grad.row_mut(e.src);
            let fwd = &mut row.as_slice_mut().unwrap()[layout.fwd()];
            log_softmax_grad(
                heads.log_pf.row(e.src).as_slice().unwrap(),
                e.action,
                g,
                fwd,
            );
        }
        let gd = -g * share;
        if e.dst_log_flow.is_none() {
            grad[(e.dst, 0)] += gd;
        }
        let mut row = grad.row_mut(e.dst);
        let bwd = &mut row.as_slice_mut().unwrap()[layout.bwd()];
        log_softmax_grad(
            heads.log_pb.row(e.dst).as_slice().unwrap(),
            e.bwd_slot,
            gd,
            bwd,
        );
    }
    let grads = net.backward(&cache, grad.view())?;
    Ok((loss, grads))
}

/// All states of a set of trajectories as network rows, plus one
/// [`EdgeTerm`] per edge (weighted so the loss is the mean over edges).
#[derive(Clone, Debug)]
pub struct EdgeBatch {
    pub rows: RowBatch,
    pub edges: Vec<EdgeTerm>,
    /// `(trajectory, edge index within it)` of every edge.
    pub origin: Vec<(usize, usize)>,
    /// First row of every trajectory.
    pub starts: Vec<usize>,
}

impl EdgeBatch {
    /// `outcomes[i]`, when given, is concatenated to every row of trajectory `i`.
    pub fn from_trajectories(
        env: &dyn TaskGraph,
        trajs: &[&Trajectory],
        outcomes: Option<&[&State]>,
    ) -> Self {
        let n_rows: usize = trajs.iter().map(|t| t.states.len()).sum();
        let n_edges: usize = trajs.iter().map(|t| t.len()).sum();
        let pairs: Vec<(&State, Option<&State>)> = trajs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.states.iter().map(move |s| (s, outcomes.map(|o| o[i]))))
            .collect();
        debug_assert_eq!(pairs.len(), n_rows);
        let rows = RowBatch::build(env, pairs.into_iter(), outcomes.is_some());
        let weight = 1.0 / n_edges.max(1) as f64;
        let mut edges = Vec::with_capacity(n_edges);
        let mut origin = Vec::with_capacity(n_edges);
        let mut starts = Vec::with_capacity(trajs.len());
        let mut row = 0;
        for (i, t) in trajs.iter().enumerate() {
            starts.push(row);
            for (k, &a) in t.actions.iter().enumerate() {
                let slot = env.backward_slot(&t.states[k + 1], a);
                let mut e = EdgeTerm::new(row + k, row + k + 1, a, slot);
                e.weight = weight;
                edges.push(e);
                origin.push((i, k));
            }
            row += t.states.len();
        }
        Self {
            rows,
            edges,
            origin,
            starts,
        }
    }
}

/// One trajectory-balance term over rows `rows[start..start+len+1]`
/// (states `s_0..s_n`) with the given actions.
#[derive(Clone, Debug, PartialEq)]
pub struct TbTerm {
    pub start: usize,
    pub actions: Vec<usize>,
    pub bwd_slots: Vec<usize>,
    pub log_reward: f64,
    pub weight: f64,
}

fn tb_residual(heads: &HeadValues, log_z: f64, t: &TbTerm) -> Result<f64> {
    let mut sum_pf = 0.0;
    let mut sum_pb = 0.0;
    for (k, (&a, &b)) in t.actions.iter().zip(&t.bwd_slots).enumerate() {
        let pf = heads.log_pf[(t.start + k, a)];
        let pb = heads.log_pb[(t.start + k + 1, b)];
        if pf == f64::NEG_INFINITY || pb == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability(format!("trajectory edge {k}")));
        }
        sum_pf += pf;
        sum_pb += pb;
    }
    Ok(log_z + sum_pf - t.log_reward - sum_pb)
}

pub fn trajectory_balance_value(
    net: &Mlp,
    layout: HeadLayout,
    rows: &RowBatch,
    terms: &[TbTerm],
    log_z: f64,
) -> Result<f64> {
    let heads = evaluate_rows(net, layout, rows)?;
    terms.iter().try_fold(0.0, |acc, t| {
        let d = tb_residual(&heads, log_z, t)?;
        Ok(acc + t.weight * d * d)
    })
}

/// Trajectory-balance loss, network gradient and `d loss / d log Z`.
pub fn trajectory_balance_loss(
    net: &Mlp,
    layout: HeadLayout,
    rows: &RowBatch,
    terms: &[TbTerm],
    log_z: f64,
) -> Result<(f64, Gradients, f64)> {
    let (out, cache) = net.forward(rows.inputs.view())?;
    let heads = HeadValues::from_outputs(&out, layout, rows);
    let mut grad = Array2::<f64>::zeros(out.dim());
    let mut loss = 0.0;
    let mut d_log_z = 0.0;
    for t in terms {
        let delta = tb_residual(&heads, log_z, t)?;
        loss += t.weight * delta * delta;
        let g = 2.0 * t.weight * delta;
        d_log_z += g;
        for (k, (&a, &b)) in t.actions.iter().zip(&t.bwd_slots).enumerate() {
            let src = t.start + k;
            let dst = src + 1;
            {
                let mut row = grad.row_mut(src);
                let fwd = &mut row.as_slice_mut().unwrap()[layout.fwd()];
                log_softmax_grad(heads.log_pf.row(src).as_slice().unwrap(), a, g, fwd);
            }
            let mut row = grad.row_mut(dst);
            let bwd = &mut row.as_slice_mut().unwrap()[layout.bwd()];
            log_softmax_grad(heads.log_pb.row(dst).as_slice().unwrap(), b, -g, bwd);
        }
    }
    let grads = net.backward(&cache, grad.view())?;
    Ok((loss, grads, d_log_z))
}
