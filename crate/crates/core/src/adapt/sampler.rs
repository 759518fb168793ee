use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{draw_action, ExplorationConfig, NetSpec};
use crate::nn::{log_softmax_grad, masked_log_softmax, Adam, Gradients, Mlp, NetCheckpoint};

/// Factorization of `Q(y|s',s)` over outcome components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// One categorical over the whole outcome space.
    Flat,
    /// One categorical per component, conditioned on the components so far.
    Autoregressive,
}

/// Outcome posterior network `Q(y|s',s)`, supported on outcomes reachable from `s'`.
#[derive(Clone, Debug)]
pub struct OutcomeSamplerNet {
    kind: SamplerKind,
    pub(crate) net: Mlp,
    pub(crate) adam: Adam,
    arity: Vec<usize>,
}

/// Network rows of a batch of `log Q` evaluations.
#[derive(Clone, Debug)]
pub struct QRows {
    pub inputs: Array2<f64>,
    pub masks: Vec<Vec<bool>>,
    pub chosen: Vec<usize>,
    /// Example index of every row.
    pub example: Vec<usize>,
    pub num_examples: usize,
}

impl OutcomeSamplerNet {
    /// Component arities plus network input and output widths.
    fn dims(env: &dyn TaskGraph, kind: SamplerKind) -> Result<(Vec<usize>, usize, usize)> {
        let arity: Vec<usize> = env
            .outcome_ranges(&env.initial_state())
            .iter()
            .map(|r| r.end as usize)
            .collect();
        let d = env.encoding_dim();
        match kind {
            SamplerKind::Flat => {
                match arity.iter().try_fold(1usize, |acc, &a| acc.checked_mul(a)) {
                    Some(n) if n <= 1 << 16 => Ok((arity, 2 * d, n)),
                    _ => Err(Error::Config(
                        "outcome space too large for a flat sampler".into(),
                    )),
                }
            }
            SamplerKind::Autoregressive => {
                let width = *arity.iter().max().unwrap_or(&1);
                let input = 2 * d + arity.len() * (width + 1);
                Ok((arity, input, width))
            }
        }
    }

    pub fn new(
        env: &dyn TaskGraph,
        kind: SamplerKind,
        spec: &NetSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (arity, input, output) = Self::dims(env, kind)?;
        let (net, adam) = spec.build(input, output, rng);
        Ok(Self {
            kind,
            net,
            adam,
            arity,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint::capture(&self.net, Some(&self.adam))
    }

    pub fn restore(env: &dyn TaskGraph, kind: SamplerKind, ckpt: NetCheckpoint) -> Result<Self> {
        let (net, adam) = ckpt.restore()?;
        let (arity, input, output) = Self::dims(env, kind)?;
        if net.input_dim() != input || net.output_dim() != output {
            return Err(Error::Checkpoint(
                "sampler network does not fit the task".into(),
            ));
        }
        let adam = adam.unwrap_or_else(|| Adam::for_net(Default::default(), &net));
        Ok(Self {
            kind,
            net,
            adam,
            arity,
        })
    }

    fn width(&self) -> usize {
        self.net.output_dim()
    }

    fn flat_index(&self, cells: &[u16]) -> usize {
        cells
            .iter()
            .zip(&self.arity)
            .fold(0, |acc, (&c, &a)| acc * a + c as usize)
    }

    fn flat_cells(&self, mut index: usize) -> Vec<u16> {
        let mut cells = vec![0u16; self.arity.len()];
        for (c, &a) in cells.iter_mut().zip(&self.arity).rev() {
            *c = (index % a) as u16;
            index /= a;
        }
        cells
    }

    fn flat_mask(&self, ranges: &[std::ops::Range<u16>]) -> Vec<bool> {
        (0..self.width())
            .map(|i| {
                self.flat_cells(i)
                    .iter()
                    .zip(ranges)
                    .all(|(c, r)| r.contains(c))
            })
            .collect()
    }

    fn write_row(
        &self,
        env: &dyn TaskGraph,
        s: &State,
        next: &State,
        prefix: Option<&[u16]>,
        row: &mut [f64],
    ) {
        let d = env.encoding_dim();
        env.encode_into(s, &mut row[..d]);
        env.encode_into(next, &mut row[d..2 * d]);
        if let Some(prefix) = prefix {
            let slot = self.width() + 1;
            let tail = &mut row[2 * d..];
            tail.fill(0.0);
            for j in 0..self.arity.len() {
                let v = prefix.get(j).map_or(self.width(), |&c| c as usize);
                tail[j * slot + v] = 1.0;
            }
        }
    }

    /// Rows computing `log Q(y_i | s'_i, s_i)` for each `(s, s', y)`.
    pub fn rows(
        &self,
        env: &dyn TaskGraph,
        examples: &[(&State, &State, &State)],
    ) -> Result<QRows> {
        let mut specs: Vec<(usize, Option<usize>, Vec<bool>, usize)> = Vec::new();
        for (i, (_, next, y)) in examples.iter().enumerate() {
            if !env.reaches(next, y) {
                return Err(Error::ZeroProbability(format!(
                    "outcome {} is unreachable from {}",
                    env.render(y),
                    env.render(next)
                )));
            }
            let ranges = env.outcome_ranges(next);
            match self.kind {
                SamplerKind::Flat => {
                    specs.push((i, None, self.flat_mask(&ranges), self.flat_index(y.cells())))
                }
                SamplerKind::Autoregressive => {
                    for (j, r) in ranges.iter().enumerate() {
                        if r.len() > 1 {
                            let mask = (0..self.width()).map(|v| r.contains(&(v as u16))).collect();
                            specs.push((i, Some(j), mask, y.cells()[j] as usize));
                        }
                    }
                }
            }
        }
        let mut inputs = Array2::zeros((specs.len(), self.net.input_dim()));
        let mut masks = Vec::with_capacity(specs.len());
        let mut chosen = Vec::with_capacity(specs.len());
        let mut example = Vec::with_capacity(specs.len());
        for (r, (i, comp, mask, c)) in specs.into_iter().enumerate() {
            let (s, next, y) = examples[i];
            let prefix = comp.map(|j| &y.cells()[..j]);
            self.write_row(
                env,
                s,
                next,
                prefix,
                inputs.row_mut(r).as_slice_mut().unwrap(),
            );
            masks.push(mask);
            chosen.push(c);
            example.push(i);
        }
        Ok(QRows {
            inputs,
            masks,
            chosen,
            example,
            num_examples: examples.len(),
        })
    }

    fn row_log_probs(out: &Array2<f64>, rows: &QRows) -> Array2<f64> {
        let mut lp = Array2::zeros(out.dim());
        for r in 0..out.nrows() {
            masked_log_softmax(
                out.row(r).as_slice().unwrap(),
                &rows.masks[r],
                lp.row_mut(r).as_slice_mut().unwrap(),
            );
        }
        lp
    }

    pub fn log_q_rows(net: &Mlp, rows: &QRows) -> Result<Vec<f64>> {
        let mut logq = vec![0.0; rows.num_examples];
        if rows.chosen.is_empty() {
            return Ok(logq);
        }
        let lp = Self::row_log_probs(&net.predict(rows.inputs.view())?, rows);
        for (r, (&i, &c)) in rows.example.iter().zip(&rows.chosen).enumerate() {
            logq[i] += lp[(r, c)];
        }
        Ok(logq)
    }

    /// `log Q` per example and the parameter gradient of `sum_i scale_i * log Q_i`,
    /// where `scale` is produced from the log-probabilities.
    pub fn log_q_and_grad(
        net: &Mlp,
        rows: &QRows,
        scale: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Gradients)> {
        if rows.chosen.is_empty() {
            let logq = vec![0.0; rows.num_examples];
            scale(&logq);
            return Ok((logq, Gradients::zeros_like(net)));
        }
        let (out, cache) = net.forward(rows.inputs.view())?;
        let lp = Self::row_log_probs(&out, rows);
        let mut logq = vec![0.0; rows.num_examples];
        for (r, (&i, &c)) in rows.example.iter().zip(&rows.chosen).enumerate() {
            logq[i] += lp[(r, c)];
        }
        let scales = scale(&logq);
        let mut grad = Array2::zeros(out.dim());
        for r in 0..out.nrows() {
            log_softmax_grad(
                lp.row(r).as_slice().unwrap(),
                rows.chosen[r],
                scales[rows.example[r]],
                grad.row_mut(r).as_slice_mut().unwrap(),
            );
        }
        Ok((logq, net.backward(&cache, grad.view())?))
    }

    pub fn log_q(
        &self,
        env: &dyn TaskGraph,
        examples: &[(&State, &State, &State)],
    ) -> Result<Vec<f64>> {
        Self::log_q_rows(&self.net, &self.rows(env, examples)?)
    }

    /// Draws one outcome per `(s, s')` from the tempered, epsilon-mixed sampler.
    pub fn sample(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
        explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<State>> {
        let ranges: Vec<Vec<std::ops::Range<u16>>> =
            pairs.iter().map(|(_, n)| env.outcome_ranges(n)).collect();
        match self.kind {
            SamplerKind::Flat => {
                let mut inputs = Array2::zeros((pairs.len(), self.net.input_dim()));
                for (i, (s, n)) in pairs.iter().enumerate() {
                    self.write_row(env, s, n, None, inputs.row_mut(i).as_slice_mut().unwrap());
                }
                let out = self.net.predict(inputs.view())?;
                let mut lp = vec![0.0; self.width()];
                ranges
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let mask = self.flat_mask(r);
                        masked_log_softmax(out.row(i).as_slice().unwrap(), &mask, &mut lp);
                        let (idx, _) = draw_action(&lp, &mask, explore, rng)?;
                        Ok(State::new(self.flat_cells(idx), true))
                    })
                    .collect()
            }
            SamplerKind::Autoregressive => {
                let mut cells: Vec<Vec<u16>> = ranges
                    .iter()
                    .map(|r| r.iter().map(|x| x.start).collect())
                    .collect();
                let mut lp = vec![0.0; self.width()];
                for j in 0..self.arity.len() {
                    let free: Vec<usize> = (0..pairs.len())
                        .filter(|&i| ranges[i][j].len() > 1)
                        .collect();
                    if free.is_empty() {
                        continue;
                    }
                    let mut inputs = Array2::zeros((free.len(), self.net.input_dim()));
                    for (r, &i) in free.iter().enumerate() {
                        let (s, n) = pairs[i];
                        self.write_row(
                            env,
                            s,
                            n,
                            Some(&cells[i][..j]),
                            inputs.row_mut(r).as_slice_mut().unwrap(),
                        );
                    }
                    let out = self.net.predict(inputs.view())?;
                    for (r, &i) in free.iter().enumerate() {
                        let mask: Vec<bool> = (0..self.width())
                            .map(|v| ranges[i][j].contains(&(v as u16)))
                            .collect();
                        masked_log_softmax(out.row(r).as_slice().unwrap(), &mask, &mut lp);
                        cells[i][j] = draw_action(&lp, &mask, explore, rng)?.0 as u16;
                    }
                }
                Ok(cells.into_iter().map(|c| State::new(c, true)).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridSpec, GridWorld, SeqSpec, SequenceTask};
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normalization(env: &dyn TaskGraph, kind: SamplerKind, s: &State, next: &State) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = OutcomeSamplerNet::new(
            env,
            kind,
            &NetSpec::new(vec![16], Activation::LeakyRelu, 1e-3),
            &mut rng,
        )
        .unwrap();
        let ys: Vec<State> = env
            .enumerate_terminals(1 << 12)
            .unwrap()
            .into_iter()
            .filter(|y| env.reaches(next, y))
            .collect();
        let examples: Vec<_> = ys.iter().map(|y| (s, next, y)).collect();
        let total: f64 = q
            .log_q(env, &examples)
            .unwrap()
            .iter()
            .map(|v| v.exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        for y in q
            .sample(
                env,
                &[(s, next)],
                &ExplorationConfig::new(0.05, 2.0).unwrap(),
                &mut rng,
            )
            .unwrap()
        {
            assert!(env.reaches(next, &y));
        }
    }

    #[test]
    fn flat_grid_is_normalized_on_reachable_cells() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        normalization(
            &env,
            SamplerKind::Flat,
            &env.cell(&[1, 0], false),
            &env.cell(&[1, 1], false),
        );
        normalization(
            &env,
            SamplerKind::Autoregressive,
            &env.cell(&[1, 0], false),
            &env.cell(&[1, 1], false),
        );
    }

    #[test]
    fn autoregressive_sequence_is_normalized() {
        let env = SequenceTask::new(SeqSpec::new(3, 4).unwrap());
        normalization(
            &env,
            SamplerKind::Autoregressive,
            &env.state(&[2]),
            &env.state(&[2, 0]),
        );
        normalization(
            &env,
            SamplerKind::Autoregressive,
            &env.initial_state(),
            &env.state(&[1]),
        );
    }

    #[test]
    fn terminal_next_state_is_a_point_mass() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = OutcomeSamplerNet::new(
            &env,
            SamplerKind::Flat,
            &NetSpec::new(vec![4], Activation::LeakyRelu, 1e-3),
            &mut rng,
        )
        .unwrap();
        let s = env.cell(&[2, 1], false);
        let x = env.cell(&[2, 1], true);
        assert_eq!(q.log_q(&env, &[(&s, &x, &x)]).unwrap(), vec![0.0]);
        assert!(q
            .log_q(&env, &[(&s, &x, &env.cell(&[3, 3], true))])
            .is_err());
    }

    #[test]
    fn flat_sampler_rejects_huge_spaces() {
        let env = SequenceTask::new(SeqSpec::new(4, 10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(OutcomeSamplerNet::new(
            &env,
            SamplerKind::Flat,
            &NetSpec::new(vec![4], Activation::LeakyRelu, 1e-3),
            &mut rng
        )
        .is_err());
    }
}
