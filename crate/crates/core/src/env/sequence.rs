use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, State, TaskGraph};
use crate::error::{Error, Result};

/// How symbols are written out in tables and logs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alphabet {
    /// Each symbol is a `k`-bit word, printed most significant bit first.
    Bits(u32),
    /// One character per symbol.
    Letters(String),
}

impl Alphabet {
    fn for_vocab(vocab: usize) -> Self {
        match vocab {
            4 => Alphabet::Letters("ACGT".into()),
            20 => Alphabet::Letters("ACDEFGHIKLMNPQRSTVWY".into()),
            _ => Alphabet::Letters(
                "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
                    .chars()
                    .take(vocab)
                    .collect(),
            ),
        }
    }
}

/// Fixed-length left-to-right sequence generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqSpec {
    pub vocab_size: usize,
    /// Number of symbols in a complete sequence (trajectory length).
    pub length: usize,
    /// Bits per word for bit-string tasks, 0 otherwise.
    pub word_bits: u32,
}

impl SeqSpec {
    pub fn new(vocab_size: usize, length: usize) -> Result<Self> {
        let spec = Self {
            vocab_size,
            length,
            word_bits: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Bit strings of `n_bits` bits built from `k`-bit words.
    pub fn bits(n_bits: usize, k: u32) -> Result<Self> {
        if k == 0 || k > 8 || n_bits % k as usize != 0 {
            return Err(Error::Config(format!(
                "bit task needs 1 <= k <= 8 dividing n (n={n_bits}, k={k})"
            )));
        }
        let spec = Self {
            vocab_size: 1 << k,
            length: n_bits / k as usize,
            word_bits: k,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || (self.vocab_size > 62 && self.word_bits == 0) {
            return Err(Error::Config(format!(
                "vocabulary size {} out of range",
                self.vocab_size
            )));
        }
        if self.length < 1 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Alphabet {
        if self.word_bits > 0 {
            Alphabet::Bits(self.word_bits)
        } else {
            Alphabet::for_vocab(self.vocab_size)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceTask {
    spec: SeqSpec,
    alphabet: Alphabet,
}

impl SequenceTask {
    pub fn new(spec: SeqSpec) -> Self {
        let alphabet = spec.alphabet();
        Self { spec, alphabet }
    }

    pub fn spec(&self) -> &SeqSpec {
        &self.spec
    }

    /// Builds a state from a symbol slice.
    pub fn state(&self, symbols: &[u16]) -> State {
        State::new(symbols.to_vec(), symbols.len() == self.spec.length)
    }

    /// Parses a rendered sequence (e.g. `"0101"` for 2-bit words or `"ACGT"`).
    pub fn parse(&self, text: &str) -> Result<State> {
        let bad = || Error::Config(format!("cannot parse sequence {text:?}"));
        let symbols: Vec<u16> = match &self.alphabet {
            Alphabet::Bits(k) => {
                let k = *k as usize;
                if text.len() % k != 0 {
                    return Err(bad());
                }
                text.as_bytes()
                    .chunks(k)
                    .map(|w| {
                        let w = std::str::from_utf8(w).map_err(|_| bad())?;
                        u16::from_str_radix(w, 2).map_err(|_| bad())
                    })
                    .collect::<Result<_>>()?
            }
            Alphabet::Letters(letters) => text
                .chars()
                .map(|c| letters.chars().position(|l| l == c).map(|p| p as u16))
                .collect::<Option<_>>()
                .ok_or_else(bad)?,
        };
        if symbols.len() > self.spec.length {
            return Err(bad());
        }
        Ok(self.state(&symbols))
    }

    pub fn outcome_index(&self, s: &State) -> usize {
        s.cells()
            .iter()
            .fold(0, |acc, &c| acc * self.spec.vocab_size + c as usize)
    }
}

impl TaskGraph for SequenceTask {
    fn initial_state(&self) -> State {
        self.state(&[])
    }

    fn num_actions(&self) -> usize {
        self.spec.vocab_size
    }

    fn num_backward_actions(&self) -> usize {
        1
    }

    fn step(&self, s: &State, action: Action) -> Result<State> {
        if s.is_terminal() || action >= self.spec.vocab_size {
            return Err(Error::IllegalAction {
                state: self.render(s),
                action,
            });
        }
        let mut cells = s.cells().to_vec();
        cells.push(action as u16);
        Ok(self.state(&cells))
    }

    fn forward_mask(&self, s: &State) -> Vec<bool> {
        vec![!s.is_terminal(); self.spec.vocab_size]
    }

    fn backward_mask(&self, s: &State) -> Vec<bool> {
        vec![!s.cells().is_empty()]
    }

    fn backward_slot(&self, _child: &State, _action: Action) -> usize {
        0
    }

    fn parents(&self, s: &State) -> Result<Vec<(State, Action)>> {
        match s.cells().split_last() {
            None => Err(Error::InitialState),
            Some((&last, prefix)) => Ok(vec![(self.state(prefix), last as usize)]),
        }
    }

    fn encoding_dim(&self) -> usize {
        self.spec.length * (self.spec.vocab_size + 1)
    }

    fn encode_into(&self, s: &State, out: &mut [f64]) {
        out.fill(0.0);
        let width = self.spec.vocab_size + 1;
        for pos in 0..self.spec.length {
            let sym = s
                .cells()
                .get(pos)
                .map_or(self.spec.vocab_size, |&c| c as usize);
            out[pos * width + sym] = 1.0;
        }
    }

    fn max_trajectory_len(&self) -> usize {
        self.spec.length
    }

    fn num_terminals(&self) -> f64 {
        (self.spec.vocab_size as f64).powi(self.spec.length as i32)
    }

    fn enumerate_terminals(&self, cap: usize) -> Option<Vec<State>> {
        if self.num_terminals() > cap as f64 {
            return None;
        }
        let n = self.num_terminals() as usize;
        Some(
            (0..n)
                .map(|mut idx| {
                    let mut cells = vec![0u16; self.spec.length];
                    for pos in (0..self.spec.length).rev() {
                        cells[pos] = (idx % self.spec.vocab_size) as u16;
                        idx /= self.spec.vocab_size;
                    }
                    self.state(&cells)
                })
                .collect(),
        )
    }

    fn random_terminal(&self, rng: &mut dyn rand::RngCore) -> State {
        let cells: Vec<u16> = (0..self.spec.length)
            .map(|_| rng.gen_range(0..self.spec.vocab_size) as u16)
            .collect();
        self.state(&cells)
    }

    fn outcome_ranges(&self, s: &State) -> Vec<std::ops::Range<u16>> {
        (0..self.spec.length)
            .map(|pos| match s.cells().get(pos) {
                Some(&c) => c..c + 1,
                None => 0..self.spec.vocab_size as u16,
            })
            .collect()
    }

    fn mutate_terminal(&self, x: &State, rng: &mut dyn rand::RngCore) -> State {
        let mut cells = x.cells().to_vec();
        let pos = rng.gen_range(0..cells.len());
        cells[pos] = rng.gen_range(0..self.spec.vocab_size) as u16;
        self.state(&cells)
    }

    fn render(&self, s: &State) -> String {
        match &self.alphabet {
            Alphabet::Bits(k) => s
                .cells()
                .iter()
                .map(|&c| format!("{:0width$b}", c, width = *k as usize))
                .collect(),
            Alphabet::Letters(letters) => s
                .cells()
                .iter()
                .map(|&c| letters.chars().nth(c as usize).unwrap_or('?'))
                .collect(),
        }
    }
}
