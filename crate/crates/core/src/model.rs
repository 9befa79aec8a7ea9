//! Masked sequence models with exact per-position conditional logits.
//!
//! Two architectures are provided:
//!
//! * [`PwmModel`]: a context-free position weight matrix. Conditional logits at
//!   a position never depend on the rest of the sequence, so any jointly
//!   masked likelihood factorizes exactly.
//! * [`PottsModel`]: fields plus sparse pairwise couplings. Logits at position
//!   `i` collect couplings to every *unmasked* coupled neighbor, so joint
//!   masking genuinely discards context.
//!
//! Both expose their parameters as one flat vector so the trainer can apply
//! SGD and tests can perturb parameters for finite differences.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::seqdata::{Dataset, PositionMask, Token};

/// Counts forward passes. Shared by reference between concurrent scorers.
#[derive(Debug, Default)]
pub struct ForwardCounter(AtomicU64);

impl ForwardCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(n: u64) -> Self {
        ForwardCounter(AtomicU64::new(n))
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// A sequence with some positions replaced by the mask token.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedInput {
    tokens: Vec<Token>,
    mask: PositionMask,
}

impl MaskedInput {
    pub fn new(sequence: &[Token], mask: &PositionMask, mask_token: Token) -> Self {
        let mut tokens = sequence.to_vec();
        for p in mask.iter() {
            tokens[p] = mask_token;
        }
        MaskedInput {
            tokens,
            mask: mask.clone(),
        }
    }

    /// Masks a single position.
    pub fn single(sequence: &[Token], position: usize, mask_token: Token) -> Self {
        let mut mask = PositionMask::empty(sequence.len());
        mask.insert(position);
        Self::new(sequence, &mask, mask_token)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn mask(&self) -> &PositionMask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.mask.contains(pos)
    }
}

/// `L × |A|` matrix of conditional logits, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    width: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn zeros(length: usize, width: usize) -> Self {
        Logits {
            width,
            values: vec![0.0; length * width],
        }
    }

    pub fn length(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.width..(pos + 1) * self.width]
    }

    fn row_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.values[pos * self.width..(pos + 1) * self.width]
    }

    /// `log softmax(row)[token]`.
    pub fn log_prob(&self, pos: usize, token: Token) -> f64 {
        let row = self.row(pos);
        row[token as usize] - log_sum_exp(row)
    }

    pub fn log_softmax(&self, pos: usize) -> Vec<f64> {
        let row = self.row(pos);
        let lse = log_sum_exp(row);
        row.iter().map(|x| x - lse).collect()
    }
}

/// Max-shifted `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Writes `softmax(row)` into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Behaviour shared by the concrete architectures.
pub trait MaskedModel {
    fn length(&self) -> usize;
    fn alphabet_size(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Conditional logits for one position of `input`.
    fn logits_row(&self, input: &MaskedInput, pos: usize, out: &mut [f64]);

    /// Adds `residual[a]` (the derivative with respect to `logits[pos][a]`)
    /// into `grad`, routed to every parameter that produced row `pos`.
    fn backprop_row(&self, input: &MaskedInput, pos: usize, residual: &[f64], grad: &mut [f64]);

    fn logits_into(&self, input: &MaskedInput, out: &mut Logits) {
        for pos in 0..self.length() {
            self.logits_row(input, pos, out.row_mut(pos));
        }
    }
}

/// Context-free position weight matrix, `theta: L × |A|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PwmModel {
    length: usize,
    alphabet_size: usize,
    theta: Vec<f64>,
}

impl PwmModel {
    /// Uniform model (`theta = 0`).
    pub fn uniform(length: usize, alphabet_size: usize) -> Self {
        PwmModel {
            length,
            alphabet_size,
            theta: vec![0.0; length * alphabet_size],
        }
    }

    pub fn from_theta(length: usize, alphabet_size: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != length * alphabet_size {
            return Err(Error::input("theta has the wrong shape"));
        }
        Ok(PwmModel {
            length,
            alphabet_size,
            theta,
        })
    }

    /// Log-frequency fit with additive pseudocounts:
    /// `theta[i][a] = ln((count[i][a] + α) / (n + α|A|))`.
    pub fn fit_frequencies(dataset: &Dataset, pseudocount: f64) -> Result<Self> {
        if !(pseudocount > 0.0) {
            return Err(Error::config("pseudocount must be positive"));
        }
        let (l, a) = (dataset.length(), dataset.alphabet().size());
        let mut counts = vec![0.0; l * a];
        for s in dataset.sequences() {
            for (i, &t) in s.tokens.iter().enumerate() {
                counts[i * a + t as usize] += 1.0;
            }
        }
        let total = dataset.len() as f64 + pseudocount * a as f64;
        let theta = counts
            .into_iter()
            .map(|c| ((c + pseudocount) / total).ln())
            .collect();
        Self::from_theta(l, a, theta)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

impl MaskedModel for PwmModel {
    fn length(&self) -> usize {
        self.length
    }
    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logits_row(&self, _input: &MaskedInput, pos: usize, out: &mut [f64]) {
        let a = self.alphabet_size;
        out.copy_from_slice(&self.theta[pos * a..(pos + 1) * a]);
    }

    fn backprop_row(&self, _input: &MaskedInput, pos: usize, residual: &[f64], grad: &mut [f64]) {
        let a = self.alphabet_size;
        for (g, r) in grad[pos * a..(pos + 1) * a].iter_mut().zip(residual) {
            *g += r;
        }
    }
}

/// Which position pairs a Potts model couples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingGraph {
    /// All pairs `i < j` with `j − i ≤ width`.
    Window(usize),
    Dense,
    Edges(Vec<(usize, usize)>),
}

impl CouplingGraph {
    pub fn edges(&self, length: usize) -> Vec<(usize, usize)> {
        match self {
            CouplingGraph::Window(w) => (0..length)
                .flat_map(|i| (i + 1..length.min(i + w + 1)).map(move |j| (i, j)))
                .collect(),
            CouplingGraph::Dense => (0..length)
                .flat_map(|i| (i + 1..length).map(move |j| (i, j)))
                .collect(),
            CouplingGraph::Edges(e) => e.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Neighbor {
    other: usize,
    /// Offset of the edge's `|A| × |A|` table in the parameter vector.
    offset: usize,
    /// Whether this position is the edge's first index (table rows).
    first: bool,
}

/// Potts model: fields `h: L × |A|` and symmetric couplings
/// `J[i][j][a][b] = J[j][i][b][a]`, stored once per edge `i < j` as an
/// `|A| × |A|` table indexed `[a at i][b at j]`.
///
/// `logits[i][a] = h[i][a] + Σ_{j coupled to i, j unmasked} J[i][j][a][y_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PottsModel {
    length: usize,
    alphabet_size: usize,
    edges: Vec<(usize, usize)>,
    params: Vec<f64>,
    neighbors: Vec<Vec<Neighbor>>,
}

impl PottsModel {
    /// Zero fields and zero couplings on the given graph.
    pub fn zeros(length: usize, alphabet_size: usize, graph: &CouplingGraph) -> Result<Self> {
        let mut edges = graph.edges(length);
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.0 == e.1 || e.1 >= length {
                return Err(Error::input(format!("invalid coupling edge {e:?}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let field = length * alphabet_size;
        let table = alphabet_size * alphabet_size;
        let mut neighbors = vec![Vec::new(); length];
        for (k, &(i, j)) in edges.iter().enumerate() {
            let offset = field + k * table;
            neighbors[i].push(Neighbor {
                other: j,
                offset,
                first: true,
            });
            neighbors[j].push(Neighbor {
                other: i,
                offset,
                first: false,
            });
        }
        Ok(PottsModel {
            length,
            alphabet_size,
            params: vec![0.0; field + edges.len() * table],
            edges,
            neighbors,
        })
    }

    /// Zero fields, couplings drawn from `N(0, scale²)`.
    pub fn random(
        length: usize,
        alphabet_size: usize,
        graph: &CouplingGraph,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut m = Self::zeros(length, alphabet_size, graph)?;
        if scale > 0.0 {
            let normal = Normal::new(0.0, scale).map_err(|e| Error::config(e.to_string()))?;
            let field = length * alphabet_size;
            for p in &mut m.params[field..] {
                *p = normal.sample(rng);
            }
        }
        Ok(m)
    }

    pub fn from_parts(
        length: usize,
        alphabet_size: usize,
        edges: Vec<(usize, usize)>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(length, alphabet_size, &CouplingGraph::Edges(edges))?;
        if params.len() != m.params.len() {
            return Err(Error::input("Potts parameter vector has the wrong length"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn fields(&self) -> &[f64] {
        &self.params[..self.length * self.alphabet_size]
    }

    pub fn fields_mut(&mut self) -> &mut [f64] {
        let n = self.length * self.alphabet_size;
        &mut self.params[..n]
    }

    pub fn couplings(&self) -> &[f64] {
        &self.params[self.length * self.alphabet_size..]
    }

    /// `J[i][j][a][b]` for any ordered pair; zero when uncoupled.
    pub fn coupling(&self, i: usize, j: usize, a: Token, b: Token) -> f64 {
        let w = self.alphabet_size;
        self.neighbors[i]
            .iter()
            .find(|n| n.other == j)
            .map(|n| {
                if n.first {
                    self.params[n.offset + a as usize * w + b as usize]
                } else {
                    self.params[n.offset + b as usize * w + a as usize]
                }
            })
            .unwrap_or(0.0)
    }

    pub fn field(&self, i: usize, a: Token) -> f64 {
        self.params[i * self.alphabet_size + a as usize]
    }

    /// Pairs `(i, j)` with `i < j` that are coupled.
    pub fn neighbors_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().map(|n| n.other)
    }
}

impl MaskedModel for PottsModel {
    fn length(&self) -> usize {
        self.length
    }
    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits_row(&self, input: &MaskedInput, pos: usize, out: &mut [f64]) {
        let w = self.alphabet_size;
        out.copy_from_slice(&self.params[pos * w..(pos + 1) * w]);
        let tokens = input.tokens();
        for n in &self.neighbors[pos] {
            let b = tokens[n.other] as usize;
            if b >= w {
                continue; // masked neighbour contributes nothing
            }
            if n.first {
                for (a, o) in out.iter_mut().enumerate() {
                    *o += self.params[n.offset + a * w + b];
                }
            } else {
                let row = &self.params[n.offset + b * w..n.offset + (b + 1) * w];
                for (o, j) in out.iter_mut().zip(row) {
                    *o += j;
                }
            }
        }
    }

    fn backprop_row(&self, input: &MaskedInput, pos: usize, residual: &[f64], grad: &mut [f64]) {
        let w = self.alphabet_size;
        for (g, r) in grad[pos * w..(pos + 1) * w].iter_mut().zip(residual) {
            *g += r;
        }
        let tokens = input.tokens();
        for n in &self.neighbors[pos] {
            let b = tokens[n.other] as usize;
            if b >= w {
                continue;
            }
            if n.first {
                for (a, r) in residual.iter().enumerate() {
                    grad[n.offset + a * w + b] += r;
                }
            } else {
                for (g, r) in grad[n.offset + b * w..n.offset + (b + 1) * w]
                    .iter_mut()
                    .zip(residual)
                {
                    *g += r;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Pwm(PwmModel),
    Potts(PottsModel),
}

/// A masked model plus a frozen flag. Frozen models reject parameter updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    arch: Architecture,
    frozen: bool,
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match &$self.arch {
            Architecture::Pwm($m) => $e,
            Architecture::Potts($m) => $e,
        }
    };
}

impl From<PwmModel> for SequenceModel {
    fn from(m: PwmModel) -> Self {
        SequenceModel {
            arch: Architecture::Pwm(m),
            frozen: false,
        }
    }
}

impl From<PottsModel> for SequenceModel {
    fn from(m: PottsModel) -> Self {
        SequenceModel {
            arch: Architecture::Potts(m),
            frozen: false,
        }
    }
}

impl SequenceModel {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> &'static str {
        match self.arch {
            Architecture::Pwm(_) => "pwm",
            Architecture::Potts(_) => "potts",
        }
    }

    pub fn length(&self) -> usize {
        dispatch!(self, m => m.length())
    }

    pub fn alphabet_size(&self) -> usize {
        dispatch!(self, m => m.alphabet_size())
    }

    pub fn mask_token(&self) -> Token {
        self.alphabet_size() as Token
    }

    pub fn params(&self) -> &[f64] {
        dispatch!(self, m => m.params())
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Read-only deep copy, used as the reference policy.
    pub fn clone_frozen(&self) -> SequenceModel {
        SequenceModel {
            arch: self.arch.clone(),
            frozen: true,
        }
    }

    /// Trainable deep copy.
    pub fn clone_trainable(&self) -> SequenceModel {
        SequenceModel {
            arch: self.arch.clone(),
            frozen: false,
        }
    }

    pub fn params_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::Contract("attempt to mutate a frozen model".into()));
        }
        Ok(match &mut self.arch {
            Architecture::Pwm(m) => m.params_mut(),
            Architecture::Potts(m) => m.params_mut(),
        })
    }

    /// `params -= lr · grad`.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        let params = self.params_mut()?;
        if grad.len() != params.len() {
            return Err(Error::Internal("gradient has the wrong length".into()));
        }
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(())
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let params = self.params_mut()?;
        if values.len() != params.len() {
            return Err(Error::Internal(
                "parameter vector has the wrong length".into(),
            ));
        }
        params.copy_from_slice(values);
        Ok(())
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.param_count()]
    }

    /// One forward pass: logits for every position. Counts one pass.
    pub fn forward(&self, input: &MaskedInput, counter: &ForwardCounter) -> Logits {
        let mut out = Logits::zeros(self.length(), self.alphabet_size());
        self.forward_into(input, counter, &mut out);
        out
    }

    pub fn forward_into(&self, input: &MaskedInput, counter: &ForwardCounter, out: &mut Logits) {
        counter.add(1);
        dispatch!(self, m => m.logits_into(input, out))
    }

    /// Pseudo-log-likelihood `Σ_i log p(y_i | y_{−i})`; one forward pass per position.
    pub fn pll(&self, tokens: &[Token], counter: &ForwardCounter) -> f64 {
        self.pll_terms(tokens, counter).into_iter().sum()
    }

    /// Per-position PLL terms.
    pub fn pll_terms(&self, tokens: &[Token], counter: &ForwardCounter) -> Vec<f64> {
        let mut logits = Logits::zeros(self.length(), self.alphabet_size());
        let mut input = MaskedInput::new(tokens, &PositionMask::empty(tokens.len()), 0);
        let mask_token = self.mask_token();
        (0..tokens.len())
            .map(|i| {
                input.tokens[i] = mask_token;
                input.mask.insert(i);
                self.forward_into(&input, counter, &mut logits);
                let lp = logits.log_prob(i, tokens[i]);
                input.tokens[i] = tokens[i];
                input.mask = PositionMask::empty(tokens.len());
                lp
            })
            .collect()
    }

    /// Adds `weight · ∂/∂θ log softmax(logits[position])[token]` to `grad`.
    ///
    /// `logits` must come from a forward pass on `input`, and `position` must be masked.
    pub fn grad_log_softmax_accumulate(
        &self,
        input: &MaskedInput,
        logits: &Logits,
        position: usize,
        token: Token,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if !input.is_masked(position) {
            return Err(Error::Contract(format!(
                "gradient requested for unmasked position {position}"
            )));
        }
        let mut residual = vec![0.0; self.alphabet_size()];
        softmax_into(logits.row(position), &mut residual);
        for r in residual.iter_mut() {
            *r *= -weight;
        }
        residual[token as usize] += weight;
        dispatch!(self, m => m.backprop_row(input, position, &residual, grad));
        Ok(())
    }

    /// Routes a per-row logit derivative into `grad`.
    pub fn backprop_row(
        &self,
        input: &MaskedInput,
        position: usize,
        residual: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.param_count() || residual.len() != self.alphabet_size() {
            return Err(Error::Internal(
                "gradient buffer has the wrong shape".into(),
            ));
        }
        dispatch!(self, m => m.backprop_row(input, position, residual, grad));
        Ok(())
    }

    /// Adds `weight · ∂/∂θ PLL(tokens)` to `grad`, recomputing each masked row.
    /// Does not count forward passes; pair it with a counted [`Self::pll`].
    pub fn accumulate_pll_grad(&self, tokens: &[Token], weight: f64, grad: &mut [f64]) {
        let a = self.alphabet_size();
        let mut row = vec![0.0; a];
        let mut input = MaskedInput::new(tokens, &PositionMask::empty(tokens.len()), 0);
        let mask_token = self.mask_token();
        for (i, &t) in tokens.iter().enumerate() {
            input.tokens[i] = mask_token;
            dispatch!(self, m => m.logits_row(&input, i, &mut row));
            let logits_row = row.clone();
            softmax_into(&logits_row, &mut row);
            for r in row.iter_mut() {
                *r *= -weight;
            }
            row[t as usize] += weight;
            dispatch!(self, m => m.backprop_row(&input, i, &row, grad));
            input.tokens[i] = t;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&Checkpoint::from(self))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SequenceModel> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        ck.try_into()
    }
}

pub const CHECKPOINT_FORMAT: &str = "gdpo-model/1";

/// Portable model container.
///
/// Header `{format, kind, length, alphabet_size}` followed by named parameter
/// tables in row-major order: `theta [L, A]` for PWM; `h [L, A]` and
/// `J [E, A, A]` (with the edge list) for Potts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub length: usize,
    pub alphabet_size: usize,
    #[serde(default)]
    pub frozen: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<(usize, usize)>,
    pub tables: Vec<ParamTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&SequenceModel> for Checkpoint {
    fn from(m: &SequenceModel) -> Self {
        let (l, a) = (m.length(), m.alphabet_size());
        let (edges, tables) = match &m.arch {
            Architecture::Pwm(p) => (
                Vec::new(),
                vec![ParamTable {
                    name: "theta".into(),
                    shape: vec![l, a],
                    values: p.theta.clone(),
                }],
            ),
            Architecture::Potts(p) => (
                p.edges.clone(),
                vec![
                    ParamTable {
                        name: "h".into(),
                        shape: vec![l, a],
                        values: p.fields().to_vec(),
                    },
                    ParamTable {
                        name: "J".into(),
                        shape: vec![p.edges.len(), a, a],
                        values: p.couplings().to_vec(),
                    },
                ],
            ),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            kind: m.kind().into(),
            length: l,
            alphabet_size: a,
            frozen: m.frozen,
            edges,
            tables,
        }
    }
}

impl TryFrom<Checkpoint> for SequenceModel {
    type Error = Error;
    fn try_from(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::input(format!(
                "unsupported checkpoint format `{}`",
                ck.format
            )));
        }
        let table = |name: &str| -> Result<Vec<f64>> {
            ck.tables
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.values.clone())
                .ok_or_else(|| Error::input(format!("checkpoint lacks table `{name}`")))
        };
        let arch = match ck.kind.as_str() {
            "pwm" => Architecture::Pwm(PwmModel::from_theta(
                ck.length,
                ck.alphabet_size,
                table("theta")?,
            )?),
            "potts" => {
                let mut params = table("h")?;
                params.extend(table("J")?);
                Architecture::Potts(PottsModel::from_parts(
                    ck.length,
                    ck.alphabet_size,
                    ck.edges,
                    params,
                )?)
            }
            other => return Err(Error::input(format!("unknown model kind `{other}`"))),
        };
        if arch_params(&arch).iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "checkpoint holds non-finite parameters".into(),
            ));
        }
        Ok(SequenceModel {
            arch,
            frozen: ck.frozen,
        })
    }
}

fn arch_params(a: &Architecture) -> &[f64] {
    match a {
        Architecture::Pwm(m) => m.params(),
        Architecture::Potts(m) => m.params(),
    }
}

/// Random small model for tests and benchmarks.
pub fn random_model(
    kind: &str,
    length: usize,
    alphabet_size: usize,
    scale: f64,
    rng: &mut Rng,
) -> SequenceModel {
    match kind {
        "pwm" => {
            let theta = (0..length * alphabet_size)
                .map(|_| rng.random_range(-scale..=scale))
                .collect();
            PwmModel::from_theta(length, alphabet_size, theta)
                .expect("shape matches")
                .into()
        }
        _ => {
            let mut m =
                PottsModel::random(length, alphabet_size, &CouplingGraph::Dense, scale, rng)
                    .expect("dense graph is valid");
            for h in m.fields_mut() {
                *h = rng.random_range(-scale..=scale);
            }
            m.into()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn toks(s: &[u8]) -> Vec<Token> {
        s.to_vec()
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut rng = stream(1, "t");
        let m = random_model("potts", 6, 4, 3.0, &mut rng);
        let input = MaskedInput::new(
            &toks(&[0, 1, 2, 3, 0, 1]),
            &PositionMask::from_positions(6, [2]).unwrap(),
            4,
        );
        let logits = m.forward(&input, &ForwardCounter::new());
        for i in 0..6 {
            let s: f64 = logits.log_softmax(i).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // stabilized against overflow
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn pwm_is_context_free() {
        let mut rng = stream(2, "t");
        let m = random_model("pwm", 5, 3, 1.0, &mut rng);
        let c = ForwardCounter::new();
        let seq = toks(&[0, 1, 2, 0, 1]);
        let a = m.forward(
            &MaskedInput::new(&seq, &PositionMask::from_positions(5, [0]).unwrap(), 3),
            &c,
        );
        let b = m.forward(
            &MaskedInput::new(
                &seq,
                &PositionMask::from_positions(5, [1, 2, 4]).unwrap(),
                3,
            ),
            &c,
        );
        assert_eq!(a, b);
        assert_eq!(c.get(), 2);
    }

    #[test]
    fn potts_without_couplings_equals_pwm() {
        let mut rng = stream(3, "t");
        let mut potts = PottsModel::zeros(4, 3, &CouplingGraph::Dense).unwrap();
        for h in potts.fields_mut() {
            *h = rng.random_range(-1.0..1.0);
        }
        let pwm = PwmModel::from_theta(4, 3, potts.fields().to_vec()).unwrap();
        let (potts, pwm): (SequenceModel, SequenceModel) = (potts.into(), pwm.into());
        let input = MaskedInput::new(
            &toks(&[0, 2, 1, 1]),
            &PositionMask::from_positions(4, [1]).unwrap(),
            3,
        );
        let c = ForwardCounter::new();
        assert_eq!(potts.forward(&input, &c), pwm.forward(&input, &c));
    }

    #[test]
    fn potts_hand_computed_logits() {
        // L=4, |A|=3, one coupled pair (1, 3).
        let mut m = PottsModel::zeros(4, 3, &CouplingGraph::Edges(vec![(1, 3)])).unwrap();
        let h: Vec<f64> = (0..12).map(|x| x as f64 * 0.5).collect();
        m.fields_mut().copy_from_slice(&h);
        // J[1][3][a][b] = a - 2b
        let field = 12;
        for a in 0..3 {
            for b in 0..3 {
                m.params_mut()[field + a * 3 + b] = a as f64 - 2.0 * b as f64;
            }
        }
        let m: SequenceModel = m.into();
        let seq = toks(&[2, 0, 1, 2]);
        let c = ForwardCounter::new();
        // position 1 masked; neighbour 3 observed with b=2
        let l = m.forward(
            &MaskedInput::new(&seq, &PositionMask::from_positions(4, [1]).unwrap(), 3),
            &c,
        );
        assert_eq!(
            l.row(1),
            &[1.5 + 0.0 - 4.0, 2.0 + 1.0 - 4.0, 2.5 + 2.0 - 4.0]
        );
        // position 3 sees neighbour 1 = 0: J[3][1][a][0] = J[1][3][0][a] = -2a
        let l = m.forward(
            &MaskedInput::new(&seq, &PositionMask::from_positions(4, [3]).unwrap(), 3),
            &c,
        );
        assert_eq!(l.row(3), &[4.5, 5.0 - 2.0, 5.5 - 4.0]);
        // both masked: no coupling contribution
        let l = m.forward(
            &MaskedInput::new(&seq, &PositionMask::from_positions(4, [1, 3]).unwrap(), 3),
            &c,
        );
        assert_eq!(l.row(1), &[1.5, 2.0, 2.5]);
        assert_eq!(l.row(0), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn pll_counts_and_uniform_value() {
        let m: SequenceModel = PwmModel::uniform(7, 20).into();
        let c = ForwardCounter::new();
        let v = m.pll(&[3; 7], &c);
        assert_eq!(c.get(), 7);
        assert!((v - 7.0 * (1.0f64 / 20.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn pwm_pll_is_sum_of_position_log_softmax() {
        let mut rng = stream(4, "t");
        let m = random_model("pwm", 6, 3, 2.0, &mut rng);
        let seq = toks(&[0, 1, 2, 2, 1, 0]);
        let Architecture::Pwm(p) = m.architecture() else {
            unreachable!()
        };
        let expect: f64 = (0..6)
            .map(|i| {
                let row = &p.theta()[i * 3..i * 3 + 3];
                row[seq[i] as usize] - log_sum_exp(row)
            })
            .sum();
        assert!((m.pll(&seq, &ForwardCounter::new()) - expect).abs() < 1e-12);
    }

    #[test]
    fn gradient_rejects_unmasked_position() {
        let m: SequenceModel = PwmModel::uniform(3, 3).into();
        let input = MaskedInput::new(
            &[0, 1, 2],
            &PositionMask::from_positions(3, [0]).unwrap(),
            3,
        );
        let logits = m.forward(&input, &ForwardCounter::new());
        let mut g = m.zero_grad();
        assert!(matches!(
            m.grad_log_softmax_accumulate(&input, &logits, 1, 1, 1.0, &mut g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pwm_gradient_rows() {
        let mut rng = stream(5, "t");
        let m = random_model("pwm", 4, 3, 1.0, &mut rng);
        let input = MaskedInput::new(
            &[0, 1, 2, 0],
            &PositionMask::from_positions(4, [2]).unwrap(),
            3,
        );
        let logits = m.forward(&input, &ForwardCounter::new());
        let mut g = m.zero_grad();
        m.grad_log_softmax_accumulate(&input, &logits, 2, 1, 1.0, &mut g)
            .unwrap();
        for i in [0, 1, 3] {
            assert!(g[i * 3..i * 3 + 3].iter().all(|&x| x == 0.0));
        }
        assert!(g[6..9].iter().sum::<f64>().abs() < 1e-15);
        assert!(g[7] > 0.0);
    }

    fn central_difference_check(kind: &str, seed: u64) {
        let mut rng = stream(seed, "fd");
        let mut m = random_model(kind, 5, 3, 0.8, &mut rng);
        let seq: Vec<Token> = (0..5).map(|_| rng.random_range(0..3)).collect();
        let mask = PositionMask::from_positions(5, [1, 3]).unwrap();
        let input = MaskedInput::new(&seq, &mask, 3);
        let objective = |m: &SequenceModel| {
            let l = m.forward(&input, &ForwardCounter::new());
            0.7 * l.log_prob(1, seq[1]) - 1.3 * l.log_prob(3, seq[3])
        };
        let logits = m.forward(&input, &ForwardCounter::new());
        let mut g = m.zero_grad();
        m.grad_log_softmax_accumulate(&input, &logits, 1, seq[1], 0.7, &mut g)
            .unwrap();
        m.grad_log_softmax_accumulate(&input, &logits, 3, seq[3], -1.3, &mut g)
            .unwrap();
        let eps = 1e-5;
        for k in 0..m.param_count() {
            let orig = m.params()[k];
            m.params_mut().unwrap()[k] = orig + eps;
            let up = objective(&m);
            m.params_mut().unwrap()[k] = orig - eps;
            let down = objective(&m);
            m.params_mut().unwrap()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(
                err < 1e-4 || (fd - g[k]).abs() < 1e-9,
                "param {k}: fd {fd} analytic {}",
                g[k]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            central_difference_check("pwm", seed);
            central_difference_check("potts", seed);
        }
    }

    #[test]
    fn pll_gradient_matches_finite_differences() {
        let mut rng = stream(9, "fd");
        let mut m = random_model("potts", 5, 3, 0.8, &mut rng);
        let seq: Vec<Token> = vec![0, 2, 1, 1, 0];
        let mut g = m.zero_grad();
        m.accumulate_pll_grad(&seq, 1.0, &mut g);
        let eps = 1e-5;
        for k in 0..m.param_count() {
            let orig = m.params()[k];
            m.params_mut().unwrap()[k] = orig + eps;
            let up = m.pll(&seq, &ForwardCounter::new());
            m.params_mut().unwrap()[k] = orig - eps;
            let down = m.pll(&seq, &ForwardCounter::new());
            m.params_mut().unwrap()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!(
                (fd - g[k]).abs() <= 1e-4 * fd.abs().max(1e-5),
                "param {k}: {fd} vs {}",
                g[k]
            );
        }
    }

    #[test]
    fn frozen_clone_rejects_mutation() {
        let m: SequenceModel = PwmModel::uniform(3, 3).into();
        let mut f = m.clone_frozen();
        assert!(matches!(f.params_mut(), Err(Error::Contract(_))));
        assert!(f.sgd_step(&[0.0; 9], 0.1).is_err());
        assert_eq!(f.params(), m.params());
    }

    #[test]
    fn checkpoint_round_trip_scores_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream(6, "ck");
        for kind in ["pwm", "potts"] {
            let m = random_model(kind, 6, 4, 1.3, &mut rng).clone_frozen();
            let p = dir.path().join(format!("{kind}.json"));
            m.save(&p).unwrap();
            let back = SequenceModel::load(&p).unwrap();
            assert_eq!(back, m);
            let seq = [0, 1, 2, 3, 0, 1];
            let c = ForwardCounter::new();
            assert_eq!(back.pll(&seq, &c).to_bits(), m.pll(&seq, &c).to_bits());
        }
    }

    #[test]
    fn frequency_fit() {
        use crate::seqdata::{AlignedSequence, Alphabet};
        let a = Alphabet::new("ABC").unwrap();
        let d = Dataset::new(
            a.clone(),
            vec![AlignedSequence::parse("x", "ABCA", None, &a).unwrap()],
            None,
        )
        .unwrap();
        let m = PwmModel::fit_frequencies(&d, 0.1).unwrap();
        for (i, &t) in [0usize, 1, 2, 0].iter().enumerate() {
            let row = &m.theta()[i * 3..i * 3 + 3];
            let arg = (0..3).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
            assert_eq!(arg, t);
        }
        let flat = PwmModel::fit_frequencies(&d, 1e12).unwrap();
        for i in 0..4 {
            let row = &flat.theta()[i * 3..i * 3 + 3];
            assert!((row[0] - row[1]).abs() < 1e-9 && (row[0] - (1.0f64 / 3.0).ln()).abs() < 1e-9);
        }
    }
}
