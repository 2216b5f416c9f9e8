//! Recurrent value network: a stack of LSTM layers shared across time feeding
//! two linear heads, one for the packed lower triangle of `Vxx` and one for the
//! drift term `A` of the gradient equation. `V₀ = ψ` and `Vx,₀ = ζ` are free
//! trainable parameters.

mod lstm;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{solve_control, ControlSolution};
use crate::error::{Error, Result};
use crate::sde::ValuePredictor;
use lstm::{cell_backward, cell_forward, CellCache, CellGrads, CellWeights};

/// Stream id reserved for parameter initialization, disjoint from the
/// per-sample noise streams.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    #[default]
    Xavier,
    Zeros,
}

/// One named, row-major parameter block inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Included in the `λ‖θ‖²` penalty (everything except ψ and ζ).
    pub regularized: bool,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// `n(n+1)/2`.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of `(i, j)`, `i ≥ j`, in the row-major packed lower triangle.
#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    i * (i + 1) / 2 + j
}

pub fn expand_packed(p: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| p[packed_index(i, j)])
}

/// Adjoint of [`expand_packed`].
pub fn pack_adjoint(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut p = vec![0.0; packed_len(n)];
    for i in 0..n {
        for j in 0..=i {
            p[packed_index(i, j)] = if i == j { m[(i, i)] } else { m[(i, j)] + m[(j, i)] };
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    pub vxx: DMatrix<f64>,
    pub a: DVector<f64>,
}

/// Per-layer `(h, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(hidden: &[usize]) -> Self {
        Self {
            h: hidden.iter().map(|&n| vec![0.0; n]).collect(),
            c: hidden.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Forward record of one network query.
#[derive(Clone, Debug, Default)]
pub struct StepCache {
    cells: Vec<CellCache>,
}

/// Adjoints carried backwards in time between network queries.
#[derive(Clone, Debug)]
pub struct BackwardCarry {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    n_x: usize,
    hidden: Vec<usize>,
    groups: Vec<ParamGroup>,
    data: Vec<f64>,
}

fn layout(n_x: usize, hidden: &[usize]) -> Vec<ParamGroup> {
    let mut groups = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, rows: usize, cols: usize, regularized: bool| {
        groups.push(ParamGroup { name, rows, cols, offset, regularized });
        offset += rows * cols;
    };
    let mut n_in = n_x;
    for (l, &h) in hidden.iter().enumerate() {
        push(format!("lstm.{l}.w_ih"), 4 * h, n_in, true);
        push(format!("lstm.{l}.w_hh"), 4 * h, h, true);
        push(format!("lstm.{l}.bias"), 4 * h, 1, true);
        n_in = h;
    }
    push("head_vxx.weight".into(), packed_len(n_x), n_in, true);
    push("head_vxx.bias".into(), packed_len(n_x), 1, true);
    push("head_a.weight".into(), n_x, n_in, true);
    push("head_a.bias".into(), n_x, 1, true);
    push("psi".into(), 1, 1, false);
    push("zeta".into(), n_x, 1, false);
    groups
}

impl NetworkParams {
    /// All-zero parameters with the right layout.
    pub fn zeros(n_x: usize, hidden: &[usize]) -> Result<Self> {
        if n_x == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "network needs n_x ≥ 1 and non-empty positive layer sizes, got n_x={n_x}, h={hidden:?}"
            )));
        }
        let groups = layout(n_x, hidden);
        let total = groups.last().map(|g| g.offset + g.len()).unwrap_or(0);
        Ok(Self {
            n_x,
            hidden: hidden.to_vec(),
            groups,
            data: vec![0.0; total],
        })
    }

    /// Xavier-uniform or zero weights, zero biases, `ψ, ζ ~ N(0, init_scale²)`.
    pub fn init(strategy: InitStrategy, seed: u64, n_x: usize, hidden: &[usize], init_scale: f64) -> Result<Self> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("init scale must be nonnegative, got {init_scale}")));
        }
        let mut p = Self::zeros(n_x, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        if strategy == InitStrategy::Xavier {
            for g in p.groups.clone() {
                if g.name.ends_with("w_ih") || g.name.ends_with("w_hh") || g.name.ends_with(".weight") {
                    let bound = (6.0 / (g.rows + g.cols) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    for v in &mut p.data[g.range()] {
                        *v = dist.sample(&mut rng);
                    }
                }
            }
        }
        if init_scale > 0.0 {
            let normal = Normal::new(0.0, init_scale).expect("finite scale");
            for name in ["psi", "zeta"] {
                let r = p.group(name).range();
                for v in &mut p.data[r] {
                    *v = rng.sample(normal);
                }
            }
        }
        Ok(p)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn group(&self, name: &str) -> &ParamGroup {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .unwrap_or_else(|| panic!("no parameter group `{name}`"))
    }

    pub fn values(&self, name: &str) -> &[f64] {
        &self.data[self.group(name).range()]
    }

    pub fn values_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.group(name).range();
        &mut self.data[r]
    }

    /// Replaces a group's values; the length must match.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let g = self
            .groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Dimension(format!("no parameter group `{name}`")))?;
        if g.len() != values.len() {
            return Err(Error::Dimension(format!(
                "`{name}` has {} entries, got {}",
                g.len(),
                values.len()
            )));
        }
        let r = g.range();
        self.data[r].copy_from_slice(values);
        Ok(())
    }

    pub fn psi(&self) -> f64 {
        self.data[self.groups[self.groups.len() - 2].offset]
    }

    pub fn zeta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data[self.groups[self.groups.len() - 1].range()])
    }

    /// `‖θ‖²` over the regularized groups.
    pub fn theta_sq_norm(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.regularized)
            .flat_map(|g| self.data[g.range()].iter())
            .map(|v| v * v)
            .sum()
    }

    /// SHA-256 of the parameter bits, hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn layer(&self, l: usize) -> CellWeights<'_> {
        let n_in = if l == 0 { self.n_x } else { self.hidden[l - 1] };
        CellWeights {
            w_ih: &self.data[self.groups[3 * l].range()],
            w_hh: &self.data[self.groups[3 * l + 1].range()],
            bias: &self.data[self.groups[3 * l + 2].range()],
            n_in,
            n_h: self.hidden[l],
        }
    }

    fn head_index(&self) -> usize {
        3 * self.hidden.len()
    }

    fn heads(&self, top: &[f64]) -> NetworkOutput {
        let n = self.n_x;
        let hi = self.head_index();
        let affine = |w: &ParamGroup, b: &ParamGroup| -> Vec<f64> {
            let wd = &self.data[w.range()];
            let mut out = self.data[b.range()].to_vec();
            for (r, o) in out.iter_mut().enumerate() {
                let row = &wd[r * w.cols..(r + 1) * w.cols];
                *o += row.iter().zip(top).map(|(a, b)| a * b).sum::<f64>();
            }
            out
        };
        let packed = affine(&self.groups[hi], &self.groups[hi + 1]);
        let a = affine(&self.groups[hi + 2], &self.groups[hi + 3]);
        NetworkOutput {
            vxx: expand_packed(&packed, n),
            a: DVector::from_vec(a),
        }
    }

    fn forward_cached(&self, x: &DVector<f64>, hidden: &mut HiddenState) -> Result<(NetworkOutput, StepCache)> {
        if x.len() != self.n_x {
            return Err(Error::Dimension(format!(
                "network input has length {}, expected {}",
                x.len(),
                self.n_x
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::PathFailure { step: 0, quantity: "network input" });
        }
        let mut cells: Vec<CellCache> = Vec::with_capacity(self.hidden.len());
        for l in 0..self.hidden.len() {
            let input: &[f64] = if l == 0 { x.as_slice() } else { &cells[l - 1].h };
            let cache = cell_forward(self.layer(l), input, &hidden.h[l], &hidden.c[l]);
            hidden.h[l].copy_from_slice(&cache.h);
            hidden.c[l].copy_from_slice(&cache.c);
            cells.push(cache);
        }
        let out = self.heads(&cells.last().unwrap().h);
        if out.vxx.iter().chain(out.a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::PathFailure { step: 0, quantity: "network output" });
        }
        Ok((out, StepCache { cells }))
    }

    /// One recurrent step: LSTM stack then both heads.
    pub fn forward(&self, x: &DVector<f64>, hidden: &mut HiddenState) -> Result<NetworkOutput> {
        self.forward_cached(x, hidden).map(|(o, _)| o)
    }

    pub fn start_hidden(&self) -> HiddenState {
        HiddenState::zeros(&self.hidden)
    }

    pub fn backward_carry(&self) -> BackwardCarry {
        BackwardCarry {
            h: self.hidden.iter().map(|&n| vec![0.0; n]).collect(),
            c: self.hidden.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Reverse pass of one query, latest query first. Accumulates parameter
    /// gradients into `grads` (same layout as the parameters) and returns the
    /// adjoint of the network input `x`.
    pub fn backward_step(
        &self,
        cache: &StepCache,
        vxx_bar: &DMatrix<f64>,
        a_bar: &DVector<f64>,
        carry: &mut BackwardCarry,
        grads: &mut [f64],
    ) -> DVector<f64> {
        let hi = self.head_index();
        let top = &cache.cells.last().unwrap().h;
        let n_top = top.len();
        let mut h_bar = vec![0.0; n_top];
        let packed_bar = pack_adjoint(vxx_bar);
        for (wg, bg, out_bar) in [
            (&self.groups[hi], &self.groups[hi + 1], packed_bar.as_slice()),
            (&self.groups[hi + 2], &self.groups[hi + 3], a_bar.as_slice()),
        ] {
            let w = &self.data[wg.range()];
            for (r, &ob) in out_bar.iter().enumerate() {
                if ob == 0.0 {
                    continue;
                }
                grads[bg.offset + r] += ob;
                let gw = &mut grads[wg.offset + r * n_top..wg.offset + (r + 1) * n_top];
                for k in 0..n_top {
                    gw[k] += ob * top[k];
                    h_bar[k] += w[r * n_top + k] * ob;
                }
            }
        }
        for l in (0..self.hidden.len()).rev() {
            for (a, b) in h_bar.iter_mut().zip(&carry.h[l]) {
                *a += b;
            }
            let (g_ih, rest) = grads[self.groups[3 * l].offset..].split_at_mut(self.groups[3 * l].len());
            let (g_hh, rest) = rest.split_at_mut(self.groups[3 * l + 1].len());
            let g_b = &mut rest[..self.groups[3 * l + 2].len()];
            let (in_bar, h_prev_bar, c_prev_bar) = cell_backward(
                self.layer(l),
                &cache.cells[l],
                &h_bar,
                &carry.c[l],
                CellGrads { w_ih: g_ih, w_hh: g_hh, bias: g_b },
            );
            carry.h[l] = h_prev_bar;
            carry.c[l] = c_prev_bar;
            h_bar = in_bar;
        }
        DVector::from_vec(h_bar)
    }
}

impl ValuePredictor for NetworkParams {
    type Memory = HiddenState;
    type Record = StepCache;

    fn initial_value(&self) -> (f64, DVector<f64>) {
        (self.psi(), self.zeta())
    }

    fn start(&self) -> HiddenState {
        self.start_hidden()
    }

    fn predict(&self, step: usize, _t: f64, x: &DVector<f64>, memory: &mut HiddenState) -> Result<(NetworkOutput, StepCache)> {
        self.forward_cached(x, memory).map_err(|e| e.at_step(step))
    }
}

/// `u* = -R̂⁻¹GᵀVx`, `R̂ = R + σ²GᵀVxxG`.
pub fn optimal_control(
    vx: &DVector<f64>,
    vxx: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sigma: f64,
) -> Result<DVector<f64>> {
    solve_control(vx, vxx, g, r, sigma).map(|s: ControlSolution| s.u)
}
