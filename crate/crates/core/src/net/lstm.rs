//! Single LSTM cell on flat row-major slices. Gate order in the stacked
//! pre-activation is `i, f, g, o`.

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights of one layer, borrowed from the flat parameter vector.
#[derive(Clone, Copy)]
pub(crate) struct CellWeights<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub n_in: usize,
    pub n_h: usize,
}

/// Everything the reverse pass needs from one cell evaluation.
#[derive(Clone, Debug, Default)]
pub(crate) struct CellCache {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn cell_forward(w: CellWeights<'_>, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellCache {
    let (n_in, n_h) = (w.n_in, w.n_h);
    let mut gates = w.bias.to_vec();
    for (r, z) in gates.iter_mut().enumerate() {
        let row_i = &w.w_ih[r * n_in..(r + 1) * n_in];
        let row_h = &w.w_hh[r * n_h..(r + 1) * n_h];
        let mut acc = *z;
        for k in 0..n_in {
            acc += row_i[k] * input[k];
        }
        for k in 0..n_h {
            acc += row_h[k] * h_prev[k];
        }
        *z = acc;
    }
    for k in 0..n_h {
        gates[k] = sigmoid(gates[k]);
        gates[n_h + k] = sigmoid(gates[n_h + k]);
        gates[2 * n_h + k] = gates[2 * n_h + k].tanh();
        gates[3 * n_h + k] = sigmoid(gates[3 * n_h + k]);
    }
    let mut c = vec![0.0; n_h];
    let mut tanh_c = vec![0.0; n_h];
    let mut h = vec![0.0; n_h];
    for k in 0..n_h {
        c[k] = gates[n_h + k] * c_prev[k] + gates[k] * gates[2 * n_h + k];
        tanh_c[k] = c[k].tanh();
        h[k] = gates[3 * n_h + k] * tanh_c[k];
    }
    CellCache {
        input: input.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Gradient slices for one layer.
pub(crate) struct CellGrads<'a> {
    pub w_ih: &'a mut [f64],
    pub w_hh: &'a mut [f64],
    pub bias: &'a mut [f64],
}

/// Reverse pass through one cell. `h_bar` and `c_bar` are the total adjoints
/// of this cell's outputs; returns `(input_bar, h_prev_bar, c_prev_bar)`.
pub(crate) fn cell_backward(
    w: CellWeights<'_>,
    cache: &CellCache,
    h_bar: &[f64],
    c_bar: &[f64],
    grads: CellGrads<'_>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n_in, n_h) = (w.n_in, w.n_h);
    let g = &cache.gates;
    let mut z_bar = vec![0.0; 4 * n_h];
    let mut c_prev_bar = vec![0.0; n_h];
    for k in 0..n_h {
        let (i, f, gg, o) = (g[k], g[n_h + k], g[2 * n_h + k], g[3 * n_h + k]);
        let tc = cache.tanh_c[k];
        let o_bar = h_bar[k] * tc;
        let cb = c_bar[k] + h_bar[k] * o * (1.0 - tc * tc);
        let i_bar = cb * gg;
        let g_bar = cb * i;
        let f_bar = cb * cache.c_prev[k];
        c_prev_bar[k] = cb * f;
        z_bar[k] = i_bar * i * (1.0 - i);
        z_bar[n_h + k] = f_bar * f * (1.0 - f);
        z_bar[2 * n_h + k] = g_bar * (1.0 - gg * gg);
        z_bar[3 * n_h + k] = o_bar * o * (1.0 - o);
    }
    let mut input_bar = vec![0.0; n_in];
    let mut h_prev_bar = vec![0.0; n_h];
    for (r, &zb) in z_bar.iter().enumerate() {
        if zb == 0.0 {
            continue;
        }
        grads.bias[r] += zb;
        let gi = &mut grads.w_ih[r * n_in..(r + 1) * n_in];
        let wi = &w.w_ih[r * n_in..(r + 1) * n_in];
        for k in 0..n_in {
            gi[k] += zb * cache.input[k];
            input_bar[k] += wi[k] * zb;
        }
        let gh = &mut grads.w_hh[r * n_h..(r + 1) * n_h];
        let wh = &w.w_hh[r * n_h..(r + 1) * n_h];
        for k in 0..n_h {
            gh[k] += zb * cache.h_prev[k];
            h_prev_bar[k] += wh[k] * zb;
        }
    }
    (input_bar, h_prev_bar, c_prev_bar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_gates_match_hand_recurrence() {
        // One input, one cell. i, f, o pre-activations 50; candidate 1.
        let w_ih = [0.0; 4];
        let w_hh = [0.0; 4];
        let bias = [50.0, 50.0, 1.0, 50.0];
        let w = CellWeights { w_ih: &w_ih, w_hh: &w_hh, bias: &bias, n_in: 1, n_h: 1 };
        let cache = cell_forward(w, &[0.3], &[0.0], &[0.0]);
        let c = 1f64.tanh();
        assert!((cache.c[0] - c).abs() < 1e-12);
        assert!((cache.h[0] - c.tanh()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (n_in, n_h) = (2, 3);
        let w_ih: Vec<f64> = (0..4 * n_h * n_in).map(|k| (k as f64 * 0.37).sin() * 0.6).collect();
        let w_hh: Vec<f64> = (0..4 * n_h * n_h).map(|k| (k as f64 * 0.71).cos() * 0.5).collect();
        let bias: Vec<f64> = (0..4 * n_h).map(|k| (k as f64 * 0.13).sin() * 0.2).collect();
        let input = [0.4, -0.9];
        let h_prev = [0.1, -0.2, 0.3];
        let c_prev = [0.5, 0.0, -0.4];
        let hw = [0.7, -1.1, 0.2];
        let cw = [0.3, 0.9, -0.5];
        let objective = |w_ih: &[f64], input: &[f64], h_prev: &[f64], c_prev: &[f64]| {
            let w = CellWeights { w_ih, w_hh: &w_hh, bias: &bias, n_in, n_h };
            let c = cell_forward(w, input, h_prev, c_prev);
            (0..n_h).map(|k| hw[k] * c.h[k] + cw[k] * c.c[k]).sum::<f64>()
        };
        let w = CellWeights { w_ih: &w_ih, w_hh: &w_hh, bias: &bias, n_in, n_h };
        let cache = cell_forward(w, &input, &h_prev, &c_prev);
        let mut g_ih = vec![0.0; w_ih.len()];
        let mut g_hh = vec![0.0; w_hh.len()];
        let mut g_b = vec![0.0; bias.len()];
        let (ib, hb, cb) = cell_backward(
            w,
            &cache,
            &hw,
            &cw,
            CellGrads { w_ih: &mut g_ih, w_hh: &mut g_hh, bias: &mut g_b },
        );
        let h = 1e-6;
        for k in 0..w_ih.len() {
            let mut p = w_ih.clone();
            let mut m = w_ih.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&p, &input, &h_prev, &c_prev) - objective(&m, &input, &h_prev, &c_prev)) / (2.0 * h);
            assert!((fd - g_ih[k]).abs() < 1e-8, "w_ih[{k}]");
        }
        for k in 0..n_in {
            let mut p = input;
            let mut m = input;
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&w_ih, &p, &h_prev, &c_prev) - objective(&w_ih, &m, &h_prev, &c_prev)) / (2.0 * h);
            assert!((fd - ib[k]).abs() < 1e-8, "input[{k}]");
        }
        for k in 0..n_h {
            let mut p = h_prev;
            let mut m = h_prev;
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&w_ih, &input, &p, &c_prev) - objective(&w_ih, &input, &m, &c_prev)) / (2.0 * h);
            assert!((fd - hb[k]).abs() < 1e-8, "h_prev[{k}]");
            let mut p = c_prev;
            let mut m = c_prev;
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&w_ih, &input, &h_prev, &p) - objective(&w_ih, &input, &h_prev, &m)) / (2.0 * h);
            assert!((fd - cb[k]).abs() < 1e-8, "c_prev[{k}]");
        }
    }
}
