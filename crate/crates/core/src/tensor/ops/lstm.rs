//! Single-layer LSTM over `[batch, time, features]`, zero initial state,
//! returning the final hidden state. Gate order in the stacked weights is
//! input, forget, cell candidate, output.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmDims {
    pub batch: usize,
    pub time: usize,
    pub features: usize,
    pub hidden: usize,
}

/// Per-step activations saved for backpropagation through time.
pub(crate) struct LstmCache<T> {
    /// `[time][batch][4 * hidden]`, post-activation.
    gates: Vec<T>,
    /// `[time][batch][hidden]`
    cell: Vec<T>,
    /// `[time][batch][hidden]`, `tanh` of the cell state.
    cell_tanh: Vec<T>,
    /// `[time][batch][hidden]`
    hidden: Vec<T>,
}

pub(crate) fn forward<T: Scalar>(
    x: &[T],
    d: LstmDims,
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
    keep_cache: bool,
) -> (Vec<T>, Option<LstmCache<T>>) {
    let (b, h, f) = (d.batch, d.hidden, d.features);
    let g4 = 4 * h;
    let x_row = d.time * f;
    let mut gates = vec![T::zero(); b * g4];
    let mut c = vec![T::zero(); b * h];
    let mut hs = vec![T::zero(); b * h];
    let mut tc = vec![T::zero(); b * h];
    let mut cache = keep_cache.then(|| LstmCache {
        gates: Vec::with_capacity(d.time * b * g4),
        cell: Vec::with_capacity(d.time * b * h),
        cell_tanh: Vec::with_capacity(d.time * b * h),
        hidden: Vec::with_capacity(d.time * b * h),
    });
    for t in 0..d.time {
        for row in gates.chunks_mut(g4) {
            row.copy_from_slice(bias);
        }
        T::gemm(
            b,
            f,
            g4,
            T::one(),
            &x[t * f..],
            (x_row, 1),
            w_ih,
            (1, f),
            T::one(),
            &mut gates,
            (g4, 1),
        );
        if t > 0 {
            T::gemm(
                b,
                h,
                g4,
                T::one(),
                &hs,
                (h, 1),
                w_hh,
                (1, h),
                T::one(),
                &mut gates,
                (g4, 1),
            );
        }
        for s in 0..b {
            let row = &mut gates[s * g4..(s + 1) * g4];
            T::sigmoid_slice(&mut row[..2 * h]);
            T::tanh_slice(&mut row[2 * h..3 * h]);
            T::sigmoid_slice(&mut row[3 * h..]);
            let (cs, ts) = (&mut c[s * h..(s + 1) * h], &mut tc[s * h..(s + 1) * h]);
            for j in 0..h {
                cs[j] = row[h + j] * cs[j] + row[j] * row[2 * h + j];
            }
            ts.copy_from_slice(cs);
            T::tanh_slice(ts);
            for j in 0..h {
                hs[s * h + j] = row[3 * h + j] * ts[j];
            }
        }
        if let Some(cache) = cache.as_mut() {
            cache.gates.extend_from_slice(&gates);
            cache.cell.extend_from_slice(&c);
            cache.cell_tanh.extend_from_slice(&tc);
            cache.hidden.extend_from_slice(&hs);
        }
    }
    (hs, cache)
}

pub(crate) struct LstmGrads<'a, T> {
    pub w_ih: Option<&'a mut [T]>,
    pub w_hh: Option<&'a mut [T]>,
    pub bias: Option<&'a mut [T]>,
    pub x: Option<&'a mut [T]>,
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    d: LstmDims,
    w_ih: &[T],
    w_hh: &[T],
    cache: &LstmCache<T>,
    d_out: &[T],
    mut grads: LstmGrads<'_, T>,
) {
    let (b, h, f) = (d.batch, d.hidden, d.features);
    let g4 = 4 * h;
    let x_row = d.time * f;
    let mut dh = d_out.to_vec();
    let mut dc = vec![T::zero(); b * h];
    let mut da = vec![T::zero(); b * g4];
    let one = T::one();
    for t in (0..d.time).rev() {
        let gates = &cache.gates[t * b * g4..(t + 1) * b * g4];
        let cell_tanh = &cache.cell_tanh[t * b * h..(t + 1) * b * h];
        let prev_cell = (t > 0).then(|| &cache.cell[(t - 1) * b * h..t * b * h]);
        for s in 0..b {
            let row = &gates[s * g4..(s + 1) * g4];
            let drow = &mut da[s * g4..(s + 1) * g4];
            for j in 0..h {
                let k = s * h + j;
                let (i, fg, g, o) = (row[j], row[h + j], row[2 * h + j], row[3 * h + j]);
                let tc = cell_tanh[k];
                let d_o = dh[k] * tc;
                let dcell = dc[k] + dh[k] * o * (one - tc * tc);
                let cp = prev_cell.map_or(T::zero(), |p| p[k]);
                drow[j] = dcell * g * i * (one - i);
                drow[h + j] = dcell * cp * fg * (one - fg);
                drow[2 * h + j] = dcell * i * (one - g * g);
                drow[3 * h + j] = d_o * o * (one - o);
                dc[k] = dcell * fg;
            }
        }
        if let Some(db) = grads.bias.as_deref_mut() {
            for row in da.chunks(g4) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += *v;
                }
            }
        }
        if let Some(dw) = grads.w_ih.as_deref_mut() {
            T::gemm(
                g4,
                b,
                f,
                one,
                &da,
                (1, g4),
                &x[t * f..],
                (x_row, 1),
                one,
                dw,
                (f, 1),
            );
        }
        if let Some(dx) = grads.x.as_deref_mut() {
            T::gemm(
                b,
                g4,
                f,
                one,
                &da,
                (g4, 1),
                w_ih,
                (f, 1),
                one,
                &mut dx[t * f..],
                (x_row, 1),
            );
        }
        if t > 0 {
            let prev_h = &cache.hidden[(t - 1) * b * h..t * b * h];
            if let Some(dw) = grads.w_hh.as_deref_mut() {
                T::gemm(g4, b, h, one, &da, (1, g4), prev_h, (h, 1), one, dw, (h, 1));
            }
            T::gemm(
                b,
                g4,
                h,
                one,
                &da,
                (g4, 1),
                w_hh,
                (h, 1),
                T::zero(),
                &mut dh,
                (h, 1),
            );
        }
    }
}
