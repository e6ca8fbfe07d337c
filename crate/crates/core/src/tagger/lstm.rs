//! Unidirectional LSTM over a batch of variable-length sequences, recorded
//! as a single tape operation with hand-written backpropagation through time.
//!
//! Sequences are consecutive row blocks of the input matrix. Gate layout in
//! the `4h` columns is input, forget, cell, output.

use crate::error::{Error, Result};
use crate::math::{gemm_acc, gemm_nt_acc, gemm_tn_acc, sigmoid, CustomOp, Tape, Tensor, Var};

struct LstmOp {
    lengths: Vec<usize>,
    reverse: bool,
    hidden: usize,
    /// Activated gates per position, `N×4h`.
    gates: Vec<f64>,
    /// Cell states per position, `N×h`.
    cells: Vec<f64>,
}

/// Positions of one sequence in processing order.
fn order(n: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..n).map(move |k| if reverse { n - 1 - k } else { k })
}

impl CustomOp for LstmOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, wx, wh) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let h = self.hidden;
        let g4 = 4 * h;
        let s = inputs[1].shape()[0];
        let hs = output.data();
        let total: usize = self.lengths.iter().sum();

        let mut dz = vec![0.0; total * g4];
        let mut dx = vec![0.0; x.len()];
        let mut dwx = vec![0.0; wx.len()];
        let mut dwh = vec![0.0; wh.len()];
        let mut db = vec![0.0; g4];
        let mut hprev = vec![0.0; total * h];

        let mut off = 0;
        for &n in &self.lengths {
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let steps: Vec<usize> = order(n, self.reverse).collect();
            for (k, &t) in steps.iter().enumerate().rev() {
                let row = off + t;
                let prev = (k > 0).then(|| off + steps[k - 1]);
                if let Some(p) = prev {
                    hprev[row * h..(row + 1) * h].copy_from_slice(&hs[p * h..(p + 1) * h]);
                }
                let gt = &self.gates[row * g4..(row + 1) * g4];
                let c = &self.cells[row * h..(row + 1) * h];
                let dzr = &mut dz[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let (i, f, g, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                    let c_prev = prev.map_or(0.0, |p| self.cells[p * h + j]);
                    let tc = c[j].tanh();
                    let dh = grad[row * h + j] + dh_next[j];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[h + j] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * h + j] = dc * i * (1.0 - g * g);
                    dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[j] = dc * f;
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                gemm_nt_acc(dzr, wh, &mut dh_next, 1, g4, h);
            }
            off += n;
        }
        gemm_tn_acc(x, &dz, &mut dwx, total, s, g4);
        gemm_tn_acc(&hprev, &dz, &mut dwh, total, h, g4);
        gemm_nt_acc(&dz, wx, &mut dx, total, g4, s);
        for row in dz.chunks(g4) {
            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        vec![Some(dx), Some(dwx), Some(dwh), Some(db)]
    }
}

/// Runs an LSTM over the row blocks of `x` (`N×S`), returning hidden states
/// `N×h` aligned with the input rows. With `reverse` each block is read from
/// its last row to its first.
pub fn lstm_on_tape(
    tape: &mut Tape<'_>,
    x: Var,
    wx: Var,
    wh: Var,
    b: Var,
    lengths: &[usize],
    reverse: bool,
) -> Result<Var> {
    let (total, s) = tape.value(x).dims2()?;
    let (ws, g4) = tape.value(wx).dims2()?;
    let h = g4 / 4;
    if lengths.iter().sum::<usize>() != total || lengths.contains(&0) {
        return Err(Error::Contract(format!("sequence lengths {lengths:?} do not tile {total} rows")));
    }
    if ws != s || g4 % 4 != 0 || tape.value(wh).shape() != [h, g4] || tape.value(b).len() != g4 {
        return Err(Error::Dimension(format!(
            "lstm weights {:?}/{:?}/{:?} for input width {s}",
            tape.value(wx).shape(),
            tape.value(wh).shape(),
            tape.value(b).shape()
        )));
    }
    let (xd, wxd, whd, bd) = (
        tape.value(x).data(),
        tape.value(wx).data(),
        tape.value(wh).data(),
        tape.value(b).data(),
    );

    let mut pre = vec![0.0; total * g4];
    for row in pre.chunks_mut(g4) {
        row.copy_from_slice(bd);
    }
    gemm_acc(xd, wxd, &mut pre, total, s, g4);

    let mut gates = pre;
    let mut cells = vec![0.0; total * h];
    let mut hs = vec![0.0; total * h];
    let mut off = 0;
    for &n in lengths {
        let mut prev: Option<usize> = None;
        for t in order(n, reverse) {
            let row = off + t;
            let z = &mut gates[row * g4..(row + 1) * g4];
            if let Some(p) = prev {
                gemm_acc(&hs[p * h..(p + 1) * h], whd, z, 1, h, g4);
            }
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                z[j] = i;
                z[h + j] = f;
                z[2 * h + j] = g;
                z[3 * h + j] = o;
                let c_prev = prev.map_or(0.0, |p| cells[p * h + j]);
                let c = f * c_prev + i * g;
                cells[row * h + j] = c;
                hs[row * h + j] = o * c.tanh();
            }
            prev = Some(row);
        }
        off += n;
    }
    let rule = LstmOp {
        lengths: lengths.to_vec(),
        reverse,
        hidden: h,
        gates,
        cells,
    };
    Ok(tape.custom(&[x, wx, wh, b], Tensor::matrix(total, h, hs), Box::new(rule)))
}
