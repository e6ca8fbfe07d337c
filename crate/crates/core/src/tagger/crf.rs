//! Linear-chain CRF over `L` labels with explicit start and end scores.
//!
//! Emissions are row-major `n×L`; `transitions[from * L + to]`. Everything
//! here is generic in `L`, the tagger instantiates it with the 9 IOB2 labels.

use crate::error::{Error, Result};
use crate::math::{lse, CustomOp, Tape, Tensor, Var};

/// Borrowed view of the CRF scores.
#[derive(Debug, Clone, Copy)]
pub struct CrfScores<'a> {
    pub transitions: &'a [f64],
    pub start: &'a [f64],
    pub end: &'a [f64],
}

impl<'a> CrfScores<'a> {
    pub fn new(transitions: &'a [f64], start: &'a [f64], end: &'a [f64]) -> Result<Self> {
        let l = start.len();
        if end.len() != l || transitions.len() != l * l || l == 0 {
            return Err(Error::Dimension(format!(
                "crf scores: {} transitions, {} start, {} end",
                transitions.len(),
                l,
                end.len()
            )));
        }
        Ok(Self { transitions, start, end })
    }

    pub fn labels(&self) -> usize {
        self.start.len()
    }

    #[inline]
    fn t(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.labels() + to]
    }
}

fn check(emissions: &[f64], s: &CrfScores) -> Result<usize> {
    let l = s.labels();
    if emissions.is_empty() || !emissions.len().is_multiple_of(l) {
        return Err(Error::Contract(format!(
            "crf needs a non-empty n×{l} emission matrix, got {} values",
            emissions.len()
        )));
    }
    Ok(emissions.len() / l)
}

/// Forward log-scores `alpha[t*L + y]`.
fn alphas(e: &[f64], n: usize, s: &CrfScores) -> Vec<f64> {
    let l = s.labels();
    let mut a = vec![0.0; n * l];
    for y in 0..l {
        a[y] = s.start[y] + e[y];
    }
    let mut buf = vec![0.0; l];
    for t in 1..n {
        for y in 0..l {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = a[(t - 1) * l + p] + s.t(p, y);
            }
            a[t * l + y] = lse(&buf) + e[t * l + y];
        }
    }
    a
}

/// Backward log-scores `beta[t*L + y]`, including the end score.
fn betas(e: &[f64], n: usize, s: &CrfScores) -> Vec<f64> {
    let l = s.labels();
    let mut b = vec![0.0; n * l];
    b[(n - 1) * l..].copy_from_slice(s.end);
    let mut buf = vec![0.0; l];
    for t in (0..n - 1).rev() {
        for y in 0..l {
            for (k, v) in buf.iter_mut().enumerate() {
                *v = s.t(y, k) + e[(t + 1) * l + k] + b[(t + 1) * l + k];
            }
            b[t * l + y] = lse(&buf);
        }
    }
    b
}

fn log_z_from(a: &[f64], n: usize, s: &CrfScores) -> f64 {
    let l = s.labels();
    let last: Vec<f64> = (0..l).map(|y| a[(n - 1) * l + y] + s.end[y]).collect();
    lse(&last)
}

/// Log-partition function via the forward algorithm.
pub fn log_partition(emissions: &[f64], scores: &CrfScores) -> Result<f64> {
    let n = check(emissions, scores)?;
    Ok(log_z_from(&alphas(emissions, n, scores), n, scores))
}

/// Unnormalized log-score of one label path.
pub fn path_score(emissions: &[f64], scores: &CrfScores, path: &[usize]) -> Result<f64> {
    let n = check(emissions, scores)?;
    let l = scores.labels();
    if path.len() != n || path.iter().any(|&y| y >= l) {
        return Err(Error::Dimension(format!("path of {} labels for {n} positions", path.len())));
    }
    let mut s = scores.start[path[0]] + scores.end[path[n - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += emissions[t * l + y];
        if t > 0 {
            s += scores.t(path[t - 1], y);
        }
    }
    Ok(s)
}

/// `logZ − score(gold)`.
pub fn negative_log_likelihood(emissions: &[f64], scores: &CrfScores, gold: &[usize]) -> Result<f64> {
    let gs = path_score(emissions, scores, gold)?;
    Ok(log_partition(emissions, scores)? - gs)
}

/// Hard constraints applied during decoding.
#[derive(Debug, Clone)]
pub struct DecodeMask {
    /// `allowed[from * L + to]`.
    pub transitions: Vec<bool>,
    pub start: Vec<bool>,
}

/// Highest-scoring path and its score. Ties go to the lowest label index,
/// both at each back-pointer and at the final position.
pub fn viterbi(emissions: &[f64], scores: &CrfScores, mask: Option<&DecodeMask>) -> Result<(Vec<usize>, f64)> {
    let n = check(emissions, scores)?;
    let l = scores.labels();
    let start_ok = |y: usize| mask.is_none_or(|m| m.start[y]);
    let trans_ok = |p: usize, y: usize| mask.is_none_or(|m| m.transitions[p * l + y]);

    let mut delta = vec![f64::NEG_INFINITY; n * l];
    let mut back = vec![0usize; n * l];
    for y in 0..l {
        if start_ok(y) {
            delta[y] = scores.start[y] + emissions[y];
        }
    }
    for t in 1..n {
        for y in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..l {
                if !trans_ok(p, y) {
                    continue;
                }
                let v = delta[(t - 1) * l + p] + scores.t(p, y);
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            delta[t * l + y] = best + emissions[t * l + y];
            back[t * l + y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..l {
        let v = delta[(n - 1) * l + y] + scores.end[y];
        if v > best {
            best = v;
            last = y;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numeric(format!("viterbi found no finite path (best score {best})")));
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    Ok((path, best))
}

/// Posterior marginals: unary `n×L` and pairwise `(n−1)×L×L`.
pub fn marginals(emissions: &[f64], scores: &CrfScores) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = check(emissions, scores)?;
    let l = scores.labels();
    let a = alphas(emissions, n, scores);
    let b = betas(emissions, n, scores);
    let z = log_z_from(&a, n, scores);
    let unary = a.iter().zip(&b).map(|(x, y)| (x + y - z).exp()).collect();
    let mut pair = vec![0.0; n.saturating_sub(1) * l * l];
    for t in 1..n {
        for p in 0..l {
            for y in 0..l {
                pair[((t - 1) * l + p) * l + y] =
                    (a[(t - 1) * l + p] + scores.t(p, y) + emissions[t * l + y] + b[t * l + y] - z).exp();
            }
        }
    }
    Ok((unary, pair))
}

/// Backward rule for the batched negative log-likelihood. Inputs are
/// `[emissions, transitions, start, end]`.
struct CrfNll {
    lengths: Vec<usize>,
    gold: Vec<usize>,
    weights: Vec<f64>,
}

impl CustomOp for CrfNll {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (e, tr, st, en) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let scores = CrfScores {
            transitions: tr,
            start: st,
            end: en,
        };
        let l = st.len();
        let mut ge = vec![0.0; e.len()];
        let mut gt = vec![0.0; tr.len()];
        let mut gs = vec![0.0; l];
        let mut gn = vec![0.0; l];
        let mut off = 0;
        for (k, &n) in self.lengths.iter().enumerate() {
            let w = grad[0] * self.weights[k];
            let seg = &e[off * l..(off + n) * l];
            let gold = &self.gold[off..off + n];
            // Validated in the forward pass.
            let (unary, pair) = marginals(seg, &scores).expect("valid crf segment");
            for t in 0..n {
                for y in 0..l {
                    ge[(off + t) * l + y] += w * unary[t * l + y];
                }
                ge[(off + t) * l + gold[t]] -= w;
            }
            for t in 1..n {
                for (pt, v) in pair[(t - 1) * l * l..t * l * l].iter().zip(gt.iter_mut()) {
                    *v += w * pt;
                }
                gt[gold[t - 1] * l + gold[t]] -= w;
            }
            for y in 0..l {
                gs[y] += w * unary[y];
                gn[y] += w * unary[(n - 1) * l + y];
            }
            gs[gold[0]] -= w;
            gn[gold[n - 1]] -= w;
            off += n;
        }
        vec![Some(ge), Some(gt), Some(gs), Some(gn)]
    }
}

/// Records `Σ_k weights[k] · nll(sentence k)` on the tape, where sentences
/// are consecutive row blocks of `emissions` with the given lengths.
#[allow(clippy::too_many_arguments)]
pub fn nll_on_tape(
    tape: &mut Tape<'_>,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
    lengths: &[usize],
    gold: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let total: usize = lengths.iter().sum();
    if gold.len() != total || weights.len() != lengths.len() || lengths.contains(&0) {
        return Err(Error::Dimension(format!(
            "crf batch: {} gold labels, {} weights for lengths {lengths:?}",
            gold.len(),
            weights.len()
        )));
    }
    let (e, tr, st, en) = (
        tape.value(emissions).data(),
        tape.value(transitions).data(),
        tape.value(start).data(),
        tape.value(end).data(),
    );
    let scores = CrfScores::new(tr, st, en)?;
    let l = scores.labels();
    if e.len() != total * l {
        return Err(Error::Dimension(format!("emissions hold {} values, expected {total}×{l}", e.len())));
    }
    let mut loss = 0.0;
    let mut off = 0;
    for (&n, &w) in lengths.iter().zip(weights) {
        loss += w * negative_log_likelihood(&e[off * l..(off + n) * l], &scores, &gold[off..off + n])?;
        off += n;
    }
    let rule = CrfNll {
        lengths: lengths.to_vec(),
        gold: gold.to_vec(),
        weights: weights.to_vec(),
    };
    Ok(tape.custom(&[emissions, transitions, start, end], Tensor::scalar(loss), Box::new(rule)))
}
