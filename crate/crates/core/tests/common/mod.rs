//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the tape or the metric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-row binary cross-entropy of two-logit rows.
pub fn ce_rows(z: &[[f64; 2]], y: &[u8]) -> Vec<f64> {
    z.iter()
        .zip(y)
        .map(|(r, &yi)| {
            let (own, other) = if yi == 1 { (r[1], r[0]) } else { (r[0], r[1]) };
            softplus(other - own)
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn masked_mean(v: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (i, x) in v.iter().enumerate() {
        if keep(i) {
            s += x;
            n += 1;
        }
    }
    s / n as f64
}

/// Soft EO gap, the smaller inner gap (distance from the `|·|` kink) and the
/// signs of both inner gaps.
pub fn eo_oracle(p: &[f64], y: &[u8], a: &[u8], conditional: bool) -> (f64, f64, Vec<u8>) {
    let (t, f) = if conditional {
        let t =
            masked_mean(p, |i| y[i] == 0 && a[i] == 1) - masked_mean(p, |i| y[i] == 0 && a[i] == 0);
        let q: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let f = masked_mean(&q, |i| y[i] == 1 && a[i] == 1)
            - masked_mean(&q, |i| y[i] == 1 && a[i] == 0);
        (t, f)
    } else {
        let pos: Vec<f64> = p
            .iter()
            .zip(y)
            .map(|(&pi, &yi)| pi * (1.0 - f64::from(yi)))
            .collect();
        let neg: Vec<f64> = p
            .iter()
            .zip(y)
            .map(|(&pi, &yi)| (1.0 - pi) * f64::from(yi))
            .collect();
        (
            masked_mean(&pos, |i| a[i] == 1) - masked_mean(&pos, |i| a[i] == 0),
            masked_mean(&neg, |i| a[i] == 1) - masked_mean(&neg, |i| a[i] == 0),
        )
    };
    (
        t.abs() + f.abs(),
        t.abs().min(f.abs()),
        vec![u8::from(t > 0.0), u8::from(f > 0.0)],
    )
}

/// Soft AE gap, its distance from the kink and its sign.
pub fn ae_oracle(p: &[f64], y: &[u8], a: &[u8]) -> (f64, f64, Vec<u8>) {
    let err: Vec<f64> = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| if yi == 1 { 1.0 - pi } else { pi })
        .collect();
    let g = masked_mean(&err, |i| a[i] == 1) - masked_mean(&err, |i| a[i] == 0);
    (g.abs(), g.abs(), vec![u8::from(g > 0.0)])
}

/// Worst cell-mean loss, the margin to the runner-up cell and the winner.
pub fn mmf_oracle(ce: &[f64], y: &[u8], a: &[u8]) -> (f64, f64, Vec<u8>) {
    let cells: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(cy, ca)| masked_mean(ce, |i| y[i] == cy && a[i] == ca))
        .collect();
    let mut winner = 0;
    for k in 1..4 {
        if cells[k] > cells[winner] {
            winner = k;
        }
    }
    let runner_up = (0..4)
        .filter(|&k| k != winner)
        .map(|k| cells[k])
        .fold(f64::NEG_INFINITY, f64::max);
    (cells[winner], cells[winner] - runner_up, vec![winner as u8])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Penalty {
    None,
    Eo { conditional: bool },
    Ae,
    Mmf,
}

/// `CE + α·R` from logits, the distance to the nearest penalty kink and the
/// penalty's branch choices.
pub fn objective_oracle(
    z: &[[f64; 2]],
    y: &[u8],
    a: &[u8],
    penalty: Penalty,
    alpha: f64,
) -> (f64, f64, Vec<u8>) {
    let ce = ce_rows(z, y);
    let base = mean(&ce);
    let p: Vec<f64> = z.iter().map(|r| sigmoid(r[1] - r[0])).collect();
    let (r, margin, branch) = match penalty {
        Penalty::None => return (base, f64::INFINITY, Vec::new()),
        Penalty::Eo { conditional } => eo_oracle(&p, y, a, conditional),
        Penalty::Ae => ae_oracle(&p, y, a),
        Penalty::Mmf => mmf_oracle(&ce, y, a),
    };
    (base + alpha * r, margin, branch)
}

/// Plain MLP forward pass over a flat parameter vector laid out block by
/// block as row-major `W (in x out)` then `b`. Relu on every block but the
/// last. Returns logits, the smallest `|pre-activation|` of relu units and
/// the relu on/off pattern.
pub fn mlp_forward(dims: &[usize], theta: &[f64], x: &[Vec<f64>]) -> (Vec<[f64; 2]>, f64, Vec<u8>) {
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let mut off = 0;
    let mut closest = f64::INFINITY;
    let mut pattern = Vec::new();
    let blocks = dims.len() - 1;
    for k in 0..blocks {
        let (i, o) = (dims[k], dims[k + 1]);
        let w = &theta[off..off + i * o];
        let b = &theta[off + i * o..off + i * o + o];
        off += i * o + o;
        h = h
            .iter()
            .map(|row| {
                (0..o)
                    .map(|c| {
                        let mut s = b[c];
                        for (r, xv) in row.iter().enumerate() {
                            s += xv * w[r * o + c];
                        }
                        if k + 1 < blocks {
                            closest = closest.min(s.abs());
                            pattern.push(u8::from(s > 0.0));
                            s.max(0.0)
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
    }
    (h.iter().map(|r| [r[0], r[1]]).collect(), closest, pattern)
}

/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let up = f(&probe);
            probe[i] = theta[i] - h;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Richardson-extrapolated central differences
/// `(4·D(h/2) − D(h)) / 3` with `D(h) = (f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h`.
///
/// `f` also returns the branch choices (relu pattern, signs, argmax) taken
/// at its argument; `None` when any probe takes a different branch than
/// `theta`, i.e. the stencil straddles a kink.
pub fn richardson_diff(
    f: impl Fn(&[f64]) -> (f64, Vec<u8>),
    theta: &[f64],
    h: f64,
) -> Option<Vec<f64>> {
    let (_, branch) = f(theta);
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut at = |step: f64| {
            probe[i] = theta[i] + step;
            let (v, b) = f(&probe);
            probe[i] = theta[i];
            (b == branch).then_some(v)
        };
        let d1 = (at(h)? - at(-h)?) / (2.0 * h);
        let d2 = (at(h / 2.0)? - at(-h / 2.0)?) / h;
        out.push((4.0 * d2 - d1) / 3.0);
    }
    Some(out)
}

pub fn max_rel_err(g: &[f64], g_hat: &[f64]) -> f64 {
    g.iter()
        .zip(g_hat)
        .map(|(&u, &v)| (u - v).abs() / u.abs().max(v.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Labels and attributes of length `n` with every `(y, a)` cell populated.
pub fn random_cells(r: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    assert!(n >= 4);
    let mut y = vec![0, 0, 1, 1];
    let mut a = vec![0, 1, 0, 1];
    for _ in 4..n {
        y.push(r.random_range(0..2));
        a.push(r.random_range(0..2));
    }
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        y.swap(i, j);
        a.swap(i, j);
    }
    (y, a)
}

// ---- brute-force metric oracles ----

pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn count(p: &[f64], y: &[u8], keep: impl Fn(usize) -> bool, thr: f64) -> Counts {
    let mut c = Counts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for i in 0..p.len() {
        if !keep(i) {
            continue;
        }
        match (p[i] >= thr, y[i] == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub fn bacc_oracle(p: &[f64], y: &[u8], thr: f64) -> f64 {
    let c = count(p, y, |_| true, thr);
    let tpr = c.tp as f64 / (c.tp + c.fn_) as f64;
    let tnr = c.tn as f64 / (c.tn + c.fp) as f64;
    (tpr + tnr) / 2.0
}

/// Exhaustive pair count.
pub fn auc_oracle(p: &[f64], y: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..p.len() {
        for j in 0..p.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1;
                twice += if p[i] > p[j] {
                    2
                } else if p[i] == p[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn rates(c: &Counts) -> (f64, f64) {
    (
        c.tp as f64 / (c.tp + c.fn_) as f64,
        c.fp as f64 / (c.fp + c.tn) as f64,
    )
}

pub fn eo_diff_oracle(p: &[f64], y: &[u8], a: &[u8], thr: f64) -> f64 {
    let (t1, f1) = rates(&count(p, y, |i| a[i] == 1, thr));
    let (t0, f0) = rates(&count(p, y, |i| a[i] == 0, thr));
    (t1 - t0).abs().max((f1 - f0).abs())
}

pub fn ae_diff_oracle(p: &[f64], y: &[u8], a: &[u8], thr: f64) -> f64 {
    let err = |g: u8| {
        let c = count(p, y, |i| a[i] == g, thr);
        (c.fp + c.fn_) as f64 / (c.tp + c.fp + c.tn + c.fn_) as f64
    };
    (err(1) - err(0)).abs()
}

pub fn worst_accuracy_oracle(p: &[f64], y: &[u8], a: &[u8], thr: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for g in 0..2u8 {
        for cls in 0..2u8 {
            let c = count(p, y, |i| a[i] == g && y[i] == cls, thr);
            let acc = if cls == 1 {
                c.tp as f64 / (c.tp + c.fn_) as f64
            } else {
                c.tn as f64 / (c.tn + c.fp) as f64
            };
            worst = worst.min(acc);
        }
    }
    worst
}

/// ROC points by sweeping every distinct score as a threshold.
pub fn roc_sweep(p: &[f64], y: &[u8]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = p.to_vec();
    thresholds.sort_by(|u, v| v.total_cmp(u));
    thresholds.dedup();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = y.len() as f64 - pos;
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let c = count(p, y, |_| true, t);
        pts.push((c.fp as f64 / neg, c.tp as f64 / pos));
    }
    pts
}

/// Curve as a function of FPR: piecewise linear, upper value at jumps.
fn vertices(pts: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    // (fpr, lowest tpr, highest tpr) per distinct fpr
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for &(f, t) in pts {
        match out.last_mut() {
            Some(last) if last.0 == f => last.2 = last.2.max(t),
            _ => out.push((f, t, t)),
        }
    }
    out
}

fn eval_on(v: &[(f64, f64, f64)], x: f64) -> (f64, f64) {
    // value just to the right of x at segment start, and slope
    let k = v.iter().rposition(|p| p.0 <= x).unwrap();
    let (f0, _, hi) = v[k];
    let (f1, lo1, _) = v[k + 1];
    let slope = (lo1 - hi) / (f1 - f0);
    (hi + slope * (x - f0), slope)
}

/// Exact area between two ROC polylines.
pub fn abroca_exact(p: &[f64], y: &[u8], a: &[u8]) -> f64 {
    let split = |g: u8| {
        let (ps, ys): (Vec<f64>, Vec<u8>) = p
            .iter()
            .zip(y)
            .zip(a)
            .filter(|(_, &ai)| ai == g)
            .map(|((&pi, &yi), _)| (pi, yi))
            .unzip();
        vertices(&roc_sweep(&ps, &ys))
    };
    let (c0, c1) = (split(0), split(1));
    let mut xs: Vec<f64> = c0.iter().chain(&c1).map(|v| v.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (l, r) = (w[0], w[1]);
        let (v0, s0) = eval_on(&c0, l);
        let (v1, s1) = eval_on(&c1, l);
        let d_l = v0 - v1;
        let d_r = d_l + (s0 - s1) * (r - l);
        area += if d_l * d_r >= 0.0 {
            (d_l.abs() + d_r.abs()) / 2.0 * (r - l)
        } else {
            let cross = d_l.abs() / (d_l.abs() + d_r.abs()) * (r - l);
            d_l.abs() * cross / 2.0 + d_r.abs() * ((r - l) - cross) / 2.0
        };
    }
    area
}

/// Random scores with deliberate ties: values on a coarse grid.
pub fn tied_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = r.random_range(2..=12);
    (0..n)
        .map(|_| r.random_range(0..=levels) as f64 / levels as f64)
        .collect()
}
