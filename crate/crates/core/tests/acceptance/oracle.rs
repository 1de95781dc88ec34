//! Double-double re-evaluation of the training losses. Central differences of
//! these are limited by truncation rather than f64 rounding, which matters for
//! gradient entries far below the loss magnitude.
//!
//! twofloat supplies exact add and multiply; its division and tanh are only
//! f64-accurate, so both are done here.

use hybridgan::autodiff::Matrix;
use hybridgan::gan::{Batch, DropoutRngs, GanNets};
use hybridgan::nn::{LayerSpec, MlpNetwork};
use hybridgan::rng::Rng;
use rand::Rng as _;
use twofloat::TwoFloat;

pub type D = TwoFloat;

/// Division refined by two Newton corrections.
pub fn div(a: D, b: D) -> D {
    let q0 = a.hi() / b.hi();
    let r = a - b * q0;
    let q1 = r.hi() / b.hi();
    let r = r - b * q1;
    let q2 = r.hi() / b.hi();
    D::new_add(q0, q1) + q2
}

fn exp(x: D) -> D {
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - twofloat::consts::LN_2 * k) * (1.0 / 1024.0);
    let mut term = D::from(1.0);
    let mut sum = D::from(1.0);
    for n in 1..=12 {
        term = div(term * r, D::from(n as f64));
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

pub fn tanh(x: D) -> D {
    let neg = x.hi() < 0.0;
    let e = exp(if neg { x * 2.0 } else { x * -2.0 });
    let t = div(D::from(1.0) - e, D::from(1.0) + e);
    if neg {
        -t
    } else {
        t
    }
}

/// Row-major matrix of double-doubles.
#[derive(Debug, Clone)]
pub struct DMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<D>,
}

impl DMat {
    pub fn from_f64(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&v| D::from(v)).collect(),
        }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![D::from(0.0); rows * cols],
        }
    }

    fn at(&self, r: usize, c: usize) -> D {
        self.data[r * self.cols + c]
    }

    fn concat_cols(&self, other: &DMat) -> DMat {
        let mut out = DMat::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * out.cols + c] = self.at(r, c);
            }
            for c in 0..other.cols {
                out.data[r * out.cols + self.cols + c] = other.at(r, c);
            }
        }
        out
    }

    pub fn mean(&self) -> D {
        let mut s = D::from(0.0);
        for v in &self.data {
            s += *v;
        }
        div(s, D::from(self.data.len() as f64))
    }
}

enum Step {
    Affine(usize),
    Leaky(DMat, f64),
    Drop(Vec<f64>),
    Tanh(DMat),
    Scale(f64),
}

/// `x W + b` with `W` stored `in x out`.
fn affine(x: &DMat, w: &DMat, b: &DMat) -> DMat {
    let mut out = DMat::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        let row = &mut out.data[r * w.cols..(r + 1) * w.cols];
        row.copy_from_slice(&b.data);
        for i in 0..x.cols {
            let xi = x.at(r, i);
            for (o, wij) in row.iter_mut().zip(&w.data[i * w.cols..(i + 1) * w.cols]) {
                *o += xi * *wij;
            }
        }
    }
    out
}

/// Forward pass of `net`'s layer stack on parameters `p`. Dropout masks are
/// drawn from `rng` exactly as the library draws them; `None` skips dropout.
fn forward(net: &MlpNetwork, p: &[DMat], x: DMat, mut rng: Option<&mut Rng>) -> (DMat, Vec<Step>) {
    let mut h = x;
    let mut k = 0;
    let mut steps = Vec::new();
    for layer in net.layers() {
        match *layer {
            LayerSpec::Affine { .. } => {
                h = affine(&h, &p[k], &p[k + 1]);
                steps.push(Step::Affine(k));
                k += 2;
            }
            LayerSpec::LeakyRelu(s) => {
                let pre = h.clone();
                for v in h.data.iter_mut() {
                    if v.hi() <= 0.0 {
                        *v = *v * s;
                    }
                }
                steps.push(Step::Leaky(pre, s));
            }
            LayerSpec::Tanh => {
                h.data.iter_mut().for_each(|v| *v = tanh(*v));
                steps.push(Step::Tanh(h.clone()));
            }
            LayerSpec::Scale(c) => {
                h.data.iter_mut().for_each(|v| *v = *v * c);
                steps.push(Step::Scale(c));
            }
            LayerSpec::Dropout(rate) => {
                if let Some(rng) = rng.as_deref_mut() {
                    let factor = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..h.data.len())
                        .map(|_| if rng.random::<f64>() >= rate { factor } else { 0.0 })
                        .collect();
                    for (v, m) in h.data.iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    steps.push(Step::Drop(mask));
                }
            }
        }
    }
    (h, steps)
}

/// Gradient of the summed (single-column) output with respect to the input.
fn input_gradient(p: &[DMat], steps: &[Step], rows: usize) -> DMat {
    let mut g = DMat {
        rows,
        cols: 1,
        data: vec![D::from(1.0); rows],
    };
    for step in steps.iter().rev() {
        match step {
            Step::Affine(k) => {
                let w = &p[*k];
                let mut out = DMat::zeros(rows, w.rows);
                for r in 0..rows {
                    for i in 0..w.rows {
                        let mut s = D::from(0.0);
                        for j in 0..w.cols {
                            s += g.at(r, j) * w.at(i, j);
                        }
                        out.data[r * w.rows + i] = s;
                    }
                }
                g = out;
            }
            Step::Leaky(pre, s) => {
                for (v, z) in g.data.iter_mut().zip(&pre.data) {
                    if z.hi() <= 0.0 {
                        *v = *v * *s;
                    }
                }
            }
            Step::Drop(mask) => {
                for (v, m) in g.data.iter_mut().zip(mask) {
                    *v = *v * *m;
                }
            }
            Step::Tanh(y) => {
                for (v, t) in g.data.iter_mut().zip(&y.data) {
                    *v = *v * (D::from(1.0) - *t * *t);
                }
            }
            Step::Scale(c) => g.data.iter_mut().for_each(|v| *v = *v * *c),
        }
    }
    g
}

/// Splits parameters laid out as conditioner, simulator, decoder, critic.
fn split<'a>(nets: &GanNets, flat: &'a [DMat]) -> [&'a [DMat]; 4] {
    let nc = nets.conditioner.params().len();
    let ns = nets.simulator.params().len();
    let nd = nets.decoder.as_ref().map_or(0, |d| d.params().len());
    [
        &flat[..nc],
        &flat[nc..nc + ns],
        &flat[nc + ns..nc + ns + nd],
        &flat[nc + ns + nd..],
    ]
}

fn generate(nets: &GanNets, p: [&[DMat]; 4], batch: &Batch, z: &Matrix, rngs: &mut DropoutRngs) -> (DMat, DMat, DMat) {
    let hist = DMat::from_f64(&batch.hist);
    let (code, _) = forward(&nets.conditioner, p[0], hist.clone(), Some(&mut rngs.conditioner));
    let (future, _) = forward(&nets.simulator, p[1], DMat::from_f64(z).concat_cols(&code), None);
    (hist, code, future)
}

/// `D(real) - D(fake) - lambda1 * penalty` with the library's dropout streams.
pub fn critic_objective(
    nets: &GanNets,
    flat: &[DMat],
    batch: &Batch,
    z: &Matrix,
    eps: &[f64],
    lambda1: f64,
    seed: u64,
) -> D {
    let p = split(nets, flat);
    let mut rngs = DropoutRngs::new(seed);
    let (hist, _, future) = generate(nets, p, batch, z, &mut rngs);
    let real = DMat::from_f64(&batch.real());
    let fake = hist.concat_cols(&future);
    let disc = &nets.discriminator;
    let d_real = forward(disc, p[3], real.clone(), Some(&mut rngs.discriminator)).0.mean();
    let d_fake = forward(disc, p[3], fake.clone(), Some(&mut rngs.discriminator)).0.mean();

    let mut x_bar = fake;
    for r in 0..x_bar.rows {
        for c in 0..x_bar.cols {
            let e = eps[r];
            let k = r * x_bar.cols + c;
            x_bar.data[k] = real.data[k] * e + x_bar.data[k] * (1.0 - e);
        }
    }
    let rows = x_bar.rows;
    let (_, steps) = forward(disc, p[3], x_bar, Some(&mut rngs.discriminator));
    let g = input_gradient(p[3], &steps, rows);
    let mut penalty = DMat::zeros(rows, 1);
    for r in 0..rows {
        let mut sq = D::from(0.0);
        for c in 0..g.cols {
            sq += g.at(r, c) * g.at(r, c);
        }
        let dev = sq.sqrt() - 1.0;
        penalty.data[r] = dev * dev;
    }
    d_real - d_fake - penalty.mean() * lambda1
}

/// `-D(fake) + lambda2 * AP` with the library's dropout streams.
pub fn generator_loss(nets: &GanNets, flat: &[DMat], batch: &Batch, z: &Matrix, lambda2: f64, seed: u64) -> D {
    let p = split(nets, flat);
    let mut rngs = DropoutRngs::new(seed);
    let (hist, code, future) = generate(nets, p, batch, z, &mut rngs);
    let score = forward(&nets.discriminator, p[3], hist.concat_cols(&future), Some(&mut rngs.discriminator))
        .0
        .mean();
    let mut total = -score;
    if let Some(dec) = &nets.decoder {
        let (mut recon, _) = forward(dec, p[2], code, Some(&mut rngs.decoder));
        for (v, h) in recon.data.iter_mut().zip(&hist.data) {
            let d = *v - *h;
            *v = d * d;
        }
        total += recon.mean() * lambda2;
    }
    total
}

/// Squared error of `mu + scale * P(x)` against `target`.
pub fn proposer_loss(net: &MlpNetwork, p: &[DMat], x: &Matrix, mu: &Matrix, scale: &Matrix, target: &Matrix, rng: &mut Rng) -> D {
    let (mut delta, _) = forward(net, p, DMat::from_f64(x), Some(rng));
    for (k, v) in delta.data.iter_mut().enumerate() {
        let (r, c) = (k / mu.ncols(), k % mu.ncols());
        let d = *v * scale[[r, c]] + mu[[r, c]] - target[[r, c]];
        *v = d * d;
    }
    delta.mean()
}
