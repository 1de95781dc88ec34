use ndarray::{concatenate, Axis};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{MlpNetwork, Mode, Role};
use crate::rng::{stream_rng, Rng, Stream};

/// The adversarial networks of one model. `decoder` is present for the
/// autoencoding kinds only.
#[derive(Debug, Clone, PartialEq)]
pub struct GanNets {
    pub conditioner: MlpNetwork,
    pub decoder: Option<MlpNetwork>,
    pub simulator: MlpNetwork,
    pub discriminator: MlpNetwork,
}

/// Parameters of [`GanNets`] placed on one tape.
pub struct Bound<'t> {
    pub conditioner: Vec<Var<'t>>,
    pub decoder: Option<Vec<Var<'t>>>,
    pub simulator: Vec<Var<'t>>,
    pub discriminator: Vec<Var<'t>>,
}

impl GanNets {
    /// Binds the generator side (conditioner, decoder, simulator) and the
    /// critic with independent trainability.
    pub fn bind<'t>(&self, tape: &'t Tape, train_generator: bool, train_critic: bool) -> Bound<'t> {
        Bound {
            conditioner: self.conditioner.bind(tape, train_generator),
            decoder: self.decoder.as_ref().map(|d| d.bind(tape, train_generator)),
            simulator: self.simulator.bind(tape, train_generator),
            discriminator: self.discriminator.bind(tape, train_critic),
        }
    }
}

/// Dropout streams, one per network that has dropout.
#[derive(Debug, Clone)]
pub struct DropoutRngs {
    pub conditioner: Rng,
    pub decoder: Rng,
    pub discriminator: Rng,
}

impl DropoutRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            conditioner: stream_rng(seed, Stream::Dropout(Role::Conditioner.index())),
            decoder: stream_rng(seed, Stream::Dropout(Role::Decoder.index())),
            discriminator: stream_rng(seed, Stream::Dropout(Role::Discriminator.index())),
        }
    }
}

/// A batch of normalized windows, flattened asset-major, one window per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub hist: Matrix,
    pub future: Matrix,
}

impl Batch {
    /// Builds a batch from `N x w` normalized windows.
    pub fn from_windows(windows: &[&Matrix], hist_len: usize) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (n, w) = first.dim();
        if hist_len == 0 || hist_len >= w {
            return Err(Error::invalid(format!("history length {hist_len} does not fit window width {w}")));
        }
        let f = w - hist_len;
        let mut hist = Matrix::zeros((windows.len(), n * hist_len));
        let mut future = Matrix::zeros((windows.len(), n * f));
        for (r, win) in windows.iter().enumerate() {
            if win.dim() != (n, w) {
                return Err(Error::Shape {
                    op: "batch window",
                    lhs: [win.nrows(), win.ncols()],
                    rhs: [n, w],
                });
            }
            for a in 0..n {
                for t in 0..hist_len {
                    hist[[r, a * hist_len + t]] = win[[a, t]];
                }
                for t in 0..f {
                    future[[r, a * f + t]] = win[[a, hist_len + t]];
                }
            }
        }
        Ok(Self { hist, future })
    }

    pub fn rows(&self) -> usize {
        self.hist.nrows()
    }

    /// Real critic input `[hist | future]`.
    pub fn real(&self) -> Matrix {
        concatenate(Axis(1), &[self.hist.view(), self.future.view()]).expect("batch parts share row count")
    }
}

/// Runs conditioner then simulator: returns `(code, generated future)`.
pub fn generate<'t>(
    nets: &GanNets,
    bound: &Bound<'t>,
    hist: Var<'t>,
    z: Var<'t>,
    rngs: &mut DropoutRngs,
) -> Result<(Var<'t>, Var<'t>)> {
    let code = nets
        .conditioner
        .forward(&bound.conditioner, hist, &mut Mode::Train(&mut rngs.conditioner))?;
    let fake = nets
        .simulator
        .forward(&bound.simulator, z.concat_cols(code)?, &mut Mode::Infer)?;
    Ok((code, fake))
}

/// `(||grad_x D(x_bar)||_2 - 1)^2` averaged over rows, where
/// `x_bar = eps * real + (1 - eps) * fake` row by row. The result stays
/// differentiable with respect to the critic parameters.
pub fn gradient_penalty<'t>(
    tape: &'t Tape,
    discriminator: &MlpNetwork,
    bound: &[Var<'t>],
    real: &Matrix,
    fake: &Matrix,
    eps: &[f64],
    mode: &mut Mode<'_>,
) -> Result<Var<'t>> {
    if real.dim() != fake.dim() {
        return Err(Error::Shape {
            op: "gradient_penalty",
            lhs: [real.nrows(), real.ncols()],
            rhs: [fake.nrows(), fake.ncols()],
        });
    }
    if eps.len() != real.nrows() {
        return Err(Error::invalid(format!(
            "gradient_penalty: {} interpolation draws for {} rows",
            eps.len(),
            real.nrows()
        )));
    }
    let mut x_bar = fake.clone();
    for ((mut row, r), &e) in x_bar.rows_mut().into_iter().zip(real.rows()).zip(eps) {
        row.zip_mut_with(&r, |f, &r| *f = e * r + (1.0 - e) * *f);
    }
    let x = tape.param(x_bar);
    let score = discriminator.forward(bound, x, mode)?.sum()?;
    let grad = tape.gradient(score, &[x], true)?[0];
    grad.l2_norm_rows()?.add_scalar(-1.0)?.square()?.mean()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLoss {
    /// `D(real) - D(fake) - lambda1 * penalty`, the quantity the critic ascends.
    pub objective: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// The critic objective as a tape value, together with its parts.
pub fn critic_losses<'t>(
    tape: &'t Tape,
    nets: &GanNets,
    bound: &Bound<'t>,
    batch: &Batch,
    z: &Matrix,
    eps: &[f64],
    lambda1: f64,
    rngs: &mut DropoutRngs,
) -> Result<(Var<'t>, CriticLoss)> {
    let hist = tape.constant(batch.hist.clone());
    let (_, fake_future) = generate(nets, bound, hist, tape.constant(z.clone()), rngs)?;
    let real_m = batch.real();
    let fake = hist.concat_cols(fake_future)?;
    let fake_m = fake.value().as_ref().clone();

    let disc = &nets.discriminator;
    let d_real = disc
        .forward(&bound.discriminator, tape.constant(real_m.clone()), &mut Mode::Train(&mut rngs.discriminator))?
        .mean()?;
    let d_fake = disc
        .forward(&bound.discriminator, fake, &mut Mode::Train(&mut rngs.discriminator))?
        .mean()?;
    let penalty = gradient_penalty(
        tape,
        disc,
        &bound.discriminator,
        &real_m,
        &fake_m,
        eps,
        &mut Mode::Train(&mut rngs.discriminator),
    )?;
    let wasserstein = d_real.sub(d_fake)?;
    let objective = wasserstein.sub(penalty.scale(lambda1)?)?;
    let parts = CriticLoss {
        objective: objective.item(),
        wasserstein: wasserstein.item(),
        penalty: penalty.item(),
    };
    Ok((objective, parts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    /// `-D(fake)` averaged over the batch.
    pub adversarial: f64,
    /// Reconstruction MSE of the decoder, unweighted; zero without a decoder.
    pub ap: f64,
    /// `adversarial + lambda2 * ap`, the quantity the generator descends.
    pub total: f64,
}

/// The generator loss as a tape value, together with its parts.
pub fn generator_losses<'t>(
    tape: &'t Tape,
    nets: &GanNets,
    bound: &Bound<'t>,
    batch: &Batch,
    z: &Matrix,
    lambda2: f64,
    rngs: &mut DropoutRngs,
) -> Result<(Var<'t>, GeneratorLoss)> {
    let hist = tape.constant(batch.hist.clone());
    let (code, fake_future) = generate(nets, bound, hist, tape.constant(z.clone()), rngs)?;
    let score = nets
        .discriminator
        .forward(
            &bound.discriminator,
            hist.concat_cols(fake_future)?,
            &mut Mode::Train(&mut rngs.discriminator),
        )?
        .mean()?;
    let adversarial = score.neg()?;
    let (total, ap) = match (&nets.decoder, &bound.decoder) {
        (Some(dec), Some(dec_params)) => {
            let recon = dec.forward(dec_params, code, &mut Mode::Train(&mut rngs.decoder))?;
            let ap = recon.sub(hist)?.square()?.mean()?;
            (adversarial.add(ap.scale(lambda2)?)?, ap.item())
        }
        _ => (adversarial, 0.0),
    };
    let parts = GeneratorLoss {
        adversarial: adversarial.item(),
        ap,
        total: total.item(),
    };
    Ok((total, parts))
}
