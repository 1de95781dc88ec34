use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected moment accumulators for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let zeros: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.raw_dim())).collect();
        Self {
            config,
            step_count: 0,
            second_moment: zeros.clone(),
            first_moment: zeros,
        }
    }
}

/// One Adam update. Parameters and state are left untouched when any gradient is non-finite.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Matrix>,
    grads: &[Matrix],
    state: &mut AdamState,
) -> Result<()> {
    let mut params: Vec<&mut Matrix> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: [p.nrows(), p.ncols()],
                rhs: [g.nrows(), g.ncols()],
            });
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "adam: non-finite gradient ({bad}) in parameter tensor {k} at step {}",
                state.step_count + 1
            )));
        }
    }

    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let inv_bc1 = 1.0 / (1.0 - beta1.powi(t));
    let inv_bc2 = 1.0 / (1.0 - beta2.powi(t));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .map(|p| &mut **p)
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m * inv_bc1;
            let v_hat = *v * inv_bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        };
        match (p.as_slice_mut(), g.as_slice(), m.as_slice_mut(), v.as_slice_mut()) {
            (Some(p), Some(g), Some(m), Some(v)) => {
                for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    update(p, g, m, v);
                }
            }
            _ => ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| update(p, g, m, v)),
        }
    }
    Ok(())
}
