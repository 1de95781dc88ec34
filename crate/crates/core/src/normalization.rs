//! 3-sigma price normalization in its three regimes.
//!
//! Every regime divides by three times the population standard deviation of
//! the historical segment. They differ only in the center:
//!
//! * `standard`: the historical mean `mu`;
//! * `eavesdrop`: the mean over the whole window, future included (a
//!   forward-biased diagnostic, never a tradable strategy);
//! * `hybrid`: a surrogate mean proposed by a learned network.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Relative floor applied to the scale so constant segments stay invertible.
pub const SCALE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormRegime {
    Standard,
    Eavesdrop,
    Hybrid,
}

impl NormRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            NormRegime::Standard => "standard",
            NormRegime::Eavesdrop => "eavesdrop",
            NormRegime::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for NormRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(NormRegime::Standard),
            "eavesdrop" => Ok(NormRegime::Eavesdrop),
            "hybrid" => Ok(NormRegime::Hybrid),
            other => Err(Error::invalid(format!(
                "unknown normalization regime `{other}` (expected standard|eavesdrop|hybrid)"
            ))),
        }
    }
}

/// Center and scale for one asset in one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub center: f64,
    pub scale: f64,
    pub regime: NormRegime,
}

fn floored_scale(three_sigma: f64, center: f64) -> f64 {
    three_sigma.max(SCALE_EPSILON * center.abs().max(1.0))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn fit_standard(historical: &[f64]) -> Result<NormStats> {
    if historical.len() < 2 {
        return Err(Error::invalid(format!(
            "3-sigma fit needs at least 2 historical values, got {}",
            historical.len()
        )));
    }
    let mu = mean(historical);
    let sigma = population_std(historical, mu);
    Ok(NormStats {
        center: mu,
        scale: floored_scale(3.0 * sigma, mu),
        regime: NormRegime::Standard,
    })
}

/// Whole-window center with the historical scale. Fails unless `allow_forward_bias`.
pub fn fit_eavesdrop(full: &[f64], hist_len: usize, allow_forward_bias: bool) -> Result<NormStats> {
    if !allow_forward_bias {
        return Err(Error::ForwardBias);
    }
    if full.len() < 2 || hist_len < 2 || hist_len > full.len() {
        return Err(Error::invalid(format!(
            "eavesdrop fit needs a window of at least 2 values and 2 <= h <= w (w={}, h={hist_len})",
            full.len()
        )));
    }
    let hist = &full[..hist_len];
    let sigma = population_std(hist, mean(hist));
    let m = mean(full);
    Ok(NormStats {
        center: m,
        scale: floored_scale(3.0 * sigma, m),
        regime: NormRegime::Eavesdrop,
    })
}

pub fn make_hybrid_stats(historical_scale: f64, proposed_center: f64) -> Result<NormStats> {
    if !proposed_center.is_finite() {
        return Err(Error::Numeric(format!(
            "proposed mean is not finite ({proposed_center})"
        )));
    }
    if !(historical_scale.is_finite() && historical_scale > 0.0) {
        return Err(Error::invalid(format!(
            "historical scale must be positive and finite, got {historical_scale}"
        )));
    }
    Ok(NormStats {
        center: proposed_center,
        scale: historical_scale,
        regime: NormRegime::Hybrid,
    })
}

pub fn normalize(series: &[f64], stats: &NormStats) -> Vec<f64> {
    series.iter().map(|p| (p - stats.center) / stats.scale).collect()
}

pub fn denormalize(series: &[f64], stats: &NormStats) -> Vec<f64> {
    series.iter().map(|q| q * stats.scale + stats.center).collect()
}

/// Per-asset standard stats for an `N x h` historical block.
pub fn fit_standard_rows(historical: ArrayView2<'_, f64>) -> Result<Vec<NormStats>> {
    historical
        .axis_iter(Axis(0))
        .map(|row| fit_standard(&row.to_vec()))
        .collect()
}

/// Per-asset eavesdrop stats for an `N x w` window.
pub fn fit_eavesdrop_rows(full: ArrayView2<'_, f64>, hist_len: usize, allow_forward_bias: bool) -> Result<Vec<NormStats>> {
    full.axis_iter(Axis(0))
        .map(|row| fit_eavesdrop(&row.to_vec(), hist_len, allow_forward_bias))
        .collect()
}

/// Hybrid stats from the standard fit's scale and one proposed center per asset.
pub fn hybrid_rows(standard: &[NormStats], proposed: &[f64]) -> Result<Vec<NormStats>> {
    if standard.len() != proposed.len() {
        return Err(Error::invalid(format!(
            "{} assets but {} proposed means",
            standard.len(),
            proposed.len()
        )));
    }
    standard
        .iter()
        .zip(proposed)
        .enumerate()
        .map(|(i, (s, &c))| {
            make_hybrid_stats(s.scale, c).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("asset {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

fn check_rows(n_rows: usize, stats: &[NormStats]) -> Result<()> {
    if n_rows != stats.len() {
        return Err(Error::invalid(format!(
            "{n_rows} asset rows but {} normalization stats",
            stats.len()
        )));
    }
    Ok(())
}

pub fn normalize_rows(x: ArrayView2<'_, f64>, stats: &[NormStats]) -> Result<Array2<f64>> {
    check_rows(x.nrows(), stats)?;
    let mut out = x.to_owned();
    for (mut row, s) in out.axis_iter_mut(Axis(0)).zip(stats) {
        row.mapv_inplace(|p| (p - s.center) / s.scale);
    }
    Ok(out)
}

pub fn denormalize_rows(x: ArrayView2<'_, f64>, stats: &[NormStats]) -> Result<Array2<f64>> {
    check_rows(x.nrows(), stats)?;
    let mut out = x.to_owned();
    for (mut row, s) in out.axis_iter_mut(Axis(0)).zip(stats) {
        row.mapv_inplace(|q| q * s.scale + s.center);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent statistics oracle: naive sums, no shared helpers.
    fn oracle_mean_std(xs: &[f64]) -> (f64, f64) {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        let m = s / xs.len() as f64;
        let mut v = 0.0;
        for x in xs {
            v += (x - m).powi(2);
        }
        (m, (v / xs.len() as f64).sqrt())
    }

    #[test]
    fn standard_fit_examples() {
        let s = fit_standard(&[10.0, 10.0, 10.0, 10.0]).unwrap();
        assert_eq!(s.center, 10.0);
        assert_eq!(s.scale, SCALE_EPSILON * 10.0);

        let s = fit_standard(&[1.0, 3.0]).unwrap();
        let (m, sd) = oracle_mean_std(&[1.0, 3.0]);
        assert_eq!((m, sd), (2.0, 1.0));
        assert_eq!(s.center, 2.0);
        assert_eq!(s.scale, 3.0);
        assert_eq!(s.regime, NormRegime::Standard);

        assert!(fit_standard(&[1.0]).is_err());
    }

    #[test]
    fn eavesdrop_fit_examples() {
        // historical [9, 11] (mean 10, sigma 1), whole window mean 12
        let full = [9.0, 11.0, 14.0, 14.0];
        let s = fit_eavesdrop(&full, 2, true).unwrap();
        assert_eq!(s.center, 12.0);
        assert_eq!(s.scale, 3.0);
        assert_eq!(s.regime, NormRegime::Eavesdrop);

        let s = fit_eavesdrop(&[5.0; 6], 4, true).unwrap();
        assert_eq!(s.center, 5.0);
        assert_eq!(s.scale, SCALE_EPSILON * 5.0);

        assert!(matches!(fit_eavesdrop(&full, 2, false), Err(Error::ForwardBias)));
        assert!(fit_eavesdrop(&[1.0], 1, true).is_err());
    }

    #[test]
    fn normalize_examples() {
        let s = NormStats {
            center: 10.0,
            scale: 6.0,
            regime: NormRegime::Standard,
        };
        assert_eq!(normalize(&[10.0, 16.0, 4.0], &s), vec![0.0, 1.0, -1.0]);
        assert_eq!(denormalize(&[0.0, 1.0], &s), vec![10.0, 16.0]);
    }

    #[test]
    fn hybrid_reductions() {
        let full = [9.0, 11.0, 14.0, 14.0];
        let std = fit_standard(&full[..2]).unwrap();
        let eav = fit_eavesdrop(&full, 2, true).unwrap();
        let h = make_hybrid_stats(std.scale, std.center).unwrap();
        assert_eq!((h.center, h.scale), (std.center, std.scale));
        let h = make_hybrid_stats(std.scale, eav.center).unwrap();
        assert_eq!((h.center, h.scale), (eav.center, eav.scale));
        assert!(make_hybrid_stats(std.scale, f64::NAN).unwrap_err().is_numeric());
        let err = hybrid_rows(&[std, std], &[1.0, f64::INFINITY]).unwrap_err();
        assert!(err.to_string().contains("asset 1"), "{err}");
    }

    #[test]
    fn regime_names_round_trip() {
        for r in [NormRegime::Standard, NormRegime::Eavesdrop, NormRegime::Hybrid] {
            assert_eq!(r.as_str().parse::<NormRegime>().unwrap(), r);
        }
        assert!("minmax".parse::<NormRegime>().is_err());
    }

    proptest! {
        #[test]
        fn standard_normalized_history_is_centered(xs in prop::collection::vec(1.0f64..500.0, 2..64)) {
            let s = fit_standard(&xs).unwrap();
            let z = normalize(&xs, &s);
            let (m, _) = oracle_mean_std(&z);
            prop_assert!(m.abs() < 1e-12);
            let back = denormalize(&z, &s);
            for (a, b) in xs.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs());
            }
        }

        #[test]
        fn rows_are_independent(a in prop::collection::vec(1.0f64..50.0, 8), b in prop::collection::vec(1.0f64..50.0, 8), c in prop::collection::vec(1.0f64..50.0, 8)) {
            let x1 = Array2::from_shape_fn((2, 8), |(i, t)| if i == 0 { a[t] } else { b[t] });
            let x2 = Array2::from_shape_fn((2, 8), |(i, t)| if i == 0 { a[t] } else { c[t] });
            let s1 = fit_standard_rows(x1.view()).unwrap();
            let s2 = fit_standard_rows(x2.view()).unwrap();
            prop_assert_eq!(s1[0], s2[0]);
            let n1 = normalize_rows(x1.view(), &s1).unwrap();
            let n2 = normalize_rows(x2.view(), &s2).unwrap();
            prop_assert_eq!(n1.row(0), n2.row(0));
        }
    }
}
