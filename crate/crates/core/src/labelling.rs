//! Sparse pixel selection for human and pseudo labels.
//!
//! Both selectors first restrict to a top-β% pool (highest region impurity
//! for human queries, lowest map uncertainty for pseudo labels) and then draw
//! α pixels uniformly without replacement from that pool. Ties are broken by
//! row-major pixel index everywhere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabellingConfig {
    /// Pixels drawn per image.
    pub alpha: usize,
    /// Size of the candidate pool as a percentage of the image.
    pub beta_percent: f64,
    /// Half-width of the impurity window.
    pub impurity_radius: usize,
    pub rng_seed: u64,
}

impl Default for LabellingConfig {
    fn default() -> Self {
        Self { alpha: 4, beta_percent: 5.0, impurity_radius: 3, rng_seed: 0 }
    }
}

impl LabellingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::InvalidConfig { field: field.into(), reason });
        if self.alpha == 0 {
            return bad("labelling.alpha", "must be at least 1".into());
        }
        if !(self.beta_percent > 0.0 && self.beta_percent <= 100.0) {
            return bad("labelling.beta_percent", format!("must be in (0, 100], got {}", self.beta_percent));
        }
        if self.impurity_radius == 0 {
            return bad("labelling.impurity_radius", "must be at least 1".into());
        }
        Ok(())
    }

    /// `⌈β/100 · n⌉`, at least one pixel when `n > 0`.
    pub fn pool_cap(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        // beta * n is exact for integral percentages; the epsilon absorbs
        // representation error for fractional ones.
        let cap = (self.beta_percent * n as f64 / 100.0 - 1e-9).ceil() as usize;
        cap.clamp(1, n)
    }
}

/// Number of distinct classes in the `(2r+1)²` window around each pixel,
/// clipped at the image border.
pub fn region_impurity(labels: &[usize], side: usize, radius: usize) -> Result<Vec<u32>> {
    if radius == 0 {
        return Err(Error::InvalidRadius);
    }
    if labels.len() != side * side {
        return Err(Error::DimensionMismatch { expected: side * side, actual: labels.len() });
    }
    let mut seen: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(labels.len());
    for r in 0..side {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(side));
        for c in 0..side {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(side));
            seen.clear();
            for wr in r0..r1 {
                for &l in &labels[wr * side + c0..wr * side + c1] {
                    if !seen.contains(&l) {
                        seen.push(l);
                    }
                }
            }
            out.push(seen.len() as u32);
        }
    }
    Ok(out)
}

/// Pixel indices of the human-label pool, best first.
///
/// The pool holds the `⌈β%⌉` most impure pixels, widened down the ranking
/// until it has at least `alpha` members.
pub fn human_pool(impurity: &[u32], config: &LabellingConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..impurity.len()).collect();
    order.sort_by(|&a, &b| impurity[b].cmp(&impurity[a]).then(a.cmp(&b)));
    order.truncate(config.pool_cap(impurity.len()).max(config.alpha).min(impurity.len()));
    order
}

/// Pixel indices of the pseudo-label pool, most certain first.
pub fn pseudo_pool(uncertainty: &[f64], valid: &[bool], config: &LabellingConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..uncertainty.len()).filter(|&i| valid[i]).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    order.truncate(config.pool_cap(order.len()));
    order
}

fn draw<R: Rng + ?Sized>(pool: &[usize], amount: usize, side: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), amount.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| (i / side, i % side)).collect()
}

/// Human label queries on the model's predicted labels of one image.
/// Returns exactly `alpha` pixels as `(row, col)` in row-major order.
pub fn select_human_pixels<R: Rng + ?Sized>(
    pred_labels: &[usize],
    side: usize,
    config: &LabellingConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let n = side * side;
    if config.alpha > n {
        return Err(Error::TooFewPixels { alpha: config.alpha, pixels: n });
    }
    let impurity = region_impurity(pred_labels, side, config.impurity_radius)?;
    let pool = human_pool(&impurity, config);
    Ok(draw(&pool, config.alpha, side, rng))
}

/// Pseudo-label pixels from a rendered map patch. Best effort: returns
/// `min(alpha, pool size)` pixels, none when nothing is valid.
pub fn select_pseudo_pixels<R: Rng + ?Sized>(
    uncertainty: &[f64],
    valid: &[bool],
    side: usize,
    config: &LabellingConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let n = side * side;
    if uncertainty.len() != n || valid.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: uncertainty.len().min(valid.len()) });
    }
    let pool = pseudo_pool(uncertainty, valid, config);
    Ok(draw(&pool, config.alpha, side, rng))
}
