//! Differentiable loss terms built on the autodiff graph.

use serde::{Deserialize, Serialize};

use crate::metrics::SQ_DIST_FLOOR;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Scalar values of every loss term of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fwd: f64,
    pub l_kl_fwd: f64,
    pub l_kl_bwd: f64,
    pub l_msmd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_fwd: f64, l_kl_fwd: f64, l_kl_bwd: f64, l_msmd: f64) -> Self {
        Self {
            l_fwd,
            l_kl_fwd,
            l_kl_bwd,
            l_msmd,
            total: l_fwd + l_kl_fwd + l_kl_bwd + l_msmd,
        }
    }
}

/// Graph nodes of the three generation-side terms.
#[derive(Debug, Clone, Copy)]
pub struct BackwardTerms {
    pub kl_fwd: Var,
    pub kl_bwd: Var,
    pub msmd: Var,
}

fn check_dims(g: &Graph, what: &str, a: Var, b: Var) -> Result<(usize, usize, usize)> {
    let (n, d) = g.value(a).require_matrix("loss")?;
    let (m, d2) = g.value(b).require_matrix("loss")?;
    if d != d2 {
        return Err(Error::InvalidInput(format!(
            "{what}: dimension mismatch {d} vs {d2}"
        )));
    }
    Ok((n, m, d))
}

/// Squared error `|y_hat − y|²` averaged over rows.
pub fn forward_loss(g: &mut Graph, y_hat: Var, y: Var) -> Result<Var> {
    let (n, m, _) = check_dims(g, "forward loss", y_hat, y)?;
    if n != m {
        return Err(Error::InvalidInput(format!(
            "forward loss: {n} predictions for {m} labels"
        )));
    }
    let diff = g.sub(y_hat, y)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Mean squared distance from each row of `s1` to its nearest row of `s2`.
pub fn msmd(g: &mut Graph, s1: Var, s2: Var) -> Result<Var> {
    check_dims(g, "MSMD", s1, s2)?;
    let d = g.pairwise_sq_dists(s1, s2)?;
    let nearest = g.min_over_rows(d)?;
    Ok(g.mean(nearest))
}

/// kNN estimate of `KL(P ‖ Q)`; differentiable in both clouds through the
/// selected neighbor distances.
pub fn knn_kl(g: &mut Graph, p: Var, q: Var, k: usize) -> Result<Var> {
    let (n, m, d) = check_dims(g, "KL", p, q)?;
    if k == 0 || n <= k || m < k {
        return Err(Error::Metric {
            metric: "KL",
            detail: format!("need n > k and m >= k, got n = {n}, m = {m}, k = {k}"),
        });
    }
    // the zero self-distance is the smallest entry of every row of d(P, P)
    let within = g.pairwise_sq_dists(p, p)?;
    let rho2 = g.kth_smallest_over_rows(within, k + 1)?;
    let across = g.pairwise_sq_dists(p, q)?;
    let nu2 = g.kth_smallest_over_rows(across, k)?;
    let rho2 = g.clamp_min(rho2, SQ_DIST_FLOOR);
    let nu2 = g.clamp_min(nu2, SQ_DIST_FLOOR);
    let log_nu = g.log(nu2)?;
    let log_rho = g.log(rho2)?;
    let ratio = g.sub(log_nu, log_rho)?;
    let total = g.sum(ratio);
    let scaled = g.scale(total, 0.5 * d as f64 / n as f64);
    Ok(g.add_scalar(scaled, (m as f64 / (n - 1) as f64).ln()))
}

/// KL in both directions and MSMD between a generated and a real cloud.
pub fn backward_loss(g: &mut Graph, generated: Var, real: Var, k: usize) -> Result<BackwardTerms> {
    Ok(BackwardTerms {
        kl_fwd: knn_kl(g, real, generated, k)?,
        kl_bwd: knn_kl(g, generated, real, k)?,
        msmd: msmd(g, generated, real)?,
    })
}

/// `l_fwd + kl_fwd + kl_bwd + msmd`, summed in that order so the graph
/// value equals [`LossBreakdown::total`].
pub fn total_loss(
    g: &mut Graph,
    l_fwd: Var,
    terms: &BackwardTerms,
) -> Result<(Var, LossBreakdown)> {
    let a = g.add(l_fwd, terms.kl_fwd)?;
    let b = g.add(a, terms.kl_bwd)?;
    let total = g.add(b, terms.msmd)?;
    let breakdown = LossBreakdown::new(
        g.value(l_fwd).item(),
        g.value(terms.kl_fwd).item(),
        g.value(terms.kl_bwd).item(),
        g.value(terms.msmd).item(),
    );
    Ok((total, breakdown))
}
