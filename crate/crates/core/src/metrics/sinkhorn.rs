//! Debiased entropic optimal transport between uniform empirical measures.
//!
//! Log-domain symmetric Sinkhorn iterations with ε-annealing from the
//! squared cloud diameter down to `blur^p`, followed by extra iterations at
//! the target temperature and a final extrapolation step. The returned
//! divergence is `OT(a,b) − ½OT(a,a) − ½OT(b,b)` with cost `|x − y|^p`.

use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub blur: f64,
    /// ε shrinks by `scaling^p` per annealing step.
    pub scaling: f64,
    /// Cap on the extra iterations run at the final temperature.
    pub max_final_iters: usize,
    /// Further cap on those iterations, in cost-matrix entries visited.
    pub max_final_work: f64,
    /// Stop the final iterations once no potential moves more than
    /// `tolerance · ε`.
    pub tolerance: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            blur: 0.05,
            scaling: 0.7,
            max_final_iters: 1000,
            max_final_work: 2e9,
            tolerance: 1e-3,
        }
    }
}

struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    fn new(a: &PointCloud, b: &PointCloud, p: u32) -> Self {
        let mut data = crate::tensor::pairwise_sq_dists_raw(a.data(), b.data(), a.dim());
        if p == 1 {
            for c in &mut data {
                *c = c.sqrt();
            }
        }
        Self {
            rows: a.len(),
            cols: b.len(),
            data,
        }
    }

    fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// `out_i = −ε log Σ_j exp(h_j − C_ij / ε)`
    fn softmin(&self, eps: f64, h: &[f64]) -> Vec<f64> {
        let inv = 1.0 / eps;
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                let mut m = f64::NEG_INFINITY;
                for (c, hj) in row.iter().zip(h) {
                    m = m.max(hj - c * inv);
                }
                -eps * (m + sum_exp_shifted(row, h, inv, m).ln())
            })
            .collect()
    }
}

/// `Σ_j exp(h_j − c_j·inv − m)` with four independent accumulators so the
/// loop vectorizes.
fn sum_exp_shifted(row: &[f64], h: &[f64], inv: f64, m: f64) -> f64 {
    let mut acc = [0.0; 4];
    let rc = row.chunks_exact(4);
    let hc = h.chunks_exact(4);
    let (rr, hr) = (rc.remainder(), hc.remainder());
    for (c, hh) in rc.zip(hc) {
        for l in 0..4 {
            acc[l] += exp_fast(hh[l] - c[l] * inv - m);
        }
    }
    let tail: f64 = rr
        .iter()
        .zip(hr)
        .map(|(c, hj)| exp_fast(hj - c * inv - m))
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Branch-free `exp` for arguments `≤ 0` (relative error below 1e-14);
/// results under `e^-708` flush to that value.
#[inline(always)]
fn exp_fast(x: f64) -> f64 {
    const MAGIC: f64 = 6755399441055744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 0.0);
    let t = x * std::f64::consts::LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = x - n * LN2_HI - n * LN2_LO;
    // Taylor series of e^r on |r| <= ln(2)/2
    let mut p = INV_FACT[11];
    for c in INV_FACT[..11].iter().rev() {
        p = p * r + c;
    }
    let k = t.to_bits().wrapping_sub(MAGIC.to_bits()) as i64;
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

const INV_FACT: [f64; 12] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
];

fn diameter(a: &PointCloud, b: &PointCloud) -> f64 {
    let d = a.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in a.rows().chain(b.rows()) {
        for c in 0..d {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(l, h)| (h - l).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn schedule(p: u32, diameter: f64, params: &SinkhornParams) -> Vec<f64> {
    let p = p as f64;
    let start = p * diameter.max(params.blur).ln();
    let end = p * params.blur.ln();
    let step = p * params.scaling.ln();
    let mut eps = vec![start.exp()];
    let mut e = start + step;
    while e > end {
        eps.push(e.exp());
        e += step;
    }
    eps.push(params.blur.powf(p));
    eps
}

fn shifted(log_w: f64, pot: &[f64], eps: f64) -> Vec<f64> {
    pot.iter().map(|f| log_w + f / eps).collect()
}

fn max_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (o - n).abs())
        .fold(0.0, f64::max)
}

fn average(old: &mut [f64], new: &[f64]) -> f64 {
    let mut delta: f64 = 0.0;
    for (o, n) in old.iter_mut().zip(new) {
        let avg = 0.5 * (*o + n);
        delta = delta.max((avg - *o).abs());
        *o = avg;
    }
    delta
}

/// Debiased Sinkhorn divergence `S_ε` with cost `|x−y|^p`. Both clouds
/// must be nonempty with equal dimension.
pub fn divergence(x: &PointCloud, y: &PointCloud, p: u32, params: &SinkhornParams) -> f64 {
    let (n, m) = (x.len(), y.len());
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let c_xy = CostMatrix::new(x, y, p);
    let c_yx = c_xy.transpose();
    let c_xx = CostMatrix::new(x, x, p);
    let c_yy = CostMatrix::new(y, y, p);

    let eps_list = schedule(p, diameter(x, y), params);
    let eps0 = eps_list[0];
    let mut f_ba = c_xy.softmin(eps0, &vec![log_b; m]);
    let mut g_ab = c_yx.softmin(eps0, &vec![log_a; n]);
    let mut f_aa = c_xx.softmin(eps0, &vec![log_a; n]);
    let mut g_bb = c_yy.softmin(eps0, &vec![log_b; m]);

    // cross potentials: alternating updates; self potentials: averaged
    let step = |eps: f64,
                f_ba: &mut Vec<f64>,
                g_ab: &mut Vec<f64>,
                f_aa: &mut Vec<f64>,
                g_bb: &mut Vec<f64>|
     -> f64 {
        let ft_ba = c_xy.softmin(eps, &shifted(log_b, g_ab, eps));
        let gt_ab = c_yx.softmin(eps, &shifted(log_a, &ft_ba, eps));
        let ft_aa = c_xx.softmin(eps, &shifted(log_a, f_aa, eps));
        let gt_bb = c_yy.softmin(eps, &shifted(log_b, g_bb, eps));
        let delta = max_change(f_ba, &ft_ba).max(max_change(g_ab, &gt_ab));
        *f_ba = ft_ba;
        *g_ab = gt_ab;
        delta.max(average(f_aa, &ft_aa)).max(average(g_bb, &gt_bb))
    };

    for &eps in &eps_list {
        step(eps, &mut f_ba, &mut g_ab, &mut f_aa, &mut g_bb);
    }
    let eps = *eps_list.last().expect("nonempty schedule");
    let per_iter = (2 * n * m + n * n + m * m) as f64;
    let cap = params
        .max_final_iters
        .min((params.max_final_work / per_iter) as usize);
    for _ in 0..cap {
        if step(eps, &mut f_ba, &mut g_ab, &mut f_aa, &mut g_bb) <= params.tolerance * eps {
            break;
        }
    }

    let f_ba_final = c_xy.softmin(eps, &shifted(log_b, &g_ab, eps));
    let g_ab_final = c_yx.softmin(eps, &shifted(log_a, &f_ba, eps));
    let f_aa_final = c_xx.softmin(eps, &shifted(log_a, &f_aa, eps));
    let g_bb_final = c_yy.softmin(eps, &shifted(log_b, &g_bb, eps));

    let sx: f64 = f_ba_final
        .iter()
        .zip(&f_aa_final)
        .map(|(f, s)| f - s)
        .sum::<f64>()
        / n as f64;
    let sy: f64 = g_ab_final
        .iter()
        .zip(&g_bb_final)
        .map(|(g, s)| g - s)
        .sum::<f64>()
        / m as f64;
    sx + sy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_decreasing_and_ends_at_blur() {
        let params = SinkhornParams::default();
        let s = schedule(2, 10.0, &params);
        assert!((s[0] - 100.0).abs() < 1e-9);
        assert_eq!(*s.last().unwrap(), 0.05f64.powi(2));
        for w in s.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn fast_exp_accuracy() {
        for i in 0..=20000 {
            let x = -(i as f64) * 0.035;
            let rel = (exp_fast(x) - x.exp()).abs() / x.exp();
            assert!(rel < 1e-14, "x = {x}: {rel}");
        }
        assert_eq!(exp_fast(0.0), 1.0);
        assert!(exp_fast(-1e6) < 1e-300);
    }

    #[test]
    fn identical_clouds_have_zero_divergence() {
        let x = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
        let s = divergence(&x, &x, 2, &SinkhornParams::default());
        assert!(s.abs() < 1e-10, "{s}");
    }

    #[test]
    fn single_points_recover_distance() {
        let x = PointCloud::from_rows(&[[0.0]]).unwrap();
        let y = PointCloud::from_rows(&[[3.0]]).unwrap();
        let params = SinkhornParams::default();
        assert!((divergence(&x, &y, 1, &params) - 3.0).abs() < 1e-9);
        assert!((divergence(&x, &y, 2, &params) - 9.0).abs() < 1e-9);
    }
}
