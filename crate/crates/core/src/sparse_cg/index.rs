use nalgebra::DMatrix;
use rayon::prelude::*;

use super::bidiag::{correlation_steps, innovation_scales};
use crate::error::{Error, Result};
use crate::particles::TrajectoryEnsemble;

/// Relative gap below which consecutive sorted distances share one kernel value.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Sorted pairwise distances of every frame plus the bookkeeping needed to apply
/// `U_s` and `U_sᵀ` without forming them.
///
/// Rows are addressed by particle rank `P = f·n + i` for frame `f = m·L + l`, and
/// velocity entries by `k = f·nD + j·n + i`. Column `r` of `U_s` collects every pair
/// whose distance merged into `d_s[r]`; the entry for particle `i` of pair `(i, i')`
/// is `x_{i'} − x_i`, so `U_s φ` reproduces the velocity field.
#[derive(Debug, Clone)]
pub struct DistanceIndex {
    pub n: usize,
    pub dim: usize,
    pub num_frames: usize,
    pub gamma: f64,
    /// Unique positive distances, strictly increasing.
    pub d_s: Vec<f64>,
    pub rho: Vec<f64>,
    pub(crate) scales: Vec<f64>,
    /// `N × n`, row-major: `u_re[k·n + i']` is `x_{i',j} − x_{i,j}` for the row `k = (f, j, i)`.
    pub u_re: Vec<f64>,
    /// Pair list sorted by distance; `pair_hi[h] > pair_lo[h]` are particle ranks.
    pub pair_hi: Vec<u32>,
    pub pair_lo: Vec<u32>,
    /// Pairs of unique rank `r` occupy `rank_start[r]..rank_start[r + 1]`.
    pub rank_start: Vec<usize>,
    /// Per pair: `x_hi − x_lo` (`D` entries) and the velocity index of each member's first coordinate.
    pair_diff: Vec<f64>,
    pair_klo: Vec<u32>,
    pair_khi: Vec<u32>,
    pair_rank: Vec<u32>,
    /// `(F·n) × n`, row-major rank of each particle's distances; the self slot and
    /// zero-distance pairs hold 0 and meet a zero in `u_re`.
    pub p_c: Vec<u32>,
}

impl DistanceIndex {
    pub fn build(traj: &TrajectoryEnsemble, gamma: f64) -> Result<Self> {
        Self::from_frames(&traj.positions, gamma)
    }

    pub fn from_frames(frames: &[DMatrix<f64>], gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("range parameter must be positive, got {gamma}")));
        }
        let first = frames.first().ok_or_else(|| Error::Precondition("no frames to index".into()))?;
        let (n, dim) = first.shape();
        if n < 2 || dim == 0 {
            return Err(Error::Precondition("need at least two particles in at least one dimension".into()));
        }
        if frames.iter().any(|f| f.shape() != (n, dim)) {
            return Err(Error::Dimension("frames have different shapes".into()));
        }
        if frames.iter().any(|f| !f.iter().all(|v| v.is_finite())) {
            return Err(Error::Domain("positions must be finite".into()));
        }
        if (frames.len() * n) as u64 > u32::MAX as u64 {
            return Err(Error::Precondition("too many particle rows for 32-bit ranks".into()));
        }

        let mut pairs: Vec<(f64, u32, u32)> = frames
            .par_iter()
            .enumerate()
            .flat_map_iter(|(f, x)| {
                let base = (f * n) as u32;
                let mut out = Vec::with_capacity(n * (n - 1) / 2);
                for hi in 1..n {
                    for lo in 0..hi {
                        let d = (0..dim).map(|j| (x[(hi, j)] - x[(lo, j)]).powi(2)).sum::<f64>().sqrt();
                        if d > 0.0 {
                            out.push((d, base + hi as u32, base + lo as u32));
                        }
                    }
                }
                out
            })
            .collect();
        if pairs.is_empty() {
            return Err(Error::Precondition("all particles coincide; there are no positive distances".into()));
        }
        pairs.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut d_s = Vec::new();
        let mut rank_start = Vec::new();
        let mut rank_of_pair = Vec::with_capacity(pairs.len());
        for (h, &(d, _, _)) in pairs.iter().enumerate() {
            let merge = d_s.last().is_some_and(|&rep: &f64| d - rep <= TIE_TOLERANCE * rep);
            if !merge {
                d_s.push(d);
                rank_start.push(h);
            }
            rank_of_pair.push((d_s.len() - 1) as u32);
        }
        rank_start.push(pairs.len());
        let rho = correlation_steps(&d_s, gamma);
        if let Some(k) = rho.iter().position(|r| !(*r < 1.0)) {
            return Err(Error::Numerical(format!(
                "distances {} and {} are too close for range {gamma}; the correlation step rounds to 1",
                d_s[k],
                d_s[k + 1]
            )));
        }
        let scales = innovation_scales(&rho);

        let num_frames = frames.len();
        let mut p_c = vec![0u32; num_frames * n * n];
        for (h, &(_, hi, lo)) in pairs.iter().enumerate() {
            let (f, ih, il) = (hi as usize / n, hi as usize % n, lo as usize % n);
            p_c[(f * n + ih) * n + il] = rank_of_pair[h];
            p_c[(f * n + il) * n + ih] = rank_of_pair[h];
        }

        let nd = n * dim;
        let mut u_re = vec![0.0; num_frames * nd * n];
        u_re.par_chunks_mut(nd * n).zip(frames.par_iter()).for_each(|(block, x)| {
            for j in 0..dim {
                for i in 0..n {
                    let row = &mut block[(j * n + i) * n..(j * n + i + 1) * n];
                    for (ip, slot) in row.iter_mut().enumerate() {
                        *slot = x[(ip, j)] - x[(i, j)];
                    }
                }
            }
        });

        let k0 = |p: u32| {
            let (f, i) = (p as usize / n, p as usize % n);
            (f * nd + i) as u32
        };
        let mut pair_diff = Vec::with_capacity(pairs.len() * dim);
        for &(_, hi, lo) in &pairs {
            let x = &frames[hi as usize / n];
            let (ih, il) = (hi as usize % n, lo as usize % n);
            pair_diff.extend((0..dim).map(|j| x[(ih, j)] - x[(il, j)]));
        }

        Ok(DistanceIndex {
            pair_diff,
            pair_klo: pairs.iter().map(|p| k0(p.2)).collect(),
            pair_khi: pairs.iter().map(|p| k0(p.1)).collect(),
            pair_rank: rank_of_pair,
            n,
            dim,
            num_frames,
            gamma,
            d_s,
            rho,
            scales,
            u_re,
            pair_hi: pairs.iter().map(|p| p.1).collect(),
            pair_lo: pairs.iter().map(|p| p.2).collect(),
            rank_start,
            p_c,
        })
    }

    /// Number of unique distances `Ñ`.
    pub fn num_unique(&self) -> usize {
        self.d_s.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_hi.len()
    }

    /// Number of velocity entries `N = F·n·D`.
    pub fn num_observations(&self) -> usize {
        self.num_frames * self.n * self.dim
    }

    /// `U_sᵀ z`, one pass over the sorted pair list.
    pub fn apply_ut(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.num_observations() {
            return Err(Error::Dimension(format!("expected {} velocity entries, got {}", self.num_observations(), z.len())));
        }
        let (n, dim) = (self.n, self.dim);
        let mut out = vec![0.0; self.num_unique()];
        out.par_chunks_mut(RANK_BLOCK).enumerate().for_each(|(b, block)| {
            let r0 = b * RANK_BLOCK;
            for (o, r) in block.iter_mut().zip(r0..) {
                let mut acc = 0.0;
                for h in self.rank_start[r]..self.rank_start[r + 1] {
                    let (klo, khi) = (self.pair_klo[h] as usize, self.pair_khi[h] as usize);
                    let diff = &self.pair_diff[h * dim..(h + 1) * dim];
                    for (j, dj) in diff.iter().enumerate() {
                        acc += dj * (z[klo + j * n] - z[khi + j * n]);
                    }
                }
                *o = acc;
            }
        });
        Ok(out)
    }

    /// `U_s g`, scattered pair by pair.
    ///
    /// Pairs are split into a fixed number of blocks with private accumulators that are
    /// summed in block order, so results do not depend on the thread count.
    pub fn apply_u(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.num_unique() {
            return Err(Error::Dimension(format!("expected {} kernel entries, got {}", self.num_unique(), g.len())));
        }
        let (n, dim, nobs) = (self.n, self.dim, self.num_observations());
        let scatter = |range: std::ops::Range<usize>, out: &mut [f64]| {
            for h in range {
                let w = g[self.pair_rank[h] as usize];
                let (klo, khi) = (self.pair_klo[h] as usize, self.pair_khi[h] as usize);
                for (j, dj) in self.pair_diff[h * dim..(h + 1) * dim].iter().enumerate() {
                    out[klo + j * n] += dj * w;
                    out[khi + j * n] -= dj * w;
                }
            }
        };
        let pairs = self.num_pairs();
        if pairs < PARALLEL_PAIRS {
            let mut out = vec![0.0; nobs];
            scatter(0..pairs, &mut out);
            return Ok(out);
        }
        let len = pairs.div_ceil(SCATTER_BLOCKS);
        let parts: Vec<Vec<f64>> = (0..SCATTER_BLOCKS)
            .into_par_iter()
            .map(|b| {
                let mut out = vec![0.0; nobs];
                scatter(b * len..((b + 1) * len).min(pairs), &mut out);
                out
            })
            .collect();
        let mut out = vec![0.0; nobs];
        for p in &parts {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// `(U_s R_s U_sᵀ + η I) z` in two sweeps over the rank-ordered pair list.
    ///
    /// The backward sweep forms `U_sᵀ z` and applies `Lᵀ` on the fly; the forward sweep
    /// applies `L` and scatters each rank's value back through `U_s`.
    pub(crate) fn apply_rv_fused(&self, eta: f64, z: &[f64]) -> Vec<f64> {
        let (n, dim, nu) = (self.n, self.dim, self.num_unique());
        let mut g2 = vec![0.0; nu];
        let mut h = 0.0;
        for r in (0..nu).rev() {
            let mut g1 = 0.0;
            for p in self.rank_start[r]..self.rank_start[r + 1] {
                let (klo, khi) = (self.pair_klo[p] as usize, self.pair_khi[p] as usize);
                for (j, dj) in self.pair_diff[p * dim..(p + 1) * dim].iter().enumerate() {
                    g1 += dj * (z[klo + j * n] - z[khi + j * n]);
                }
            }
            h = if r + 1 < nu { g1 + self.rho[r] * h } else { g1 };
            g2[r] = self.scales[r] * h;
        }
        let mut out: Vec<f64> = z.iter().map(|v| eta * v).collect();
        let mut g3 = 0.0;
        for r in 0..nu {
            g3 = if r > 0 { self.rho[r - 1] * g3 + self.scales[r] * g2[r] } else { g2[0] };
            for p in self.rank_start[r]..self.rank_start[r + 1] {
                let (klo, khi) = (self.pair_klo[p] as usize, self.pair_khi[p] as usize);
                for (j, dj) in self.pair_diff[p * dim..(p + 1) * dim].iter().enumerate() {
                    out[klo + j * n] += dj * g3;
                    out[khi + j * n] -= dj * g3;
                }
            }
        }
        out
    }

    /// `U_s g` through the reduced difference matrix and the rank table, row by row.
    pub fn apply_u_rows(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.num_unique() {
            return Err(Error::Dimension(format!("expected {} kernel entries, got {}", self.num_unique(), g.len())));
        }
        let (n, dim) = (self.n, self.dim);
        let mut out = vec![0.0; self.num_observations()];
        out.par_chunks_mut(n * dim).enumerate().for_each(|(f, block)| {
            for j in 0..dim {
                for i in 0..n {
                    let k = f * n * dim + j * n + i;
                    let u = &self.u_re[k * n..(k + 1) * n];
                    let ranks = &self.p_c[(f * n + i) * n..(f * n + i + 1) * n];
                    block[j * n + i] = u.iter().zip(ranks).map(|(a, &r)| a * g[r as usize]).sum();
                }
            }
        });
        Ok(out)
    }
}

const RANK_BLOCK: usize = 4096;
const SCATTER_BLOCKS: usize = 8;
const PARALLEL_PAIRS: usize = 1 << 16;
