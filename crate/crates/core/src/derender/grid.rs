//! Forward-map lattice over the RAW cube and moment integration of the
//! inverse distribution.
//!
//! The cube is split into `R^3` cells whose centers are the lattice nodes.
//! The cache keeps the forward map at the nodes (as required for direct
//! lookups) and at the `(R+1)^3` cell corners, which give exact per-cell
//! bounds of the base map `B(f(v_c . x))` (monotone along `v_c`) and the
//! trilinear interpolant of the gamut correction.
//!
//! A query visits only the cells whose bounds come within the likelihood
//! cutoff of `y` and integrates each of them on a sub-lattice fine enough to
//! resolve single quantization steps.

use crate::error::{Error, Result};
use crate::model::{bound, dot, eval_polynomial, CameraModel, JpegColor, RawColor};

use super::prior::PriorSupport;
use super::InverseGaussian;

/// Likelihood cutoff in units of `sigma_f`.
pub const CUTOFF_SIGMAS: f64 = 6.0;
/// Sub-lattice step in gray levels of the forward map: `sigma_f / 2`,
/// clamped to this range.
const SUB_STEP_GRAY: [f64; 2] = [0.25, 0.5];
const MAX_SUBDIVISION: usize = 32;
pub const MIN_RESOLUTION: usize = 16;
/// Mean-channel threshold above which a channel is reported as clipped.
pub const CLIP_THRESHOLD: f64 = 0.98;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CellPrior {
    Inside,
    Outside,
    Partial,
}

#[derive(Clone, Debug)]
pub struct RawGridCache {
    pub resolution: usize,
    /// Continuous forward map at the lattice nodes `(i + 0.5) / R`.
    pub nodes: Vec<[f64; 3]>,
    /// Quantized forward map at the lattice nodes.
    pub quantized: Vec<JpegColor>,
    /// Prior membership of the lattice nodes.
    pub prior_mask: Vec<bool>,
    /// RAW cube covered by the lattice, per axis.
    pub bounds: [f64; 2],
    model: CameraModel,
    prior: PriorSupport,
    /// Gamut correction at the corners; empty when the model has none.
    corner_g: Vec<[f64; 3]>,
    /// Per-cell lower/upper bound of the continuous map, per channel.
    cell_lo: Vec<[f64; 3]>,
    cell_hi: Vec<[f64; 3]>,
    cell_prior: Vec<CellPrior>,
    /// Per-cell largest channel range, drives the sub-lattice size.
    cell_range: Vec<f32>,
    /// Sampled `f` for inverting the base map; absent when `f` is not
    /// monotone over the cube.
    tone_table: Option<ToneTable>,
    /// Bounds over blocks of `BLOCK^3` cells, so queries skip most cells.
    blocks: Vec<Block>,
}

const BLOCK: usize = 8;

#[derive(Clone, Debug)]
struct Block {
    start: [usize; 3],
    end: [usize; 3],
    lo: [f64; 3],
    hi: [f64; 3],
}

/// Squared distance from `y` to the quantized image of `[lo, hi]`.
fn quantized_gap2(y: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for c in 0..3 {
        // Quantized values lie in [round(lo), round(hi)].
        let qlo = lo[c].round().clamp(0.0, 255.0);
        let qhi = hi[c].round().clamp(0.0, 255.0);
        let d = if y[c] < qlo {
            qlo - y[c]
        } else if y[c] > qhi {
            y[c] - qhi
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

/// `(i + 0.5) / r` as one correctly rounded division, so lattices whose
/// centers coincide (`r` and `3r`) produce identical coordinates.
fn center(i: usize, r: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * r) as f64
}

fn node_index(r: usize, i: usize, j: usize, k: usize) -> usize {
    (i * r + j) * r + k
}

impl RawGridCache {
    pub fn build(model: &CameraModel, prior: &PriorSupport, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidInput(format!("grid resolution {resolution} is too small")));
        }
        let r = resolution;
        let h = 1.0 / r as f64;
        let n = r * r * r;
        let mut nodes = Vec::with_capacity(n);
        let mut quantized = Vec::with_capacity(n);
        let mut prior_mask = Vec::with_capacity(n);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let x = RawColor([center(i, r), center(j, r), center(k, r)]);
                    let y = model.render_continuous(&x);
                    nodes.push(y);
                    quantized.push(crate::model::quantize(&y));
                    prior_mask.push(prior.contains(&x));
                }
            }
        }
        if !prior_mask.iter().any(|&m| m) {
            return Err(Error::DegenerateHull("prior support contains no lattice node".into()));
        }

        let rc = r + 1;
        let corner = |i: usize, j: usize, k: usize| (i * rc + j) * rc + k;
        let has_g = model.has_gamut_correction();
        let mut corner_t = vec![[0.0; 3]; rc * rc * rc];
        let mut corner_g = if has_g { vec![[0.0; 3]; rc * rc * rc] } else { Vec::new() };
        let mut corner_in = vec![false; rc * rc * rc];
        for i in 0..rc {
            for j in 0..rc {
                for k in 0..rc {
                    let x = RawColor([i as f64 * h, j as f64 * h, k as f64 * h]);
                    let idx = corner(i, j, k);
                    corner_t[idx] = std::array::from_fn(|c| dot(&model.v[c], &x.0));
                    if has_g {
                        corner_g[idx] = model.gamut_correction(&model.tone(&x));
                    }
                    corner_in[idx] = prior.contains(&x);
                }
            }
        }

        let mono = MonotoneCheck::new(model, &corner_t);
        let tone_table = mono.table(model);
        let mut cell_lo = Vec::with_capacity(n);
        let mut cell_hi = Vec::with_capacity(n);
        let mut cell_prior = Vec::with_capacity(n);
        let mut cell_range = Vec::with_capacity(n);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let mut tlo = [f64::INFINITY; 3];
                    let mut thi = [f64::NEG_INFINITY; 3];
                    let mut glo = [0.0f64; 3];
                    let mut ghi = [0.0f64; 3];
                    if has_g {
                        glo = [f64::INFINITY; 3];
                        ghi = [f64::NEG_INFINITY; 3];
                    }
                    let mut inside = 0;
                    for (di, dj, dk) in CORNERS {
                        let idx = corner(i + di, j + dj, k + dk);
                        for c in 0..3 {
                            tlo[c] = tlo[c].min(corner_t[idx][c]);
                            thi[c] = thi[c].max(corner_t[idx][c]);
                            if has_g {
                                glo[c] = glo[c].min(corner_g[idx][c]);
                                ghi[c] = ghi[c].max(corner_g[idx][c]);
                            }
                        }
                        inside += corner_in[idx] as usize;
                    }
                    let mut lo = [0.0; 3];
                    let mut hi = [0.0; 3];
                    let mut range = 0.0f64;
                    for c in 0..3 {
                        let (flo, fhi) = mono.range(model, tlo[c], thi[c]);
                        lo[c] = bound(flo) + glo[c];
                        hi[c] = bound(fhi) + ghi[c];
                        range = range.max(hi[c] - lo[c]);
                    }
                    cell_lo.push(lo);
                    cell_hi.push(hi);
                    cell_range.push(range as f32);
                    cell_prior.push(match inside {
                        8 => CellPrior::Inside,
                        0 if cell_outside(prior, i, j, k, h) => CellPrior::Outside,
                        _ => CellPrior::Partial,
                    });
                }
            }
        }

        let mut blocks = Vec::new();
        for bi in (0..r).step_by(BLOCK) {
            for bj in (0..r).step_by(BLOCK) {
                for bk in (0..r).step_by(BLOCK) {
                    let start = [bi, bj, bk];
                    let end = start.map(|s| (s + BLOCK).min(r));
                    let mut lo = [f64::INFINITY; 3];
                    let mut hi = [f64::NEG_INFINITY; 3];
                    for i in start[0]..end[0] {
                        for j in start[1]..end[1] {
                            for k in start[2]..end[2] {
                                let idx = node_index(r, i, j, k);
                                if cell_prior[idx] == CellPrior::Outside {
                                    continue;
                                }
                                for c in 0..3 {
                                    lo[c] = lo[c].min(cell_lo[idx][c]);
                                    hi[c] = hi[c].max(cell_hi[idx][c]);
                                }
                            }
                        }
                    }
                    if lo[0] <= hi[0] {
                        blocks.push(Block { start, end, lo, hi });
                    }
                }
            }
        }

        Ok(RawGridCache {
            resolution,
            nodes,
            quantized,
            prior_mask,
            bounds: [0.0, 1.0],
            model: model.clone(),
            prior: prior.clone(),
            corner_g,
            cell_lo,
            cell_hi,
            cell_prior,
            cell_range,
            tone_table,
            blocks,
        })
    }

    pub fn model(&self) -> &CameraModel {
        &self.model
    }

    pub fn prior(&self) -> &PriorSupport {
        &self.prior
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> ([f64; 3], JpegColor, bool) {
        let idx = node_index(self.resolution, i, j, k);
        (self.nodes[idx], self.quantized[idx], self.prior_mask[idx])
    }

    pub fn node_center(&self, i: usize) -> f64 {
        center(i, self.resolution)
    }

    /// Moments of `p(x | y)` with model-error std `sigma_f` (gray levels).
    pub fn inverse_with_sigma(&self, y: &JpegColor, sigma_f: f64) -> Result<InverseGaussian> {
        if !(sigma_f > 0.0) {
            return Err(Error::InvalidInput(format!("sigma_f must be positive, got {sigma_f}")));
        }
        let r = self.resolution;
        let h = 1.0 / r as f64;
        let yf = y.as_f64();
        let cutoff = CUTOFF_SIGMAS * sigma_f;
        let cutoff2 = cutoff * cutoff;
        // Weights depend on the integer squared distance only.
        let max_d2 = cutoff2.floor() as usize;
        let inv2s2 = 1.0 / (2.0 * sigma_f * sigma_f);
        let table: Vec<f64> = (0..=max_d2).map(|d| (-(d as f64) * inv2s2).exp()).collect();

        let step = (0.5 * sigma_f).clamp(SUB_STEP_GRAY[0], SUB_STEP_GRAY[1]);
        // Continuous values that quantize to within the cutoff of `y`.
        let window: [[f64; 2]; 3] = std::array::from_fn(|c| [yf[c] - cutoff - 0.5, yf[c] + cutoff + 0.5]);
        let mut acc = Moments::default();
        let mut any_within = false;
        for block in &self.blocks {
            if quantized_gap2(&yf, &block.lo, &block.hi) > cutoff2 {
                continue;
            }
            for i in block.start[0]..block.end[0] {
                for j in block.start[1]..block.end[1] {
                    for k in block.start[2]..block.end[2] {
                        let idx = node_index(r, i, j, k);
                        if self.cell_prior[idx] == CellPrior::Outside
                            || quantized_gap2(&yf, &self.cell_lo[idx], &self.cell_hi[idx]) > cutoff2
                        {
                            continue;
                        }
                        let sub = ((self.cell_range[idx] as f64 / step).ceil() as usize).clamp(1, MAX_SUBDIVISION);
                        any_within |= self.integrate_cell(i, j, k, h, sub, y, &window, max_d2, &table, &mut acc);
                    }
                }
            }
        }
        if !any_within || acc.w <= 0.0 {
            return Err(Error::ZeroMass { y: y.0, cutoff });
        }
        Ok(acc.finish())
    }

    /// Integrate one cell on an `sub^3` midpoint lattice. Returns whether any
    /// sub-point fell within the cutoff.
    #[allow(clippy::too_many_arguments)]
    fn integrate_cell(
        &self,
        i: usize,
        j: usize,
        k: usize,
        h: f64,
        sub: usize,
        y: &JpegColor,
        window: &[[f64; 2]; 3],
        max_d2: usize,
        table: &[f64],
        acc: &mut Moments,
    ) -> bool {
        let m = &self.model;
        let cell_idx = node_index(self.resolution, i, j, k);
        let partial = self.cell_prior[cell_idx] == CellPrior::Partial;
        let s = h / sub as f64;
        let dv = s * s * s;
        let x0 = [i as f64 * h, j as f64 * h, k as f64 * h];
        let has_g = !self.corner_g.is_empty();
        let g = if has_g {
            let rc = self.resolution + 1;
            let cg = |a: usize, b: usize, c: usize| self.corner_g[((i + a) * rc + j + b) * rc + k + c];
            [cg(0, 0, 0), cg(0, 0, 1), cg(0, 1, 0), cg(0, 1, 1), cg(1, 0, 0), cg(1, 0, 1), cg(1, 1, 0), cg(1, 1, 1)]
        } else {
            [[0.0; 3]; 8]
        };
        let yi = [y.0[0] as i32, y.0[1] as i32, y.0[2] as i32];
        // t = v . x is affine in the sub-lattice coordinates.
        let t0: [f64; 3] = std::array::from_fn(|ch| dot(&m.v[ch], &x0));
        let dt: [[f64; 3]; 3] = std::array::from_fn(|ch| std::array::from_fn(|ax| m.v[ch][ax] * h));
        let max_d2 = max_d2 as i32;
        // Range of `t` per channel that can land inside the window, given
        // the range of `g` over the cell.
        let t_window: Option<[[f64; 2]; 3]> = self.tone_table.as_ref().map(|tt| {
            std::array::from_fn(|ch| {
                let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v[ch]), hi.max(v[ch]))
                });
                tt.preimage(window[ch][0] - gmax, window[ch][1] - gmin)
            })
        });
        let mut hit = false;
        let mut local = Moments::default();
        for a in 0..sub {
            let fa = (a as f64 + 0.5) / sub as f64;
            for b in 0..sub {
                let fb = (b as f64 + 0.5) / sub as f64;
                let tab: [f64; 3] = std::array::from_fn(|ch| t0[ch] + fa * dt[ch][0] + fb * dt[ch][1]);
                let (c_lo, c_hi) = match &t_window {
                    Some(w) => match sub_range(&tab, &dt, w, sub) {
                        Some(r) => r,
                        None => continue,
                    },
                    None => (0, sub),
                };
                'sub: for c in c_lo..c_hi {
                    let fc = (c as f64 + 0.5) / sub as f64;
                    let mut d2: i32 = 0;
                    for ch in 0..3 {
                        let mut v = bound(eval_polynomial(&m.alpha, tab[ch] + fc * dt[ch][2]));
                        if has_g {
                            v += trilinear(&g, ch, fa, fb, fc);
                        }
                        let d = crate::model::quantize_channel(v) as i32 - yi[ch];
                        d2 += d * d;
                        if d2 > max_d2 {
                            continue 'sub;
                        }
                    }
                    let x = [x0[0] + fa * h, x0[1] + fb * h, x0[2] + fc * h];
                    if partial && !self.prior.contains(&RawColor(x)) {
                        continue;
                    }
                    hit = true;
                    local.add(&x, table[d2 as usize]);
                }
            }
        }
        if hit {
            local.scale(dv);
            acc.merge(&local);
        }
        hit
    }
}

const CORNERS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (0, 0, 1),
    (0, 1, 0),
    (0, 1, 1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, 0),
    (1, 1, 1),
];

#[inline]
fn trilinear(g: &[[f64; 3]; 8], ch: usize, fa: f64, fb: f64, fc: f64) -> f64 {
    let c00 = g[0][ch] * (1.0 - fc) + g[1][ch] * fc;
    let c01 = g[2][ch] * (1.0 - fc) + g[3][ch] * fc;
    let c10 = g[4][ch] * (1.0 - fc) + g[5][ch] * fc;
    let c11 = g[6][ch] * (1.0 - fc) + g[7][ch] * fc;
    let c0 = c00 * (1.0 - fb) + c01 * fb;
    let c1 = c10 * (1.0 - fb) + c11 * fb;
    c0 * (1.0 - fa) + c1 * fa
}

/// Sub-lattice indices `c` along the third axis whose `t` lies inside the
/// window of every channel, as a half-open range.
fn sub_range(tab: &[f64; 3], dt: &[[f64; 3]; 3], w: &[[f64; 2]; 3], sub: usize) -> Option<(usize, usize)> {
    let n = sub as f64;
    let mut lo = 0.0f64;
    let mut hi = n - 1.0;
    for ch in 0..3 {
        let d = dt[ch][2];
        let [tl, th] = w[ch];
        if d == 0.0 {
            if tab[ch] < tl || tab[ch] > th {
                return None;
            }
            continue;
        }
        let (f1, f2) = ((tl - tab[ch]) / d, (th - tab[ch]) / d);
        let (flo, fhi) = if d > 0.0 { (f1, f2) } else { (f2, f1) };
        // fc = (c + 0.5) / n
        lo = lo.max((flo * n - 0.5 - 1e-9).ceil());
        hi = hi.min((fhi * n - 0.5 + 1e-9).floor());
    }
    (lo <= hi).then(|| (lo as usize, hi as usize + 1))
}

/// `f` sampled on a uniform grid over the range of `t` it was verified
/// monotone on.
#[derive(Clone, Debug)]
struct ToneTable {
    t0: f64,
    dt: f64,
    f: Vec<f64>,
}

impl ToneTable {
    const SAMPLES: usize = 8192;

    /// An interval of `t` containing every `t` with `B(f(t))` in `[lo, hi]`.
    fn preimage(&self, lo: f64, hi: f64) -> [f64; 2] {
        let n = self.f.len();
        // Samples are non-decreasing: the crossing of `lo` lies after the
        // last sample below it, the crossing of `hi` before the first above.
        let t_lo = if lo <= 0.0 {
            f64::NEG_INFINITY
        } else {
            match self.f.partition_point(|&v| v < lo) {
                0 => f64::NEG_INFINITY,
                k => self.t0 + (k - 1) as f64 * self.dt,
            }
        };
        let t_hi = if hi >= 255.0 {
            f64::INFINITY
        } else {
            match self.f.partition_point(|&v| v <= hi) {
                k if k >= n => f64::INFINITY,
                k => self.t0 + k as f64 * self.dt,
            }
        };
        [t_lo, t_hi]
    }
}

/// A cell with no corner inside the cone is outside only if a single
/// half-space excludes all of its corners (the cone is convex).
fn cell_outside(prior: &PriorSupport, i: usize, j: usize, k: usize, h: f64) -> bool {
    prior.planes().iter().any(|p| {
        CORNERS.iter().all(|&(di, dj, dk)| {
            let x = [(i + di) as f64 * h, (j + dj) as f64 * h, (k + dk) as f64 * h];
            p[0] * x[0] + p[1] * x[1] + p[2] * x[2] < -1e-12
        })
    })
}

/// Range of `f` over `[t0, t1]`. Exact at the endpoints where `f` is
/// verified monotone; elsewhere a sampled range widened by one gray level.
struct MonotoneCheck {
    lo: f64,
    hi: f64,
}

impl MonotoneCheck {
    fn new(model: &CameraModel, corner_t: &[[f64; 3]]) -> Self {
        let tmin = corner_t.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
        let tmax = corner_t.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let n = 20_000;
        let ts: Vec<f64> = (0..=n).map(|i| tmin + (tmax - tmin) * i as f64 / n as f64).collect();
        let ok = ts.iter().all(|&t| model.polynomial_derivative(t) >= -1e-9);
        if ok {
            MonotoneCheck { lo: tmin, hi: tmax }
        } else {
            MonotoneCheck { lo: 0.0, hi: -1.0 }
        }
    }

    fn table(&self, model: &CameraModel) -> Option<ToneTable> {
        if !(self.hi > self.lo) {
            return None;
        }
        let n = ToneTable::SAMPLES;
        let dt = (self.hi - self.lo) / (n - 1) as f64;
        Some(ToneTable {
            t0: self.lo,
            dt,
            f: (0..n).map(|i| eval_polynomial(&model.alpha, self.lo + i as f64 * dt)).collect(),
        })
    }

    fn range(&self, model: &CameraModel, t0: f64, t1: f64) -> (f64, f64) {
        if t0 >= self.lo && t1 <= self.hi {
            return (eval_polynomial(&model.alpha, t0), eval_polynomial(&model.alpha, t1));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..=16 {
            let v = eval_polynomial(&model.alpha, t0 + (t1 - t0) * s as f64 / 16.0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo - 1.0, hi + 1.0)
    }
}

/// Weighted raw first and second moments.
#[derive(Default, Clone)]
struct Moments {
    w: f64,
    s1: [f64; 3],
    s2: [[f64; 3]; 3],
}

impl Moments {
    #[inline]
    fn add(&mut self, x: &[f64; 3], w: f64) {
        self.w += w;
        for a in 0..3 {
            self.s1[a] += w * x[a];
            for b in a..3 {
                self.s2[a][b] += w * x[a] * x[b];
            }
        }
    }

    fn scale(&mut self, s: f64) {
        self.w *= s;
        for a in 0..3 {
            self.s1[a] *= s;
            for b in a..3 {
                self.s2[a][b] *= s;
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.w += o.w;
        for a in 0..3 {
            self.s1[a] += o.s1[a];
            for b in a..3 {
                self.s2[a][b] += o.s2[a][b];
            }
        }
    }

    fn finish(&self) -> InverseGaussian {
        let mu: [f64; 3] = std::array::from_fn(|a| self.s1[a] / self.w);
        let mut sigma = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let v = self.s2[a][b] / self.w - mu[a] * mu[b];
                sigma[a][b] = v;
                sigma[b][a] = v;
            }
        }
        // Cancellation can leave tiny negative diagonal entries.
        for (a, row) in sigma.iter_mut().enumerate() {
            row[a] = row[a].max(0.0);
        }
        InverseGaussian {
            mu: RawColor(mu),
            sigma,
            clipped: std::array::from_fn(|c| mu[c] > CLIP_THRESHOLD),
            mass: self.w,
        }
    }
}
