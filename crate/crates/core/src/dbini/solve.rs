use nalgebra::{DVector, Vector3};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::render::DepthField;

use super::{
    harmonize_masks, DbiniConfig, DbiniOutput, DbiniProblem, DbiniReport, ProjectionModel, MIN_SLOPE_DENOMINATOR,
};

/// Maps between metric depth and the pixel-unit unknowns.
#[derive(Debug, Clone, Copy)]
enum Units {
    Ortho { pitch: f64 },
    Log { fx: f64 },
}

impl Units {
    fn to_unknown(self, z: f64) -> f64 {
        match self {
            Units::Ortho { pitch } => z / pitch,
            Units::Log { fx } => fx * z.ln(),
        }
    }

    fn to_depth(self, zeta: f64) -> f64 {
        match self {
            Units::Ortho { pitch } => zeta * pitch,
            Units::Log { fx } => (zeta / fx).exp(),
        }
    }
}

/// One pixel's one-sided differences along one image axis.
#[derive(Debug, Clone, Copy)]
struct Pair {
    centre: usize,
    ahead: Option<usize>,
    behind: Option<usize>,
    slope: f64,
}

impl Pair {
    fn residuals(&self, z: &[f64]) -> (Option<f64>, Option<f64>) {
        let c = z[self.centre];
        (
            self.ahead.map(|a| z[a] - c - self.slope),
            self.behind.map(|b| c - z[b] - self.slope),
        )
    }
}

/// `-(1/k) ln(e^{-ka} + e^{-kb})`, evaluated without overflow.
fn soft_min(a: f64, b: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 0.5 * (a + b);
    }
    a.min(b) - (1.0 + (-k * (a - b).abs()).exp()).ln() / k
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// The linear system's fixed structure: unknowns, differences, anchors.
struct System {
    /// Pixel of each unknown; the first `front_count` belong to the front.
    pixels: Vec<usize>,
    front_count: usize,
    pairs: Vec<Pair>,
    priors: Vec<(usize, f64)>,
    couples: Vec<(usize, usize)>,
    demoted: usize,
}

impl System {
    fn len(&self) -> usize {
        self.pixels.len()
    }

    fn objective(&self, z: &[f64], cfg: &DbiniConfig) -> f64 {
        let mut total = 0.0;
        for p in &self.pairs {
            total += match p.residuals(z) {
                (Some(f), Some(b)) => soft_min(f * f, b * b, cfg.k_bilateral),
                (Some(r), None) | (None, Some(r)) => r * r,
                (None, None) => 0.0,
            };
        }
        for &(v, t) in &self.priors {
            total += cfg.lambda_prior * (z[v] - t).powi(2);
        }
        for &(f, b) in &self.couples {
            total += cfg.lambda_couple * (z[f] - z[b]).powi(2);
        }
        total
    }

    /// One-sided weights `(ahead, behind)` per pair; uniform when `z` is
    /// `None`.
    fn weights(&self, z: Option<&[f64]>, k: f64) -> Vec<(f64, f64)> {
        self.pairs
            .iter()
            .map(|p| match (p.ahead, p.behind) {
                (Some(_), Some(_)) => match z {
                    None => (0.5, 0.5),
                    Some(z) => {
                        let (Some(f), Some(b)) = p.residuals(z) else {
                            unreachable!()
                        };
                        let w = logistic(k * (b * b - f * f));
                        (w, 1.0 - w)
                    }
                },
                (Some(_), None) => (1.0, 0.0),
                (None, Some(_)) => (0.0, 1.0),
                (None, None) => (0.0, 0.0),
            })
            .collect()
    }

    fn normal_equations(&self, weights: &[(f64, f64)], cfg: &DbiniConfig) -> (CsrMatrix<f64>, DVector<f64>) {
        let n = self.len();
        let mut coo = CooMatrix::new(n, n);
        let mut rhs = DVector::zeros(n);
        // residual z[hi] - z[lo] - target with weight w
        let mut difference = |hi: usize, lo: usize, target: f64, w: f64| {
            if w == 0.0 {
                return;
            }
            coo.push(hi, hi, w);
            coo.push(lo, lo, w);
            coo.push(hi, lo, -w);
            coo.push(lo, hi, -w);
            rhs[hi] += w * target;
            rhs[lo] -= w * target;
        };
        for (p, &(wa, wb)) in self.pairs.iter().zip(weights) {
            if let Some(a) = p.ahead {
                difference(a, p.centre, p.slope, wa);
            }
            if let Some(b) = p.behind {
                difference(p.centre, b, p.slope, wb);
            }
        }
        for &(f, b) in &self.couples {
            difference(f, b, 0.0, cfg.lambda_couple);
        }
        for &(v, t) in &self.priors {
            coo.push(v, v, cfg.lambda_prior);
            rhs[v] += cfg.lambda_prior * t;
        }
        (CsrMatrix::from(&coo), rhs)
    }
}

fn matvec(a: &CsrMatrix<f64>, x: &DVector<f64>, out: &mut DVector<f64>) {
    for (r, row) in a.row_iter().enumerate() {
        out[r] = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&c, &v)| v * x[c])
            .sum();
    }
}

/// Jacobi-preconditioned conjugate gradients, warm-started from `x`.
/// Returns the iteration count.
fn pcg(a: &CsrMatrix<f64>, b: &DVector<f64>, x: &mut DVector<f64>, tol: f64, max_iter: usize) -> usize {
    let n = b.len();
    let mut inv_diag = DVector::from_element(n, 1.0);
    for (r, row) in a.row_iter().enumerate() {
        if let Some(k) = row.col_indices().iter().position(|&c| c == r) {
            let d = row.values()[k];
            if d > 0.0 {
                inv_diag[r] = 1.0 / d;
            }
        }
    }
    let mut ax = DVector::zeros(n);
    matvec(a, x, &mut ax);
    let mut r = b - &ax;
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut q = DVector::zeros(n);
    for it in 0..max_iter {
        if r.norm() <= tol * b_norm {
            return it;
        }
        matvec(a, &p, &mut q);
        let pq = p.dot(&q);
        if pq <= 0.0 {
            return it;
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        p.axpy(1.0, &z, rz_next / rz);
        rz = rz_next;
    }
    max_iter
}

/// Normal-implied slopes `(along u, along v)` in pixel units, or `None`
/// when the normal is too grazing.
fn slopes(n: &Vector3<f64>, x: usize, y: usize, problem: &DbiniProblem, model: ProjectionModel) -> Option<[f64; 2]> {
    let cam = &problem.camera;
    let (denom, aspect) = match model {
        ProjectionModel::Orthographic => (n.z, 1.0),
        ProjectionModel::Perspective => {
            let ray = cam.ray_camera(x as f64, y as f64);
            if (n.dot(&ray) / ray.norm()).abs() < MIN_SLOPE_DENOMINATOR {
                return None;
            }
            (n.dot(&ray), cam.fx() / cam.fy())
        }
    };
    if denom.abs() < MIN_SLOPE_DENOMINATOR {
        return None;
    }
    Some([-n.x / denom, -n.y * aspect / denom])
}

fn build(problem: &DbiniProblem, masks: [&[bool]; 2], ring: &[usize], units: Units, cfg: &DbiniConfig) -> System {
    let (w, h) = (problem.width(), problem.height());
    let mut index = [vec![None; w * h], vec![None; w * h]];
    let mut pixels = Vec::new();
    for (s, mask) in masks.iter().enumerate() {
        for (i, &m) in mask.iter().enumerate() {
            if m {
                index[s][i] = Some(pixels.len());
                pixels.push(i);
            }
        }
    }
    let front_count = index[0].iter().flatten().count();
    let mut pairs = Vec::new();
    let mut priors = Vec::new();
    let mut demoted = 0;
    let surfaces = [
        (&problem.normals_front, &problem.prior_front),
        (&problem.normals_back, &problem.prior_back),
    ];
    for (s, (normals, prior)) in surfaces.into_iter().enumerate() {
        let idx = &index[s];
        for i in 0..w * h {
            let Some(v) = idx[i] else { continue };
            if prior.mask[i] {
                priors.push((v, units.to_unknown(prior.depth[i])));
            }
            let (x, y) = (i % w, i / w);
            let Some([su, sv]) = slopes(&normals.normal[i], x, y, problem, cfg.projection) else {
                demoted += 1;
                continue;
            };
            let at = |ok: bool, j: usize| if ok { idx[j] } else { None };
            for (ahead, behind, slope) in [
                (at(x + 1 < w, i + 1), at(x > 0, i.wrapping_sub(1)), su),
                (at(y + 1 < h, i + w), at(y > 0, i.wrapping_sub(w)), sv),
            ] {
                if ahead.is_some() || behind.is_some() {
                    pairs.push(Pair {
                        centre: v,
                        ahead,
                        behind,
                        slope,
                    });
                }
            }
        }
    }
    let couples = if cfg.lambda_couple > 0.0 {
        ring.iter()
            .filter_map(|&i| Some((index[0][i]?, index[1][i]?)))
            .collect()
    } else {
        Vec::new()
    };
    System {
        pixels,
        front_count,
        pairs,
        priors,
        couples,
        demoted,
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Unknowns whose connected component holds no prior pixel.
fn unanchored(sys: &System, cfg: &DbiniConfig) -> Vec<bool> {
    let n = sys.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut union = |a: usize, b: usize| {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    };
    for p in &sys.pairs {
        for other in [p.ahead, p.behind].into_iter().flatten() {
            union(p.centre, other);
        }
    }
    for &(f, b) in &sys.couples {
        union(f, b);
    }
    let mut anchored = vec![false; n];
    if cfg.lambda_prior > 0.0 {
        for &(v, _) in &sys.priors {
            let r = find(&mut parent, v);
            anchored[r] = true;
        }
    }
    (0..n).map(|v| !anchored[find(&mut parent, v)]).collect()
}

/// Integrates front and back normals into depth fields (see the module
/// docs for the objective). Pixels not connected to any prior pixel are
/// dropped from the output masks; a surface left with nothing anchored is
/// an [`Error::UnanchoredGauge`].
pub fn integrate(problem: &DbiniProblem, cfg: &DbiniConfig) -> Result<DbiniOutput> {
    cfg.validate()?;
    let harmonized = harmonize_masks(problem)?;
    let problem = &harmonized.problem;
    let (w, h) = (problem.width(), problem.height());
    let units = match cfg.projection {
        ProjectionModel::Perspective => Units::Log {
            fx: problem.camera.fx(),
        },
        ProjectionModel::Orthographic => {
            let pitch = match cfg.pixel_pitch {
                Some(p) => p,
                None => {
                    let median = problem
                        .prior_front
                        .median_depth()
                        .or_else(|| problem.prior_back.median_depth())
                        .ok_or_else(|| Error::UnanchoredGauge("no prior pixels in either surface".into()))?;
                    median / problem.camera.fx()
                }
            };
            Units::Ortho { pitch }
        }
    };

    let mut masks = [problem.normals_front.mask.clone(), problem.normals_back.mask.clone()];
    let mut sys = build(problem, [&masks[0], &masks[1]], &harmonized.ring, units, cfg);
    let loose = unanchored(&sys, cfg);
    let dropped = loose.iter().filter(|&&l| l).count();
    if dropped > 0 {
        for (v, _) in loose.iter().enumerate().filter(|(_, &l)| l) {
            let surface = usize::from(v >= sys.front_count);
            masks[surface][sys.pixels[v]] = false;
        }
        log::debug!("integration dropped {dropped} unanchored pixels");
        sys = build(problem, [&masks[0], &masks[1]], &harmonized.ring, units, cfg);
    }
    let front_count = sys.front_count;
    if front_count == 0 || sys.len() == front_count {
        return Err(Error::UnanchoredGauge(
            "a surface has no pixel connected to a depth prior".into(),
        ));
    }

    // Start from the priors, filling the rest with each surface's mean prior.
    let mut z0 = vec![f64::NAN; sys.len()];
    for &(v, t) in &sys.priors {
        z0[v] = t;
    }
    let all_mean = mean(sys.priors.iter().map(|&(_, t)| t)).unwrap_or(0.0);
    for range in [0..front_count, front_count..sys.len()] {
        let m = mean(range.clone().filter_map(|v| (!z0[v].is_nan()).then_some(z0[v]))).unwrap_or(all_mean);
        for v in range {
            if z0[v].is_nan() {
                z0[v] = m;
            }
        }
    }
    let mut z = DVector::from_vec(z0);
    let max_iter = 10 * sys.len();
    let mut objective = Vec::with_capacity(cfg.outer_iterations);
    let mut cg_iterations = 0;
    let mut weights = sys.weights(None, cfg.k_bilateral);
    for outer in 0..cfg.outer_iterations {
        if outer > 0 {
            weights = sys.weights(Some(z.as_slice()), cfg.k_bilateral);
        }
        let (a, b) = sys.normal_equations(&weights, cfg);
        cg_iterations += pcg(&a, &b, &mut z, cfg.tolerance, max_iter);
        objective.push(sys.objective(z.as_slice(), cfg));
    }
    let weights = sys.weights(Some(z.as_slice()), cfg.k_bilateral);

    let mut depth = [vec![0.0; w * h], vec![0.0; w * h]];
    for (v, &i) in sys.pixels.iter().enumerate() {
        depth[usize::from(v >= front_count)][i] = units.to_depth(z[v]);
    }
    let (mut wsum, mut wres) = (0.0, 0.0);
    for (p, &(wa, wb)) in sys.pairs.iter().zip(&weights) {
        let (f, b) = p.residuals(z.as_slice());
        for (r, wt) in [(f, wa), (b, wb)] {
            if let Some(r) = r {
                wsum += wt;
                wres += wt * r * r;
            }
        }
    }
    let prior_dev = rms(sys
        .priors
        .iter()
        .map(|&(v, t)| units.to_depth(z[v]) - units.to_depth(t)));
    let gap = harmonized
        .ring
        .iter()
        .filter(|&&i| masks[0][i] && masks[1][i])
        .map(|&i| (depth[0][i] - depth[1][i]).abs())
        .fold(0.0, f64::max);
    let [depth_front, depth_back] = depth;
    let [mask_front, mask_back] = masks;
    Ok(DbiniOutput {
        front: DepthField::new(w, h, depth_front, mask_front)?,
        back: DepthField::new(w, h, depth_back, mask_back)?,
        report: DbiniReport {
            rms_normal_residual: if wsum > 0.0 { (wres / wsum).sqrt() } else { 0.0 },
            rms_prior_deviation: prior_dev,
            boundary_gap_max: gap,
            objective,
            demoted: sys.demoted,
            unanchored: dropped,
            cg_iterations,
        },
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    mean(values.map(|v| v * v)).map_or(0.0, f64::sqrt)
}
