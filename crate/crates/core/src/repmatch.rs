//! Gradient-based representation matching: optimise an input so that its
//! representation approaches a target, and inspect the Jacobian of the map.

use nalgebra::DMatrix;
use rcdm_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::diffmap::DiffMap;
use crate::error::{Error, Result};
use crate::rng::{randn, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// Half squared Euclidean distance, so a unit gradient step on the
    /// identity map lands exactly on the target.
    L2,
    L1,
    /// `1 − cos(f(x), h)`
    Cosine,
}

impl Distance {
    pub const ALL: [Distance; 3] = [Distance::L2, Distance::L1, Distance::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            Distance::L2 => "l2",
            Distance::L1 => "l1",
            Distance::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Distance> {
        match s {
            "l2" => Ok(Distance::L2),
            "l1" => Ok(Distance::L1),
            "cosine" => Ok(Distance::Cosine),
            _ => Err(Error::Config(format!("unknown distance {s}"))),
        }
    }

    pub fn value(self, y: &[f64], h: &[f64]) -> f64 {
        self.value_and_grad(y, h).0
    }

    /// Distance and its gradient with respect to `y`.
    pub fn value_and_grad(self, y: &[f64], h: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Distance::L2 => {
                let diff: Vec<f64> = y.iter().zip(h).map(|(a, b)| a - b).collect();
                (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), diff)
            }
            Distance::L1 => {
                let d = y.iter().zip(h).map(|(a, b)| (a - b).abs()).sum();
                let g = y.iter().zip(h).map(|(a, b)| sign(a - b)).collect();
                (d, g)
            }
            Distance::Cosine => {
                let ny = norm(y).max(1e-12);
                let nh = norm(h).max(1e-12);
                let dot: f64 = y.iter().zip(h).map(|(a, b)| a * b).sum();
                let cos = dot / (ny * nh);
                let g = y
                    .iter()
                    .zip(h)
                    .map(|(&a, &b)| -(b / (ny * nh) - cos * a / (ny * ny)))
                    .collect();
                (1.0 - cos, g)
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
    Lbfgs,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::GradientDescent => "GD",
            Optimizer::Adam => "Adam",
            Optimizer::Lbfgs => "L-BFGS",
        }
    }

    pub fn parse(s: &str) -> Result<Optimizer> {
        match s {
            "gd" | "gradient-descent" => Ok(Optimizer::GradientDescent),
            "adam" => Ok(Optimizer::Adam),
            "lbfgs" | "l-bfgs" => Ok(Optimizer::Lbfgs),
            _ => Err(Error::Config(format!("unknown optimizer {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Halve the step size after `patience` steps without improvement.
    Plateau,
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Plateau => "plateau",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<LrSchedule> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "plateau" => Ok(LrSchedule::Plateau),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub distance: Distance,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub steps: usize,
    pub step_size: f64,
    /// Stop once the distance is at or below this value.
    pub tolerance: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lbfgs_history: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            distance: Distance::L2,
            optimizer: Optimizer::Adam,
            schedule: LrSchedule::Plateau,
            steps: 1000,
            step_size: 0.01,
            tolerance: 0.0,
            plateau_factor: 0.5,
            plateau_patience: 100,
            lbfgs_history: 10,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("match needs steps ≥ 1, step size > 0, tolerance ≥ 0".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.lbfgs_history == 0 {
            return Err(Error::Config("plateau factor must be in (0, 1) and history ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult<T> {
    /// Final iterate; not clamped to the pixel range.
    pub x_final: Tensor<T>,
    /// Distance before the first step and after every step.
    pub distances: Vec<f64>,
    pub d0: f64,
    pub d_final: f64,
    pub relative_distance_percent: f64,
    pub converged: bool,
}

/// `100 − 100·|d0 − dT| / d0`
pub fn relative_distance(d0: f64, dt: f64) -> Result<f64> {
    if !(d0 >= 0.0 && dt >= 0.0) {
        return Err(Error::InvalidRange(format!("distances must be non-negative, got {d0}, {dt}")));
    }
    if d0 == 0.0 {
        return Err(Error::DivisionByZero("initial distance is zero".into()));
    }
    Ok(100.0 - 100.0 * (d0 - dt).abs() / d0)
}

/// Standard-normal image clamped to `[-1, 1]`.
pub fn random_init<T: Real>(shape: [usize; 3], rng: &mut Rng) -> Tensor<T> {
    randn::<T>(&[1, shape[0], shape[1], shape[2]], rng).map(|v| v.max(-T::one()).min(T::one()))
}

struct Objective<'a, T: Real, F: DiffMap<T> + ?Sized> {
    f: &'a F,
    target: Vec<f64>,
    distance: Distance,
    shape: Vec<usize>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real, F: DiffMap<T> + ?Sized> Objective<'_, T, F> {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let xt = Tensor::new(self.shape.clone(), x.iter().map(|&v| T::lit(v)).collect());
        let mut d = 0.0;
        let (_, gx) = self.f.value_and_vjp(&xt, &mut |y| {
            let yv: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
            let (dv, g) = self.distance.value_and_grad(&yv, &self.target);
            d = dv;
            Tensor::new(y.shape().to_vec(), g.into_iter().map(T::lit).collect())
        })?;
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("{} distance", self.distance.name())));
        }
        Ok((d, gx.data().iter().map(|v| v.as_f64()).collect()))
    }
}

struct Plateau {
    best: f64,
    since: usize,
    scale: f64,
}

/// Optimises `x` from `x_init` to reduce `d(f(x), h_target)`.
pub fn match_representation<T: Real, F: DiffMap<T> + ?Sized>(
    f: &F,
    h_target: &[f64],
    x_init: &Tensor<T>,
    cfg: &MatchConfig,
) -> Result<MatchResult<T>> {
    cfg.validate()?;
    f.check_input(x_init)?;
    if x_init.shape()[0] != 1 {
        return Err(Error::ShapeMismatch("matching optimises a single image".into()));
    }
    if h_target.len() != f.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.output_dim(),
            got: h_target.len(),
        });
    }
    let obj = Objective {
        f,
        target: h_target.to_vec(),
        distance: cfg.distance,
        shape: x_init.shape().to_vec(),
        _t: std::marker::PhantomData,
    };
    let mut x: Vec<f64> = x_init.data().iter().map(|v| v.as_f64()).collect();
    let (mut d, mut g) = obj.eval(&x)?;
    let d0 = d;
    let mut distances = vec![d];
    let mut plateau = Plateau {
        best: d,
        since: 0,
        scale: 1.0,
    };
    let n = x.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let done = |d: f64| d == 0.0 || (cfg.tolerance > 0.0 && d <= cfg.tolerance);

    let mut step = 0;
    while step < cfg.steps && !done(d) {
        let lr = cfg.step_size
            * match cfg.schedule {
                LrSchedule::Constant => 1.0,
                LrSchedule::Plateau => plateau.scale,
                LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos()),
            };
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= lr * gi);
                (d, g) = obj.eval(&x)?;
            }
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for i in 0..n {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
                (d, g) = obj.eval(&x)?;
            }
            Optimizer::Lbfgs => {
                let mut p = lbfgs_direction(&g, &history);
                let mut slope = dot(&g, &p);
                if !(slope < 0.0) {
                    history.clear();
                    p = g.iter().map(|v| -v).collect();
                    slope = -dot(&g, &g);
                }
                let mut alpha = lr;
                let mut accepted = None;
                for _ in 0..30 {
                    let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
                    // A trial point that overflows is a rejected step, not a failure.
                    match obj.eval(&xn) {
                        Ok((dn, gn)) if dn <= d + 1e-4 * alpha * slope => {
                            accepted = Some((xn, dn, gn));
                            break;
                        }
                        Ok(_) | Err(Error::NonFinite(_)) => {}
                        Err(e) => return Err(e),
                    }
                    alpha *= 0.5;
                }
                if let Some((xn, dn, gn)) = accepted {
                    let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                    if dot(&s, &y) > 1e-12 {
                        history.push((s, y));
                        if history.len() > cfg.lbfgs_history {
                            history.remove(0);
                        }
                    }
                    (x, d, g) = (xn, dn, gn);
                } else {
                    history.clear();
                }
            }
        }
        distances.push(d);
        if d < plateau.best * (1.0 - 1e-4) {
            plateau.best = d;
            plateau.since = 0;
        } else {
            plateau.since += 1;
            if plateau.since >= cfg.plateau_patience {
                plateau.scale *= cfg.plateau_factor;
                plateau.since = 0;
            }
        }
        step += 1;
    }
    let relative = if d0 == 0.0 { 0.0 } else { relative_distance(d0, d)? };
    Ok(MatchResult {
        x_final: Tensor::new(x_init.shape().to_vec(), x.iter().map(|&v| T::lit(v)).collect()),
        distances,
        d0,
        d_final: d,
        relative_distance_percent: relative,
        converged: d <= cfg.tolerance,
    })
}

/// Two-loop recursion for `−H·g`.
fn lbfgs_direction(g: &[f64], history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Gradients of the selected output coordinates with respect to the
/// flattened input, one row per index.
pub fn jacobian_rows<T: Real, F: DiffMap<T> + ?Sized>(f: &F, x: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    f.check_input(x)?;
    if x.shape()[0] != 1 {
        return Err(Error::ShapeMismatch("Jacobian rows are taken at a single image".into()));
    }
    let k = f.output_dim();
    if let Some(&bad) = rows.iter().find(|&&r| r >= k) {
        return Err(Error::IndexOutOfRange(format!("row {bad} of a {k}-dimensional output")));
    }
    let d = f.input_dim();
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        let (_, gx) = f.value_and_vjp(x, &mut |y| {
            Tensor::from_fn(y.shape(), |i| if i == r { T::one() } else { T::zero() })
        })?;
        out.extend_from_slice(gx.data());
    }
    Ok(Tensor::new(vec![rows.len(), d], out))
}

pub fn jacobian<T: Real, F: DiffMap<T> + ?Sized>(f: &F, x: &Tensor<T>) -> Result<Tensor<T>> {
    let rows: Vec<usize> = (0..f.output_dim()).collect();
    jacobian_rows(f, x, &rows)
}

/// Singular values of a row-major matrix, largest first.
pub fn singular_values(m: &Tensor<f64>) -> Vec<f64> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mat = DMatrix::from_row_slice(r, c, m.data());
    let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rank_tolerance · σ_max`.
pub fn numerical_rank(sv: &[f64], rank_tolerance: f64) -> usize {
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tolerance * max).count()
}

/// `D − rank(J_f(x))`: the dimension of the input directions that leave the
/// representation unchanged to first order.
pub fn nullspace_dimension<T: Real, F: DiffMap<T> + ?Sized>(f: &F, x: &Tensor<T>, rank_tolerance: f64) -> Result<usize> {
    if !(rank_tolerance > 0.0) {
        return Err(Error::InvalidRange(format!("rank tolerance {rank_tolerance}")));
    }
    let j = jacobian(f, x)?.cast::<f64>();
    let rank = numerical_rank(&singular_values(&j), rank_tolerance);
    let dim = f.input_dim() - rank;
    debug_assert!(dim + f.output_dim() >= f.input_dim());
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JRow {
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    /// Final distance per objective, in [`Distance::ALL`] order.
    pub distances: [f64; 3],
    pub relative_percent: [f64; 3],
    /// Pixel-space L2 between the matched input and the source image, when known.
    pub pixel_l2: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JTable {
    pub steps: usize,
    pub rows: Vec<JRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JTableConfig {
    pub steps: usize,
    pub step_size_gd: f64,
    pub step_size_adam: f64,
    pub step_size_lbfgs: f64,
}

impl Default for JTableConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            step_size_gd: 0.01,
            step_size_adam: 0.01,
            step_size_lbfgs: 1.0,
        }
    }
}

impl JTable {
    pub const ROW_ORDER: [(Optimizer, LrSchedule); 6] = [
        (Optimizer::Adam, LrSchedule::Plateau),
        (Optimizer::Adam, LrSchedule::Cosine),
        (Optimizer::GradientDescent, LrSchedule::Plateau),
        (Optimizer::GradientDescent, LrSchedule::Cosine),
        (Optimizer::Lbfgs, LrSchedule::Plateau),
        (Optimizer::Lbfgs, LrSchedule::Cosine),
    ];

    pub const COLUMNS: [&'static str; 8] = [
        "optimizer",
        "schedule",
        "l2",
        "l1",
        "cosine",
        "relative_l2_percent",
        "relative_l1_percent",
        "relative_cosine_percent",
    ];

    pub fn to_csv(&self) -> String {
        let mut out = Self::COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:.6e},{:.3},{:.3},{:.3}\n",
                r.optimizer.name(),
                r.schedule.name(),
                r.distances[0],
                r.distances[1],
                r.distances[2],
                r.relative_percent[0],
                r.relative_percent[1],
                r.relative_percent[2]
            ));
        }
        out
    }
}

/// Runs every optimiser/schedule pair against every distance.
pub fn j_table<T: Real, F: DiffMap<T> + ?Sized>(
    f: &F,
    h_target: &[f64],
    x_init: &Tensor<T>,
    source: Option<&Tensor<T>>,
    cfg: &JTableConfig,
) -> Result<JTable> {
    let mut rows = Vec::new();
    for (optimizer, schedule) in JTable::ROW_ORDER {
        let mut distances = [0.0; 3];
        let mut relative = [0.0; 3];
        let mut pixel = [0.0; 3];
        for (i, distance) in Distance::ALL.into_iter().enumerate() {
            let step_size = match optimizer {
                Optimizer::GradientDescent => cfg.step_size_gd,
                Optimizer::Adam => cfg.step_size_adam,
                Optimizer::Lbfgs => cfg.step_size_lbfgs,
            };
            let r = match_representation(
                f,
                h_target,
                x_init,
                &MatchConfig {
                    distance,
                    optimizer,
                    schedule,
                    steps: cfg.steps,
                    step_size,
                    ..Default::default()
                },
            )?;
            distances[i] = r.d_final;
            relative[i] = r.relative_distance_percent;
            if let Some(s) = source {
                let diff = r.x_final.zip_map(s, |a, b| a - b);
                pixel[i] = diff.norm().as_f64();
            }
        }
        rows.push(JRow {
            optimizer,
            schedule,
            distances,
            relative_percent: relative,
            pixel_l2: source.map(|_| pixel),
        });
    }
    Ok(JTable { steps: cfg.steps, rows })
}
