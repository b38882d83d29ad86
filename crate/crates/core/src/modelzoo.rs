//! Closed-form model geometries: metric generators, transition maps, and
//! rough perturbations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::{Atlas, Chart, Transition};
use crate::curvature::{riemann, sec_extremes};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, MetricField};
use crate::linalg;

/// Smooth bump equal to 1 at 0 and vanishing for `s ≥ 1`.
pub fn unit_bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// A metric given in closed form in one chart's coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// The Euclidean metric.
    Flat,
    /// A constant symmetric positive-definite matrix, row-major.
    Constant(Vec<f64>),
    /// `4R⁴/(R² + |x|²)² δ`, the round sphere of radius R.
    Stereographic { radius: f64 },
    /// `4/(1 − |x|²)² δ`, curvature −1.
    Poincare,
    /// `base + a·b(|x−x₀|/ρ)·|x−x₀|^{1+α}` added to every diagonal entry.
    Perturbed {
        base: Box<Generator>,
        amplitude: f64,
        alpha: f64,
        center: Vec<f64>,
        support: f64,
    },
}

impl Generator {
    /// Writes the full `n×n` matrix at `x` into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let conformal = |out: &mut [f64], s: f64| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                out[i * n + i] = s;
            }
        };
        match self {
            Generator::Flat => conformal(out, 1.0),
            Generator::Constant(a) => out.copy_from_slice(a),
            Generator::Stereographic { radius } => {
                let rr = radius * radius;
                conformal(out, 4.0 * rr * rr / (rr + r2).powi(2))
            }
            Generator::Poincare => conformal(out, 4.0 / (1.0 - r2).powi(2)),
            Generator::Perturbed {
                base,
                amplitude,
                alpha,
                center,
                support,
            } => {
                base.eval(x, out);
                let d = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let bump = unit_bump(d / support);
                if bump > 0.0 {
                    let add = amplitude * bump * d.powf(1.0 + alpha);
                    for i in 0..n {
                        out[i * n + i] += add;
                    }
                }
            }
        }
    }

    pub fn matrix(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len() * x.len()];
        self.eval(x, &mut out);
        out
    }

    pub fn sample(&self, lattice: &Lattice) -> Result<MetricField> {
        MetricField::sample(lattice, |x, g| self.eval(x, g))
    }
}

/// A closed-form coordinate change between charts.
#[derive(Clone, Debug, PartialEq)]
pub enum TransitionMap {
    Identity,
    /// `x ↦ A x + b` with `A` row-major.
    Affine {
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
    /// `x ↦ R² x / |x|²`, its own inverse; undefined at the origin.
    Inversion {
        radius: f64,
    },
}

impl TransitionMap {
    /// Image of `x`, or `None` where the map is undefined.
    pub fn apply(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        match self {
            TransitionMap::Identity => Some(x.to_vec()),
            TransitionMap::Affine { matrix, offset } => Some(
                (0..n)
                    .map(|i| (0..n).map(|j| matrix[i * n + j] * x[j]).sum::<f64>() + offset[i])
                    .collect(),
            ),
            TransitionMap::Inversion { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (r2 > 1e-300).then(|| x.iter().map(|v| radius * radius * v / r2).collect())
            }
        }
    }

    /// Row-major Jacobian `∂τ^a/∂x^b` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        match self {
            TransitionMap::Identity => {
                let mut j = vec![0.0; n * n];
                (0..n).for_each(|i| j[i * n + i] = 1.0);
                Some(j)
            }
            TransitionMap::Affine { matrix, .. } => Some(matrix.clone()),
            TransitionMap::Inversion { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 <= 1e-300 {
                    return None;
                }
                let s = radius * radius / r2;
                let mut j = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        j[a * n + b] = s * (delta - 2.0 * x[a] * x[b] / r2);
                    }
                }
                Some(j)
            }
        }
    }

    pub fn inverse(&self) -> Result<TransitionMap> {
        Ok(match self {
            TransitionMap::Identity => TransitionMap::Identity,
            TransitionMap::Inversion { radius } => TransitionMap::Inversion { radius: *radius },
            TransitionMap::Affine { matrix, offset } => {
                let n = offset.len();
                let mut inv = vec![0.0; n * n];
                linalg::inverse(n, matrix, &mut inv)
                    .ok_or_else(|| Error::InvalidParameter("singular affine transition".into()))?;
                let b = (0..n)
                    .map(|i| -(0..n).map(|j| inv[i * n + j] * offset[j]).sum::<f64>())
                    .collect();
                TransitionMap::Affine {
                    matrix: inv,
                    offset: b,
                }
            }
        })
    }
}

/// An analytic geometry with its atlas and reference curvature.
#[derive(Clone, Debug)]
pub struct ModelGeometry {
    pub name: String,
    pub atlas: Atlas,
    /// Declared constant sectional curvature, if any.
    pub reference_sec: Option<f64>,
    /// Point near which second derivatives blow up, for rough perturbations.
    pub rough_point: Option<Vec<f64>>,
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "dimension {n} not supported (2 or 3)"
        )))
    }
}

/// Rotation by `angle` in the plane of the first two axes.
fn rotation(n: usize, angle: f64) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    (0..n).for_each(|i| a[i * n + i] = 1.0);
    let (s, c) = angle.sin_cos();
    a[0] = c;
    a[1] = -s;
    a[n] = s;
    a[n + 1] = c;
    a
}

/// Euclidean space in one chart of radius 1.
pub fn flat(n: usize) -> Result<ModelGeometry> {
    check_dim(n)?;
    Ok(ModelGeometry {
        name: format!("flat(n={n})"),
        atlas: Atlas::new(n, vec![Chart::new("main", 1.0, Generator::Flat)], vec![])?,
        reference_sec: Some(0.0),
        rough_point: None,
    })
}

/// Euclidean space in two overlapping charts related by a rigid motion.
pub fn flat_affine(n: usize) -> Result<ModelGeometry> {
    check_dim(n)?;
    let offset: Vec<f64> = [0.8, 0.3, -0.2][..n].to_vec();
    let forward = TransitionMap::Affine {
        matrix: rotation(n, 0.7),
        offset,
    };
    let backward = forward.inverse()?;
    let charts = vec![
        Chart::new("a", 1.0, Generator::Flat),
        Chart::new("b", 1.0, Generator::Flat),
    ];
    let transitions = vec![
        Transition::new(0, 1, forward),
        Transition::new(1, 0, backward),
    ];
    Ok(ModelGeometry {
        name: format!("flat-affine(n={n})"),
        atlas: Atlas::new(n, charts, transitions)?,
        reference_sec: Some(0.0),
        rough_point: None,
    })
}

/// Default chart radius for the sphere, relative to its radius. Two charts
/// cover the sphere with their half-radius balls only when this exceeds 2.
pub const SPHERE_CHART_FACTOR: f64 = 2.5;

/// Round sphere of radius `radius` in two stereographic charts of coordinate
/// radius `chart_radius`, related by inversion in the sphere of radius R.
pub fn sphere(n: usize, radius: f64, chart_radius: f64) -> Result<ModelGeometry> {
    check_dim(n)?;
    if !(radius > 0.0) || !(chart_radius > 0.0) {
        return Err(Error::InvalidParameter(
            "sphere radii must be positive".into(),
        ));
    }
    let generator = Generator::Stereographic { radius };
    let map = TransitionMap::Inversion { radius };
    let charts = vec![
        Chart::new("north", chart_radius, generator.clone()),
        Chart::new("south", chart_radius, generator),
    ];
    let transitions = vec![
        Transition::new(0, 1, map.clone()),
        Transition::new(1, 0, map),
    ];
    Ok(ModelGeometry {
        name: format!("sphere(n={n},R={radius},r={chart_radius})"),
        atlas: Atlas::new(n, charts, transitions)?,
        reference_sec: Some(1.0 / (radius * radius)),
        rough_point: None,
    })
}

pub const HYPERBOLIC_CHART_RADIUS: f64 = 0.5;

/// Poincaré ball, one chart.
pub fn hyperbolic(n: usize, chart_radius: f64) -> Result<ModelGeometry> {
    check_dim(n)?;
    if !(chart_radius > 0.0) || chart_radius * (n as f64).sqrt() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "Poincaré chart radius {chart_radius} must keep the lattice cube inside the unit ball"
        )));
    }
    Ok(ModelGeometry {
        name: format!("hyperbolic(n={n},r={chart_radius})"),
        atlas: Atlas::new(
            n,
            vec![Chart::new("ball", chart_radius, Generator::Poincare)],
            vec![],
        )?,
        reference_sec: Some(-1.0),
        rough_point: None,
    })
}

/// Smallest eigenvalue of a generator over a fine sample of a ball.
fn min_eigenvalue(generator: &Generator, n: usize, center: &[f64], radius: f64) -> f64 {
    let lattice = Lattice::new(n, radius, 41).expect("valid sampling lattice");
    let mut lo = f64::INFINITY;
    let mut x = vec![0.0; n];
    for node in 0..lattice.len() {
        lattice.point(node, &mut x);
        for (v, c) in x.iter_mut().zip(center) {
            *v += c;
        }
        lo = lo.min(linalg::sym_eigenvalues(n, &generator.matrix(&x))[0]);
    }
    lo
}

/// Largest admissible amplitude: half the base's smallest eigenvalue over
/// the support, divided by the shape's maximum `ρ^{1+α}`.
pub fn amplitude_cap(base: &Generator, n: usize, alpha: f64, center: &[f64], support: f64) -> f64 {
    0.5 * min_eigenvalue(base, n, center, support) / support.powf(1.0 + alpha)
}

/// Adds a `C^{1,α}` bump `a·b(|x−x₀|/ρ)·|x−x₀|^{1+α}` to each diagonal entry of a
/// single-chart geometry.
pub fn perturb(
    geometry: &ModelGeometry,
    amplitude: f64,
    alpha: f64,
    center: &[f64],
    support: f64,
) -> Result<ModelGeometry> {
    let atlas = &geometry.atlas;
    if atlas.charts().len() != 1 {
        return Err(Error::InvalidParameter(
            "perturb needs a single-chart geometry".into(),
        ));
    }
    let n = atlas.dim();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "perturbation exponent {alpha} outside (0, 1)"
        )));
    }
    if center.len() != n || !(support > 0.0) {
        return Err(Error::InvalidParameter(
            "perturbation center or support invalid".into(),
        ));
    }
    let chart = &atlas.charts()[0];
    if amplitude == 0.0 {
        return Ok(geometry.clone());
    }
    let cap = amplitude_cap(&chart.generator, n, alpha, center, support);
    if amplitude.abs() > cap {
        return Err(Error::InvalidParameter(format!(
            "perturbation amplitude {amplitude} exceeds the positive-definiteness cap {cap:.6e}"
        )));
    }
    let generator = Generator::Perturbed {
        base: Box::new(chart.generator.clone()),
        amplitude,
        alpha,
        center: center.to_vec(),
        support,
    };
    let chart = Chart::new(&chart.id, chart.radius, generator);
    Ok(ModelGeometry {
        name: format!(
            "perturbed[{}](a={amplitude},alpha={alpha},rho={support})",
            geometry.name
        ),
        atlas: Atlas::new(n, vec![chart], vec![])?,
        reference_sec: None,
        rough_point: Some(center.to_vec()),
    })
}

/// Parses `name[:key=value,...]`.
///
/// Names: `flat`, `flat-affine`, `sphere`, `hyperbolic`, and `perturbed-<base>`
/// for single-chart bases. Keys: `n`, `R`, `r`, and for perturbations `a`,
/// `alpha`, `rho`, `x0` (components separated by `;`).
pub fn parse_geometry(spec: &str) -> Result<ModelGeometry> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params: BTreeMap<String, String> = BTreeMap::new();
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("geometry parameter '{item}' is not key=value"))
        })?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut take = |key: &str| params.remove(key);
    let num = |key: &str, v: Option<String>, default: f64| -> Result<f64> {
        v.map_or(Ok(default), |s| {
            s.parse().map_err(|_| {
                Error::Config(format!("geometry parameter {key}='{s}' is not a number"))
            })
        })
    };
    let n = num("n", take("n"), 2.0)?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(Error::Config(format!("dimension {n} is not an integer")));
    }
    let n = n as usize;
    let base_name = name.strip_prefix("perturbed-").unwrap_or(name);
    let base = match base_name {
        "flat" => flat(n)?,
        "flat-affine" => flat_affine(n)?,
        "sphere" => {
            let radius = num("R", take("R"), 1.0)?;
            let chart = num("r", take("r"), SPHERE_CHART_FACTOR * radius)?;
            sphere(n, radius, chart)?
        }
        "hyperbolic" => hyperbolic(n, num("r", take("r"), HYPERBOLIC_CHART_RADIUS)?)?,
        other => return Err(Error::Config(format!("unknown geometry '{other}'"))),
    };
    let geometry = if name.starts_with("perturbed-") {
        let r = base.atlas.charts()[0].radius;
        let alpha = num("alpha", take("alpha"), 0.6)?;
        let support = num("rho", take("rho"), r / 2.0)?;
        let center = match take("x0") {
            None => vec![0.0; n],
            Some(s) => s
                .split(';')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("x0 component '{c}' is not a number")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if center.len() != n {
            return Err(Error::Config(format!(
                "x0 has {} components, expected {n}",
                center.len()
            )));
        }
        let default_a = 0.5
            * amplitude_cap(
                &base.atlas.charts()[0].generator,
                n,
                alpha,
                &center,
                support,
            );
        let a = num("a", take("a"), default_a)?;
        perturb(&base, a, alpha, &center, support)?
    } else {
        base
    };
    if let Some(k) = params.keys().next() {
        return Err(Error::Config(format!(
            "unknown parameter '{k}' for geometry '{name}'"
        )));
    }
    Ok(geometry)
}

/// Largest relative mismatch between chart j's generator and the pullback of
/// chart i's generator over seeded random points of each overlap.
pub fn transition_compatibility(geometry: &ModelGeometry, samples: usize, seed: u64) -> f64 {
    let atlas = &geometry.atlas;
    let n = atlas.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for tr in atlas.transitions() {
        let source = &atlas.charts()[tr.source];
        let target = &atlas.charts()[tr.target];
        let mut hits = 0;
        let mut attempts = 0;
        while hits < samples && attempts < 100 * samples {
            attempts += 1;
            let x: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-target.radius..target.radius))
                .collect();
            if x.iter().map(|v| v * v).sum::<f64>().sqrt() >= target.radius {
                continue;
            }
            let (Some(y), Some(jac)) = (tr.map.apply(&x), tr.map.jacobian(&x)) else {
                continue;
            };
            if y.iter().map(|v| v * v).sum::<f64>().sqrt() >= source.radius {
                continue;
            }
            hits += 1;
            let mut pulled = vec![0.0; n * n];
            linalg::congruence(n, &jac, &source.generator.matrix(&y), &mut pulled);
            let direct = target.generator.matrix(&x);
            let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in pulled.iter().zip(&direct) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
    }
    worst
}

/// Reference curvature confirmed numerically: the mean sectional curvature
/// over the half-radius ball of the first chart at `m` and `2m − 1` points,
/// Richardson-extrapolated for a second-order scheme. Fails when the
/// geometry declares a constant that the computation does not reproduce
/// within `tolerance`.
pub fn validated_reference(
    geometry: &ModelGeometry,
    m: usize,
    tolerance: f64,
) -> Result<Option<f64>> {
    let Some(declared) = geometry.reference_sec else {
        return Ok(None);
    };
    let chart = &geometry.atlas.charts()[0];
    let mean_at = |m: usize| -> Result<(f64, f64)> {
        let lattice = Lattice::new(geometry.atlas.dim(), chart.radius, m)?;
        let g = chart.generator.sample(&lattice)?;
        let riem = riemann(&g)?;
        let (lo, hi) = sec_extremes(&g, &riem, &lattice.ball_mask(chart.radius / 2.0), 0)?;
        Ok((0.5 * (lo + hi), lattice.spacing()))
    };
    let (coarse, h1) = mean_at(m)?;
    let (fine, h2) = mean_at(2 * m - 1)?;
    let ratio = (h1 / h2).powi(2);
    let extrapolated = (ratio * fine - coarse) / (ratio - 1.0);
    if (extrapolated - declared).abs() > tolerance {
        return Err(Error::InvalidParameter(format!(
            "{}: computed curvature {extrapolated:.6e} differs from declared {declared}",
            geometry.name
        )));
    }
    Ok(Some(extrapolated))
}
