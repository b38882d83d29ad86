//! Charts, transitions, the bump partition of unity, and assembly of the
//! globally mollified metric `g^[t] = Σ_i ρ_i g^{[t,ψ_i]}` in every chart.
//!
//! A transition with source `i` and target `j` maps chart-j coordinates to
//! chart-i coordinates, `τ = ψ_i⁻¹ ∘ ψ_j`. Pulling chart i's metric back along
//! it gives chart j's representation: `(Dτ)ᵀ g_i(τ(x)) (Dτ)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::mollify;
use crate::lattice::{interpolate, Field, Lattice, MetricField};
use crate::linalg;
use crate::modelzoo::{Generator, TransitionMap};
use crate::norms::check_n0;

/// Cubic tensor-product interpolation.
pub const CUBIC: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub id: String,
    pub radius: f64,
    pub generator: Generator,
}

impl Chart {
    pub fn new(id: &str, radius: f64, generator: Generator) -> Self {
        Self {
            id: id.to_string(),
            radius,
            generator,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub source: usize,
    pub target: usize,
    pub map: TransitionMap,
}

impl Transition {
    pub fn new(source: usize, target: usize, map: TransitionMap) -> Self {
        Self {
            source,
            target,
            map,
        }
    }
}

/// How the plateau radius of each chart's bump is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlateauRule {
    /// Plateau at this fraction of the chart radius.
    Fraction(f64),
    /// Plateau at `r·e^{-2Q}/2`, with `Q` the N₀ chart norm of the generator
    /// on the chart ball sampled at the given points per axis.
    ChartNorm(usize),
}

pub const SUPPORT_FRACTION: f64 = 0.75;
pub const DEFAULT_PLATEAU_FRACTION: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct Atlas {
    n: usize,
    charts: Vec<Chart>,
    transitions: Vec<Transition>,
    plateau: Vec<f64>,
    support: Vec<f64>,
    region: Option<Vec<(usize, f64)>>,
}

/// Smooth monotone step from 0 (at u ≤ 0) to 1 (at u ≥ 1).
fn smooth_step(u: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        f(u) / (f(u) + f(1.0 - u))
    }
}

impl Atlas {
    pub fn new(n: usize, charts: Vec<Chart>, transitions: Vec<Transition>) -> Result<Self> {
        if charts.is_empty() {
            return Err(Error::InvalidParameter("atlas without charts".into()));
        }
        for (i, c) in charts.iter().enumerate() {
            if !(c.radius > 0.0) || !c.radius.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "chart '{}' has radius {}",
                    c.id, c.radius
                )));
            }
            if charts[..i].iter().any(|d| d.id == c.id) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate chart id '{}'",
                    c.id
                )));
            }
        }
        for (k, t) in transitions.iter().enumerate() {
            if t.source >= charts.len() || t.target >= charts.len() || t.source == t.target {
                return Err(Error::InvalidParameter(format!(
                    "transition {k} joins invalid charts {} and {}",
                    t.source, t.target
                )));
            }
            if transitions[..k]
                .iter()
                .any(|u| u.source == t.source && u.target == t.target)
            {
                return Err(Error::InvalidParameter(format!("duplicate transition {k}")));
            }
        }
        let plateau = charts
            .iter()
            .map(|c| DEFAULT_PLATEAU_FRACTION * c.radius)
            .collect();
        let support = charts.iter().map(|c| SUPPORT_FRACTION * c.radius).collect();
        Ok(Self {
            n,
            charts,
            transitions,
            plateau,
            support,
            region: None,
        })
    }

    /// Declares the region the cover must reach, as balls `(chart, radius)`
    /// in chart coordinates.
    pub fn with_region(mut self, region: Vec<(usize, f64)>) -> Result<Self> {
        for &(chart, radius) in &region {
            if chart >= self.charts.len() || !(radius > 0.0) || !radius.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "region ball ({chart}, {radius}) is invalid"
                )));
            }
        }
        self.region = Some(region);
        Ok(self)
    }

    /// The declared region, or every chart's half-radius ball.
    pub fn cover_region(&self) -> Vec<(usize, f64)> {
        self.region.clone().unwrap_or_else(|| default_region(self))
    }

    /// Recomputes the bump plateaus. The support stays at `3r/4`.
    pub fn with_plateau_rule(mut self, rule: PlateauRule) -> Result<Self> {
        for (i, c) in self.charts.iter().enumerate() {
            let p = match rule {
                PlateauRule::Fraction(f) => f * c.radius,
                PlateauRule::ChartNorm(m) => {
                    let lattice = Lattice::new(self.n, c.radius, m)?;
                    let g = c
                        .generator
                        .sample(&lattice)?
                        .restrict(&lattice.ball_mask(c.radius));
                    c.radius * (-2.0 * check_n0(&g)?).exp() / 2.0
                }
            };
            if !(p > 0.0 && p < self.support[i]) {
                return Err(Error::InvalidParameter(format!(
                    "plateau {p} for chart '{}' must lie in (0, {})",
                    c.id, self.support[i]
                )));
            }
            self.plateau[i] = p;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn chart_index(&self, id: &str) -> Option<usize> {
        self.charts.iter().position(|c| c.id == id)
    }

    pub fn plateau(&self, chart: usize) -> f64 {
        self.plateau[chart]
    }

    pub fn lattice(&self, chart: usize, m: usize) -> Result<Lattice> {
        Lattice::new(self.n, self.charts[chart].radius, m)
    }

    /// `ψ_source⁻¹ ∘ ψ_target`, if the atlas provides it.
    pub fn transition(&self, source: usize, target: usize) -> Option<&TransitionMap> {
        if source == target {
            return Some(&TransitionMap::Identity);
        }
        self.transitions
            .iter()
            .find(|t| t.source == source && t.target == target)
            .map(|t| &t.map)
    }

    /// Chart-i coordinates of the point with chart-j coordinates `x`.
    pub fn to_chart(&self, source: usize, target: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.transition(source, target)?.apply(x)
    }

    /// Bump of chart `i` in its own coordinates.
    pub fn bump(&self, chart: usize, y: &[f64]) -> f64 {
        let s = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (p, q) = (self.plateau[chart], self.support[chart]);
        if s <= p {
            1.0
        } else {
            smooth_step((q - s) / (q - p))
        }
    }

    /// `b_i(ψ_j x)`, zero where chart i does not see the point.
    pub fn bump_in(&self, source: usize, target: usize, x: &[f64]) -> f64 {
        self.to_chart(source, target, x)
            .map_or(0.0, |y| self.bump(source, &y))
    }

    /// Partition weights `ρ_i(ψ_j x)` and the bump sum.
    pub fn partition(&self, target: usize, x: &[f64]) -> (Vec<f64>, f64) {
        let bumps: Vec<f64> = (0..self.charts.len())
            .map(|i| self.bump_in(i, target, x))
            .collect();
        let total: f64 = bumps.iter().sum();
        let weights = if total > 0.0 {
            bumps.iter().map(|b| b / total).collect()
        } else {
            vec![0.0; bumps.len()]
        };
        (weights, total)
    }

    /// Whether chart j's point `x` lies in some `ψ_i(B(0, shrink·r_i/2))`.
    pub fn in_covered_region(&self, target: usize, x: &[f64], shrink: f64) -> bool {
        (0..self.charts.len()).any(|i| {
            self.to_chart(i, target, x)
                .is_some_and(|y| norm(&y) < shrink * self.charts[i].radius / 2.0)
        })
    }

    /// Number of full chart balls `ψ_i(B(0, r_i))` containing the point.
    pub fn overlap_count(&self, target: usize, x: &[f64]) -> usize {
        (0..self.charts.len())
            .filter(|&i| {
                self.to_chart(i, target, x)
                    .is_some_and(|y| norm(&y) < self.charts[i].radius)
            })
            .count()
    }

    /// Samples each chart's generator on its lattice.
    pub fn sample(&self, m: usize) -> Result<Vec<MetricField>> {
        (0..self.charts.len())
            .map(|i| self.charts[i].generator.sample(&self.lattice(i, m)?))
            .collect()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionReport {
    /// `max |Σ_i ρ_i − 1|` over covered nodes.
    pub max_sum_error: f64,
    /// Smallest bump sum over covered nodes.
    pub min_denominator: f64,
    /// Nodes with `ρ_i > 0` outside `ψ_i(B(0, 3r_i/4))`.
    pub support_violations: usize,
    pub covered_nodes: usize,
    /// Largest number of charts with positive weight at one node.
    pub max_active: usize,
}

/// Checks the partition of unity on every chart lattice.
pub fn verify_partition(atlas: &Atlas, m: usize) -> Result<PartitionReport> {
    let mut report = PartitionReport {
        max_sum_error: 0.0,
        min_denominator: f64::INFINITY,
        support_violations: 0,
        covered_nodes: 0,
        max_active: 0,
    };
    for j in 0..atlas.charts().len() {
        let lattice = atlas.lattice(j, m)?;
        let mut x = vec![0.0; atlas.dim()];
        for node in 0..lattice.len() {
            lattice.point(node, &mut x);
            let (weights, total) = atlas.partition(j, &x);
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    let y = atlas
                        .to_chart(i, j, &x)
                        .expect("positive weight implies a transition");
                    if norm(&y) >= SUPPORT_FRACTION * atlas.charts()[i].radius {
                        report.support_violations += 1;
                    }
                }
            }
            report.max_active = report
                .max_active
                .max(weights.iter().filter(|&&w| w > 0.0).count());
            if !atlas.in_covered_region(j, &x, 1.0) {
                continue;
            }
            report.covered_nodes += 1;
            if total < 1.0 - 1e-9 {
                return Err(Error::CoverGap {
                    chart: atlas.charts()[j].id.clone(),
                    coords: x.clone(),
                    denominator: total,
                });
            }
            report.min_denominator = report.min_denominator.min(total);
            report.max_sum_error = report
                .max_sum_error
                .max((weights.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverReport {
    pub covered: bool,
    /// Largest number of chart balls containing a sample point.
    pub n: usize,
    pub samples: usize,
    /// First sample not hit by any shrunken ball, as (chart id, coordinates).
    pub gap: Option<(String, Vec<f64>)>,
}

/// Samples the declared region, a union of balls `(chart, radius)` in chart
/// coordinates, and checks it against the shrunken balls
/// `ψ_i(B(0, shrink·r_i/2))`.
pub fn check_cover(
    atlas: &Atlas,
    region: &[(usize, f64)],
    m: usize,
    shrink: f64,
) -> Result<CoverReport> {
    let mut report = CoverReport {
        covered: true,
        n: 0,
        samples: 0,
        gap: None,
    };
    for &(chart, radius) in region {
        if chart >= atlas.charts().len() {
            return Err(Error::InvalidParameter(format!(
                "declared region names chart {chart}"
            )));
        }
        let lattice = Lattice::new(atlas.dim(), radius, m)?;
        let mut x = vec![0.0; atlas.dim()];
        for node in 0..lattice.len() {
            lattice.point(node, &mut x);
            if norm(&x) >= radius {
                continue;
            }
            report.samples += 1;
            report.n = report.n.max(atlas.overlap_count(chart, &x));
            if report.covered && !atlas.in_covered_region(chart, &x, shrink) {
                report.covered = false;
                report.gap = Some((atlas.charts()[chart].id.clone(), x.clone()));
            }
        }
    }
    Ok(report)
}

/// Whole-manifold region for an atlas: every chart's half-radius ball.
pub fn default_region(atlas: &Atlas) -> Vec<(usize, f64)> {
    atlas
        .charts()
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.radius / 2.0))
        .collect()
}

/// Field value at an arbitrary point pulled back along `map`, or `None`.
fn pulled_back_at(
    map: &TransitionMap,
    source: &MetricField,
    x: &[f64],
    points: usize,
    buf: &mut [f64],
) -> Option<Vec<f64>> {
    let n = x.len();
    let y = map.apply(x)?;
    let jac = map.jacobian(x)?;
    if !interpolate(
        source.lattice(),
        source.channels(),
        source.mask(),
        &y,
        points,
        buf,
    ) {
        return None;
    }
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = buf[linalg::sym_index(n, i, j)];
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    let mut out = vec![0.0; n * n];
    linalg::congruence(n, &jac, &g, &mut out);
    Some(out)
}

fn pack(n: usize, full: &[f64], node: usize, channels: &mut [Vec<f64>]) {
    for i in 0..n {
        for j in i..n {
            channels[linalg::sym_index(n, i, j)][node] = 0.5 * (full[i * n + j] + full[j * n + i]);
        }
    }
}

/// `(Dτ)ᵀ g(τ(x)) (Dτ)` on `target`; nodes whose image leaves the source
/// mask are dropped from the output mask.
pub fn pullback_metric(
    map: &TransitionMap,
    source: &MetricField,
    target: &Lattice,
    points: usize,
) -> Result<MetricField> {
    let n = target.dim();
    let sym = linalg::sym_len(n);
    let values: Vec<Option<Vec<f64>>> = (0..target.len())
        .into_par_iter()
        .map(|node| {
            let mut buf = vec![0.0; sym];
            pulled_back_at(map, source, &target.point_vec(node), points, &mut buf)
        })
        .collect();
    let mut channels = vec![vec![0.0; target.len()]; sym];
    let mut mask = vec![false; target.len()];
    for (node, v) in values.iter().enumerate() {
        if let Some(g) = v {
            pack(n, g, node, &mut channels);
            mask[node] = true;
        }
    }
    MetricField::from_channels(target, channels, mask)
}

/// `g^[t]` in every chart from per-chart samples, with cubic interpolation.
pub fn assemble_mollified(
    atlas: &Atlas,
    samples: &[MetricField],
    t: f64,
) -> Result<Vec<MetricField>> {
    assemble_mollified_with(atlas, samples, t, CUBIC)
}

pub fn assemble_mollified_with(
    atlas: &Atlas,
    samples: &[MetricField],
    t: f64,
    points: usize,
) -> Result<Vec<MetricField>> {
    if samples.len() != atlas.charts().len() {
        return Err(Error::LatticeMismatch(format!(
            "{} samples for {} charts",
            samples.len(),
            atlas.charts().len()
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        let r = atlas.charts()[i].radius;
        if s.lattice().dim() != atlas.dim() || s.lattice().radius() != r {
            return Err(Error::LatticeMismatch(format!(
                "sample for chart '{}' is not on its chart lattice",
                atlas.charts()[i].id
            )));
        }
        if !(t > 0.0 && t < r / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "scale {t} outside (0, r/2) for chart radius {r}"
            )));
        }
    }
    let mollified = samples
        .iter()
        .map(|g| mollify(g, t))
        .collect::<Result<Vec<_>>>()?;
    (0..atlas.charts().len())
        .map(|j| assemble_chart(atlas, &mollified, j, points))
        .collect()
}

fn assemble_chart(
    atlas: &Atlas,
    mollified: &[MetricField],
    j: usize,
    points: usize,
) -> Result<MetricField> {
    let lattice = mollified[j].lattice();
    let n = atlas.dim();
    let sym = linalg::sym_len(n);
    let half = atlas.charts()[j].radius / 2.0;
    let values: Vec<Option<Vec<f64>>> = (0..lattice.len())
        .into_par_iter()
        .map(|node| {
            let x = lattice.point_vec(node);
            let (weights, total) = atlas.partition(j, &x);
            if total <= 0.0 {
                return None;
            }
            let mut buf = vec![0.0; sym];
            let mut acc = vec![0.0; n * n];
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let map = atlas.transition(i, j)?;
                let g = pulled_back_at(map, &mollified[i], &x, points, &mut buf)?;
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += w * b;
                }
            }
            Some(acc)
        })
        .collect();
    let mut channels = vec![vec![0.0; lattice.len()]; sym];
    let mut mask = vec![false; lattice.len()];
    for (node, v) in values.iter().enumerate() {
        match v {
            Some(g) => {
                pack(n, g, node, &mut channels);
                mask[node] = true;
            }
            None => {
                let x = lattice.point_vec(node);
                if norm(&x) < half {
                    return Err(Error::ScaleTooLarge(format!(
                        "chart '{}' cannot assemble the mollified metric at x = {x:?}",
                        atlas.charts()[j].id
                    )));
                }
            }
        }
    }
    MetricField::from_channels(lattice, channels, mask)
}

/// Largest entry-wise mismatch between each chart's assembled field and the
/// pullback of every other chart's assembled field, with the number of nodes
/// compared.
pub fn consistency_defect(atlas: &Atlas, assembled: &[MetricField], points: usize) -> (f64, usize) {
    let n = atlas.dim();
    let sym = linalg::sym_len(n);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for tr in atlas.transitions() {
        let source = &assembled[tr.source];
        let target = &assembled[tr.target];
        let lattice = target.lattice();
        let (w, c) = (0..lattice.len())
            .into_par_iter()
            .filter(|&node| target.mask()[node])
            .filter_map(|node| {
                let mut buf = vec![0.0; sym];
                let pulled =
                    pulled_back_at(&tr.map, source, &lattice.point_vec(node), points, &mut buf)?;
                let own = target.matrix_vec(node);
                Some(
                    pulled
                        .iter()
                        .zip(&own)
                        .fold(0.0f64, |a, (p, q)| a.max((p - q).abs())),
                )
            })
            .map(|d| (d, 1usize))
            .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
        worst = worst.max(w);
        compared += c;
    }
    (worst, compared)
}

/// Metric length of the straight segment from `a` to `b` (midpoint rule).
pub fn segment_length(generator: &Generator, a: &[f64], b: &[f64], steps: usize) -> f64 {
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let mut total = 0.0;
    for k in 0..steps {
        let s = (k as f64 + 0.5) / steps as f64;
        let x: Vec<f64> = a.iter().zip(&d).map(|(p, v)| p + s * v).collect();
        total += linalg::quad_form(n, &generator.matrix(&x), &d, &d).sqrt();
    }
    total / steps as f64
}

/// An atlas read from a description file, with an optional declared
/// constant sectional curvature.
#[derive(Clone, Debug)]
pub struct AtlasDescription {
    pub atlas: Atlas,
    pub reference_sec: Option<f64>,
}

/// Parses the plain-text atlas format:
///
/// ```text
/// [atlas]
/// dim = 2
/// reference_sec = 1
///
/// [chart north]
/// radius = 2.5
/// generator = stereographic R=1
///
/// [transition]
/// source = north
/// target = south
/// map = inversion R=1
/// ```
///
/// Generators: `flat`, `poincare`, `stereographic R=..`, `constant <n·n values>`,
/// optionally perturbed by a chart line `perturb = a=.. alpha=.. rho=.. x0=..,..`.
/// Maps: `identity`, `inversion R=..`, `affine A=<n·n values> b=<n values>`.
/// The `[atlas]` key `region = <chart>:<radius>, ...` declares the region the
/// cover check must reach.
pub fn parse_atlas(text: &str) -> Result<AtlasDescription> {
    #[derive(Default)]
    struct Section {
        kind: String,
        name: String,
        line: usize,
        entries: Vec<(String, String, usize)>,
    }
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header.strip_suffix(']').ok_or(Error::Parse {
                line: line_no,
                msg: "unterminated section header".into(),
            })?;
            let mut parts = header.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let name = parts.collect::<Vec<_>>().join(" ");
            if !matches!(kind.as_str(), "atlas" | "chart" | "transition") {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown section '{kind}'"),
                });
            }
            if kind == "chart" && name.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "chart section needs an id".into(),
                });
            }
            sections.push(Section {
                kind,
                name,
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: line_no,
            msg: format!("expected key = value, found '{line}'"),
        })?;
        let section = sections.last_mut().ok_or(Error::Parse {
            line: line_no,
            msg: "entry before any section".into(),
        })?;
        section
            .entries
            .push((k.trim().to_string(), v.trim().to_string(), line_no));
    }

    let mut dim = None;
    let mut reference_sec = None;
    let mut region_spec = None;
    let mut charts = Vec::new();
    let mut pending = Vec::new();
    for s in &sections {
        let get = |key: &str| s.entries.iter().find(|e| e.0 == key);
        for (k, _, line) in &s.entries {
            let allowed: &[&str] = match s.kind.as_str() {
                "atlas" => &["dim", "reference_sec", "region"],
                "chart" => &["radius", "generator", "perturb"],
                _ => &["source", "target", "map"],
            };
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("unknown key '{k}' in {} section", s.kind),
                });
            }
        }
        let require = |key: &str| {
            get(key).ok_or(Error::Parse {
                line: s.line,
                msg: format!("{} section lacks '{key}'", s.kind),
            })
        };
        match s.kind.as_str() {
            "atlas" => {
                if let Some((_, v, line)) = get("dim") {
                    dim = Some(parse_num::<usize>(v, *line)?);
                }
                if let Some((_, v, line)) = get("reference_sec") {
                    reference_sec = Some(parse_num::<f64>(v, *line)?);
                }
                if let Some((_, v, line)) = get("region") {
                    region_spec = Some((v.clone(), *line));
                }
            }
            "chart" => {
                let (_, r, rl) = require("radius")?;
                let (_, gen, gl) = require("generator")?;
                let mut generator = parse_generator(gen, *gl)?;
                if let Some((_, p, pl)) = get("perturb") {
                    generator = parse_perturbation(generator, p, *pl)?;
                }
                charts.push((Chart::new(&s.name, parse_num(r, *rl)?, generator), s.line));
            }
            _ => {
                let (_, src, sl) = require("source")?;
                let (_, tgt, tl) = require("target")?;
                let (_, map, ml) = require("map")?;
                pending.push((src.clone(), *sl, tgt.clone(), *tl, parse_map(map, *ml)?));
            }
        }
    }
    let dim = dim.ok_or(Error::Parse {
        line: 1,
        msg: "missing [atlas] dim".into(),
    })?;
    let index = |id: &str, line: usize| {
        charts
            .iter()
            .position(|(c, _)| c.id == id)
            .ok_or(Error::Parse {
                line,
                msg: format!("unknown chart '{id}'"),
            })
    };
    let mut transitions = Vec::new();
    for (src, sl, tgt, tl, map) in pending {
        transitions.push(Transition::new(index(&src, sl)?, index(&tgt, tl)?, map));
    }
    for (c, line) in &charts {
        let mut m = vec![0.0; dim * dim];
        let probe = vec![0.0; dim];
        let bad_shape = match &c.generator {
            Generator::Constant(a) => a.len() != dim * dim,
            _ => false,
        };
        if bad_shape {
            return Err(Error::Parse {
                line: *line,
                msg: format!(
                    "chart '{}' generator does not have {} entries",
                    c.id,
                    dim * dim
                ),
            });
        }
        c.generator.eval(&probe, &mut m);
    }
    let mut region = Vec::new();
    if let Some((spec, line)) = &region_spec {
        for item in spec.split(',').map(str::trim) {
            let (id, r) = item.split_once(':').ok_or(Error::Parse {
                line: *line,
                msg: format!("region entry '{item}' is not chart:radius"),
            })?;
            let r: f64 = parse_num(r.trim(), *line)?;
            if !(r > 0.0) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("region radius {r} must be positive"),
                });
            }
            region.push((index(id.trim(), *line)?, r));
        }
    }
    let mut atlas = Atlas::new(
        dim,
        charts.into_iter().map(|(c, _)| c).collect(),
        transitions,
    )?;
    if region_spec.is_some() {
        atlas = atlas.with_region(region)?;
    }
    Ok(AtlasDescription {
        atlas,
        reference_sec,
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("'{s}' is not a valid number"),
    })
}

fn parse_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',').map(|v| parse_num(v, line)).collect()
}

fn keyed<'a>(tokens: &[&'a str], line: usize) -> Result<Vec<(&'a str, &'a str)>> {
    tokens
        .iter()
        .map(|t| {
            t.split_once('=').ok_or(Error::Parse {
                line,
                msg: format!("expected key=value, found '{t}'"),
            })
        })
        .collect()
}

fn parse_generator(s: &str, line: usize) -> Result<Generator> {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    let bad = |msg: String| Error::Parse { line, msg };
    match tokens.first().copied() {
        Some("flat") if tokens.len() == 1 => Ok(Generator::Flat),
        Some("poincare") if tokens.len() == 1 => Ok(Generator::Poincare),
        Some("stereographic") => {
            let kv = keyed(&tokens[1..], line)?;
            match kv.as_slice() {
                [("R", v)] => Ok(Generator::Stereographic {
                    radius: parse_num(v, line)?,
                }),
                _ => Err(bad("stereographic needs exactly R=..".into())),
            }
        }
        Some("constant") if tokens.len() == 2 => {
            Ok(Generator::Constant(parse_list(tokens[1], line)?))
        }
        _ => Err(bad(format!("unknown generator '{s}'"))),
    }
}

fn parse_perturbation(base: Generator, s: &str, line: usize) -> Result<Generator> {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    let mut amplitude = None;
    let mut alpha = None;
    let mut support = None;
    let mut center = None;
    for (k, v) in keyed(&tokens, line)? {
        match k {
            "a" => amplitude = Some(parse_num(v, line)?),
            "alpha" => alpha = Some(parse_num(v, line)?),
            "rho" => support = Some(parse_num(v, line)?),
            "x0" => center = Some(parse_list(v, line)?),
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown perturbation key '{k}'"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        line,
        msg: format!("perturbation lacks {what}"),
    };
    Ok(Generator::Perturbed {
        base: Box::new(base),
        amplitude: amplitude.ok_or_else(|| missing("a"))?,
        alpha: alpha.ok_or_else(|| missing("alpha"))?,
        center: center.ok_or_else(|| missing("x0"))?,
        support: support.ok_or_else(|| missing("rho"))?,
    })
}

fn parse_map(s: &str, line: usize) -> Result<TransitionMap> {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    let bad = |msg: String| Error::Parse { line, msg };
    match tokens.first().copied() {
        Some("identity") if tokens.len() == 1 => Ok(TransitionMap::Identity),
        Some("inversion") => match keyed(&tokens[1..], line)?.as_slice() {
            [("R", v)] => Ok(TransitionMap::Inversion {
                radius: parse_num(v, line)?,
            }),
            _ => Err(bad("inversion needs exactly R=..".into())),
        },
        Some("affine") => {
            let mut matrix = None;
            let mut offset = None;
            for (k, v) in keyed(&tokens[1..], line)? {
                match k {
                    "A" => matrix = Some(parse_list(v, line)?),
                    "b" => offset = Some(parse_list(v, line)?),
                    _ => return Err(bad(format!("unknown affine key '{k}'"))),
                }
            }
            let matrix = matrix.ok_or_else(|| bad("affine map lacks A".into()))?;
            let offset = offset.ok_or_else(|| bad("affine map lacks b".into()))?;
            if matrix.len() != offset.len() * offset.len() {
                return Err(bad("affine A and b sizes disagree".into()));
            }
            Ok(TransitionMap::Affine { matrix, offset })
        }
        _ => Err(bad(format!("unknown map '{s}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelzoo::{flat, flat_affine, sphere};

    #[test]
    fn single_chart_weights_are_one() {
        let a = flat(2).unwrap().atlas;
        for x in [[0.0, 0.0], [0.3, 0.5], [0.7, 0.0]] {
            let (w, _) = a.partition(0, &x);
            assert_eq!(w, vec![1.0]);
        }
        assert_eq!(a.partition(0, &[0.76, 0.0]).0, vec![0.0]);
    }

    #[test]
    fn identical_charts_split_evenly() {
        let charts = vec![
            Chart::new("a", 1.0, Generator::Flat),
            Chart::new("b", 1.0, Generator::Flat),
        ];
        let tr = vec![
            Transition::new(0, 1, TransitionMap::Identity),
            Transition::new(1, 0, TransitionMap::Identity),
        ];
        let a = Atlas::new(2, charts, tr).unwrap();
        assert_eq!(a.partition(1, &[0.6, 0.1]).0, vec![0.5, 0.5]);
    }

    #[test]
    fn sphere_partition_sums_to_one() {
        let a = sphere(2, 1.0, 2.5).unwrap().atlas;
        let rep = verify_partition(&a, 41).unwrap();
        assert!(rep.max_sum_error <= 1e-12);
        assert_eq!(rep.support_violations, 0);
        assert!(rep.min_denominator >= 1.0);
        let cover = check_cover(&a, &default_region(&a), 41, 1.0).unwrap();
        assert!(cover.covered);
        assert_eq!(cover.n, 2);
    }

    #[test]
    fn disjoint_charts_leave_a_gap() {
        let charts = vec![
            Chart::new("a", 1.0, Generator::Flat),
            Chart::new("b", 1.0, Generator::Flat),
        ];
        let shift = |d: f64| TransitionMap::Affine {
            matrix: vec![1.0, 0.0, 0.0, 1.0],
            offset: vec![d, 0.0],
        };
        let a = Atlas::new(
            2,
            charts,
            vec![
                Transition::new(0, 1, shift(5.0)),
                Transition::new(1, 0, shift(-5.0)),
            ],
        )
        .unwrap();
        let rep = check_cover(&a, &[(0, 3.0)], 21, 1.0).unwrap();
        assert!(!rep.covered);
        assert_eq!(rep.n, 1);
    }

    #[test]
    fn chart_norm_plateau_leaves_gap() {
        let a = sphere(2, 1.0, 2.5)
            .unwrap()
            .atlas
            .with_plateau_rule(PlateauRule::ChartNorm(41))
            .unwrap();
        assert!(matches!(
            verify_partition(&a, 41),
            Err(Error::CoverGap { .. })
        ));
    }

    #[test]
    fn identity_and_linear_pullbacks() {
        let l = Lattice::new(2, 1.0, 21).unwrap();
        let g = Generator::Stereographic { radius: 1.0 }.sample(&l).unwrap();
        let same = pullback_metric(&TransitionMap::Identity, &g, &l, CUBIC).unwrap();
        assert_eq!(same.channels(), g.channels());
        let a = vec![1.0, 0.5, 0.0, 2.0];
        let lin = TransitionMap::Affine {
            matrix: a.clone(),
            offset: vec![0.0, 0.0],
        };
        let pulled = pullback_metric(&lin, &MetricField::identity(&l), &l, CUBIC).unwrap();
        let node = l.origin();
        assert!(pulled.mask()[node]);
        let m = pulled.matrix_vec(node);
        let ata = [1.0, 0.5, 0.5, 4.25];
        for k in 0..4 {
            assert!((m[k] - ata[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_affine_assembly_is_exact() {
        let geo = flat_affine(2).unwrap();
        let samples = geo.atlas.sample(41).unwrap();
        let out = assemble_mollified(&geo.atlas, &samples, 0.1).unwrap();
        for g in &out {
            assert!(
                g.max_abs_difference(&MetricField::identity(g.lattice()).restrict(g.mask()))
                    < 1e-14
            );
        }
    }

    #[test]
    fn description_round_trip() {
        let text = "[atlas]\ndim = 2\nreference_sec = 1\n\n[chart north]\nradius = 2.5\ngenerator = stereographic R=1\n[chart south]\nradius = 2.5\ngenerator = stereographic R=1\n[transition]\nsource = north\ntarget = south\nmap = inversion R=1\n[transition]\nsource = south\ntarget = north\nmap = inversion R=1\n";
        let d = parse_atlas(text).unwrap();
        assert_eq!(
            d.atlas.charts(),
            sphere(2, 1.0, 2.5).unwrap().atlas.charts()
        );
        assert_eq!(d.reference_sec, Some(1.0));
        let err =
            parse_atlas("[atlas]\ndim = 2\n[chart a]\nradius = x\ngenerator = flat\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = parse_atlas("[atlas]\ndim = 2\n[chart a]\nradius = 1\ngenerator = flat\n[transition]\nsource = a\ntarget = b\nmap = identity\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 8, .. }), "{err}");
    }

    #[test]
    fn declared_region_replaces_the_default() {
        let body =
            "[chart a]\nradius = 1\ngenerator = flat\n[chart b]\nradius = 1\ngenerator = flat\n";
        let d = parse_atlas(&format!("[atlas]\ndim = 2\nregion = b:0.5, a:0.25\n{body}")).unwrap();
        assert_eq!(d.atlas.cover_region(), vec![(1, 0.5), (0, 0.25)]);
        let d = parse_atlas(&format!("[atlas]\ndim = 2\n{body}")).unwrap();
        assert_eq!(d.atlas.cover_region(), default_region(&d.atlas));
        let err = parse_atlas(&format!("[atlas]\ndim = 2\nregion = c:0.5\n{body}")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
