//! Verification experiments behind the `mollify` command line: curvature
//! tables, the deviation sweep, chart norms, the lemma suite and cover checks.
//!
//! Every command returns an [`Outcome`]; CSV bodies are deterministic
//! functions of the configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::atlas::{assemble_mollified, check_cover, parse_atlas, verify_partition, PlateauRule};
use crate::curvature::{
    b_lipschitz_constant, b_polynomial, curvature_report, evaluate_riem, inverse_derivative,
    riemann, sec_extremes_per_node, RiemannField, VectorSection,
};
use crate::error::{Error, Result};
use crate::fit::{loglog_fit, PowerFit};
use crate::kernels::{convolve, kernel_lq_bound, kernel_lq_norm, BumpKernel, ScaledKernel};
use crate::lattice::{differentiate, mask_and, Field, Lattice, MetricField, ScalarField};
use crate::linalg;
use crate::modelzoo::{parse_geometry, ModelGeometry};
use crate::norms::DEFAULT_PAIR_BUDGET;
use crate::norms::{
    chart_norms, check_n0, harmonic_defect, holder_norm, holder_seminorm, NormSettings,
};

/// Excesses at or below this are treated as zero.
pub const NOISE_FLOOR: f64 = 1e-9;
/// Slack allowed on lemma ratios for quadrature effects.
pub const LEMMA_SLACK: f64 = 1.05;
pub const MIN_SCALES: usize = 5;
pub const RANDOM_SECTIONS: usize = 8;

/// Admissible range for the user's exponent `β`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaWindow {
    /// `β ∈ (0, α − n/p)`, the rate available to a `C^{1,α}` metric.
    Holder,
    /// `β ∈ (1/2, 1 − n/p)`.
    Prop,
    /// `β ∈ (0, 1 − 2n/p)`, requiring `p > 2n`.
    Thm,
}

impl BetaWindow {
    pub fn bounds(self, n: usize, p: f64, alpha: f64) -> (f64, f64) {
        let n = n as f64;
        match self {
            BetaWindow::Holder => (0.0, alpha - n / p),
            BetaWindow::Prop => (0.5, 1.0 - n / p),
            BetaWindow::Thm => (0.0, 1.0 - 2.0 * n / p),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BetaWindow::Holder => "holder",
            BetaWindow::Prop => "prop",
            BetaWindow::Thm => "thm",
        }
    }
}

impl std::str::FromStr for BetaWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holder" => Ok(BetaWindow::Holder),
            "prop" => Ok(BetaWindow::Prop),
            "thm" => Ok(BetaWindow::Thm),
            _ => Err(Error::Config(format!(
                "unknown beta window '{s}' (holder, prop, thm)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: String,
    /// Atlas description file; replaces `geometry` when set.
    pub atlas: Option<PathBuf>,
    pub m: usize,
    /// Single scale for the curvature table.
    pub t: Option<f64>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub t_count: usize,
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub beta_window: BetaWindow,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Chart id for the norms command; the first chart when unset.
    pub chart: Option<String>,
    pub holder_order: usize,
    pub sobolev_order: usize,
    /// Plateau of the partition bumps as a fraction of the chart radius, or
    /// `chart-norm` for `r·e^{-2Q}/2`.
    pub plateau: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: "flat".into(),
            atlas: None,
            m: 81,
            t: None,
            t_min: None,
            t_max: None,
            t_count: 8,
            alpha: 0.6,
            p: 8.0,
            beta: 0.2,
            beta_window: BetaWindow::Holder,
            seed: 0,
            out: None,
            chart: None,
            holder_order: 1,
            sobolev_order: 2,
            plateau: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

impl ExperimentConfig {
    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match key {
            "geometry" => self.geometry = value.to_string(),
            "atlas" => self.atlas = opt(value).map(PathBuf::from),
            "m" => self.m = parse_value(key, value)?,
            "t" => self.t = Some(parse_value(key, value)?),
            "t_min" => self.t_min = Some(parse_value(key, value)?),
            "t_max" => self.t_max = Some(parse_value(key, value)?),
            "t_count" => self.t_count = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "beta_window" => self.beta_window = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = opt(value).map(PathBuf::from),
            "chart" => self.chart = opt(value),
            "holder_order" => self.holder_order = parse_value(key, value)?,
            "sobolev_order" => self.sobolev_order = parse_value(key, value)?,
            "plateau" => self.plateau = opt(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Applies a `key = value` config file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found '{line}'")))?;
            self.set(k.trim(), v.trim()).map_err(parse_err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn load_geometry(&self) -> Result<ModelGeometry> {
        let mut geometry = match &self.atlas {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read atlas {}: {e}", path.display()))
                })?;
                let desc = parse_atlas(&text)?;
                ModelGeometry {
                    name: path.display().to_string(),
                    atlas: desc.atlas,
                    reference_sec: desc.reference_sec,
                    rough_point: None,
                }
            }
            None => parse_geometry(&self.geometry)?,
        };
        if let Some(p) = &self.plateau {
            let rule = if p == "chart-norm" {
                PlateauRule::ChartNorm(self.m)
            } else {
                PlateauRule::Fraction(
                    p.parse()
                        .map_err(|_| Error::Config(format!("invalid plateau '{p}'")))?,
                )
            };
            geometry.atlas = geometry.atlas.with_plateau_rule(rule)?;
        }
        Ok(geometry)
    }

    /// Log-spaced scales; defaults to `[r/64, r/8]` for the smallest chart radius `r`.
    pub fn scales(&self, radius: f64) -> Result<Vec<f64>> {
        let lo = self.t_min.unwrap_or(radius / 64.0);
        let hi = self.t_max.unwrap_or(radius / 8.0);
        if self.t_count < MIN_SCALES {
            return Err(Error::Config(format!(
                "a sweep needs at least {MIN_SCALES} scales, got {}",
                self.t_count
            )));
        }
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("scale range [{lo}, {hi}] is empty")));
        }
        if hi > radius / 2.0 {
            return Err(Error::Config(format!(
                "t_max = {hi} exceeds r/2 = {}",
                radius / 2.0
            )));
        }
        let k = self.t_count - 1;
        Ok((0..self.t_count)
            .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / k as f64).exp())
            .collect())
    }

    fn check_beta(&self, n: usize) -> Result<()> {
        let (lo, hi) = self.beta_window.bounds(n, self.p, self.alpha);
        if !(self.beta > lo && self.beta < hi) {
            return Err(Error::Config(format!(
                "beta = {} outside the {} window ({lo}, {hi})",
                self.beta,
                self.beta_window.name()
            )));
        }
        Ok(())
    }
}

/// Fixed-precision number formatting for CSV and reports.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table with LF line endings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[k].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

/// Writes through a temporary sibling and renames, so a failed run never
/// leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Result of one command.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub table: Option<Table>,
    /// `key=value` lines.
    pub summary: String,
    /// A checked inequality failed.
    pub violation: bool,
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

fn chart_lattice(geometry: &ModelGeometry, chart: usize, m: usize) -> Result<Lattice> {
    geometry.atlas.lattice(chart, m)
}

/// Per-node curvature of each chart's sampled metric and, with `t` set, of
/// the assembled mollified metric.
pub fn cmd_curvature(cfg: &ExperimentConfig) -> Result<Outcome> {
    let geometry = cfg.load_geometry()?;
    let n = geometry.atlas.dim();
    let samples = geometry.atlas.sample(cfg.m)?;
    let mollified = match cfg.t {
        Some(t) => Some(assemble_mollified(&geometry.atlas, &samples, t)?),
        None => None,
    };
    let mut header = vec!["chart".to_string(), "node".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    let fields = ["min_sec", "max_sec", "ricci_trace", "scalar"];
    header.extend(fields.iter().map(|s| s.to_string()));
    if mollified.is_some() {
        header.extend(fields.iter().map(|s| format!("{s}_t")));
    }
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut summary = String::new();
    kv(&mut summary, "geometry", &geometry.name);
    kv(&mut summary, "m", cfg.m);
    for (j, g) in samples.iter().enumerate() {
        let id = &geometry.atlas.charts()[j].id;
        let (_, rep) = curvature_report(g, cfg.seed)?;
        let rep_t = match &mollified {
            Some(ms) => Some(curvature_report(&ms[j], cfg.seed)?.1),
            None => None,
        };
        let lattice = g.lattice();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for node in 0..lattice.len() {
            if !rep.mask[node] {
                continue;
            }
            lo = lo.min(rep.min_sec[node]);
            hi = hi.max(rep.max_sec[node]);
            let mut row = vec![id.clone(), node.to_string()];
            row.extend(lattice.point_vec(node).into_iter().map(fmt_num));
            row.extend(
                [
                    rep.min_sec[node],
                    rep.max_sec[node],
                    rep.ricci_trace[node],
                    rep.scalar[node],
                ]
                .map(fmt_num),
            );
            if let Some(rt) = &rep_t {
                let vals = if rt.mask[node] {
                    [
                        rt.min_sec[node],
                        rt.max_sec[node],
                        rt.ricci_trace[node],
                        rt.scalar[node],
                    ]
                } else {
                    [f64::NAN; 4]
                };
                row.extend(vals.map(fmt_num));
            }
            table.push(row);
        }
        kv(&mut summary, &format!("chart_{id}_min_sec"), fmt_num(lo));
        kv(&mut summary, &format!("chart_{id}_max_sec"), fmt_num(hi));
    }
    Ok(Outcome {
        table: Some(table),
        summary,
        violation: false,
    })
}

/// Constant probe sections: every coordinate choice `(e^a; e_b, e_c, e_d)`
/// with `c ≠ d`, then seeded Gaussian ones.
pub fn probe_sections(n: usize, seed: u64) -> Vec<[Vec<f64>; 4]> {
    let e = |i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    };
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if c != d {
                        out.push([e(a), e(b), e(c), e(d)]);
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EC7_1025);
    for _ in 0..RANDOM_SECTIONS {
        let mut draw = || {
            (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        };
        out.push([draw(), draw(), draw(), draw()]);
    }
    out
}

/// Sliding maximum (or minimum, with `sign = -1`) over the max-norm cube of
/// `k` nodes. NaN entries are ignored; a window without values yields NaN.
pub fn cube_extreme(lattice: &Lattice, values: &[f64], k: usize, sign: f64) -> Vec<f64> {
    let mut cur: Vec<f64> = values.iter().map(|v| sign * v).collect();
    let m = lattice.points_per_axis();
    for axis in 0..lattice.dim() {
        let stride = lattice.stride(axis);
        let mut next = vec![f64::NAN; cur.len()];
        for (node, out) in next.iter_mut().enumerate() {
            let i = lattice.axis_index(node, axis);
            let base = node - i * stride;
            let lo = i.saturating_sub(k);
            let hi = (i + k).min(m - 1);
            let mut best = f64::NAN;
            for j in lo..=hi {
                let v = cur[base + j * stride];
                if !v.is_nan() && !(v <= best) {
                    best = v;
                }
            }
            *out = best;
        }
        cur = next;
    }
    cur.iter_mut().for_each(|v| *v *= sign);
    cur
}

fn riem_field_values(riem: &RiemannField, g: &MetricField, section: &VectorSection) -> Vec<f64> {
    (0..g.lattice().len())
        .map(|node| {
            if riem.mask()[node] && g.mask()[node] {
                evaluate_riem(riem, g, section, node).map_or(f64::NAN, |(v, _)| v)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// One row of the deviation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationRecord {
    pub t: f64,
    /// Largest normalized one-sided Riemann excess over probe nodes and sections.
    pub riem_excess: f64,
    /// Largest distance of `Sec_{g^[t]}` from the ball interval of `Sec_g`.
    pub sec_excess: f64,
    /// Signed versions of the two excesses, negative when the bound holds strictly.
    pub riem_margin: f64,
    pub sec_margin: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationResult {
    pub records: Vec<DeviationRecord>,
    pub sec_fit: Option<PowerFit>,
    pub riem_fit: Option<PowerFit>,
    pub q: f64,
    pub harmonic_defect: f64,
}

struct ChartBaseline {
    q: f64,
    riem_sections: Vec<Vec<f64>>,
    sec_lo: Vec<f64>,
    sec_hi: Vec<f64>,
}

/// Sweeps the scales and measures both excesses in every chart.
pub fn deviation_sweep(
    geometry: &ModelGeometry,
    cfg: &ExperimentConfig,
) -> Result<DeviationResult> {
    let atlas = &geometry.atlas;
    let n = atlas.dim();
    let radius = atlas
        .charts()
        .iter()
        .map(|c| c.radius)
        .fold(f64::INFINITY, f64::min);
    let scales = cfg.scales(radius)?;
    for j in 0..atlas.charts().len() {
        let h = atlas.lattice(j, cfg.m)?.spacing();
        if scales[0] < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "t_min = {} is below two lattice spacings ({}) of chart '{}'; raise m or t_min",
                scales[0],
                2.0 * h,
                atlas.charts()[j].id
            )));
        }
    }
    let samples = atlas.sample(cfg.m)?;
    let sections = probe_sections(n, cfg.seed);
    let mut baselines = Vec::new();
    let mut q_max = 0.0f64;
    let mut defect = 0.0f64;
    for (j, g) in samples.iter().enumerate() {
        let r = atlas.charts()[j].radius;
        let q = check_n0(&g.restrict(&g.lattice().ball_mask(r)))?;
        q_max = q_max.max(q);
        defect = defect.max(harmonic_defect(&g.restrict(&g.lattice().ball_mask(r)))?.sup);
        let riem = riemann(g)?;
        let riem_sections = sections
            .iter()
            .map(|[xi, v, w1, w2]| {
                riem_field_values(
                    &riem,
                    g,
                    &VectorSection::constant(g.lattice(), v, w1, w2, xi),
                )
            })
            .collect();
        let (sec_lo, sec_hi) = sec_extremes_per_node(g, &riem, cfg.seed)?;
        baselines.push(ChartBaseline {
            q,
            riem_sections,
            sec_lo,
            sec_hi,
        });
    }
    let mut records = Vec::new();
    for &t in &scales {
        let assembled = assemble_mollified(atlas, &samples, t)?;
        let mut rec = DeviationRecord {
            t,
            riem_excess: 0.0,
            sec_excess: 0.0,
            riem_margin: f64::NEG_INFINITY,
            sec_margin: f64::NEG_INFINITY,
            probes: 0,
        };
        for (j, gt) in assembled.iter().enumerate() {
            let base = &baselines[j];
            let lattice = gt.lattice();
            let h = lattice.spacing();
            let k = ((base.q.exp() * t + h) / h + 1e-9).floor() as usize;
            let riem_t = riemann(gt)?;
            let probe = mask_and(
                &lattice.ball_mask(atlas.charts()[j].radius / 2.0),
                riem_t.mask(),
            );
            rec.probes += probe.iter().filter(|&&b| b).count();
            for (s, [xi, v, w1, w2]) in sections.iter().enumerate() {
                let section = VectorSection::constant(lattice, v, w1, w2, xi);
                let sup = cube_extreme(lattice, &base.riem_sections[s], k, 1.0);
                for node in (0..lattice.len()).filter(|&i| probe[i] && !sup[i].is_nan()) {
                    let (value, norm) = evaluate_riem(&riem_t, gt, &section, node)?;
                    if norm > 0.0 {
                        rec.riem_margin = rec.riem_margin.max((value - sup[node]) / norm);
                    }
                }
            }
            let (lo_t, hi_t) = sec_extremes_per_node(gt, &riem_t, cfg.seed)?;
            let lo = cube_extreme(lattice, &base.sec_lo, k, -1.0);
            let hi = cube_extreme(lattice, &base.sec_hi, k, 1.0);
            for node in (0..lattice.len()).filter(|&i| probe[i] && !lo[i].is_nan()) {
                let d = (hi_t[node] - hi[node]).max(lo[node] - lo_t[node]);
                rec.sec_margin = rec.sec_margin.max(d);
            }
        }
        rec.riem_excess = rec.riem_margin.max(0.0);
        rec.sec_excess = rec.sec_margin.max(0.0);
        records.push(rec);
    }
    let fit = |ys: Vec<f64>| -> Option<PowerFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = scales
            .iter()
            .zip(&ys)
            .filter(|(_, &v)| v > NOISE_FLOOR)
            .map(|(a, b)| (*a, *b))
            .unzip();
        loglog_fit(&x, &y).ok()
    };
    let sec_fit = fit(records.iter().map(|r| r.sec_excess).collect());
    let riem_fit = fit(records.iter().map(|r| r.riem_excess).collect());
    Ok(DeviationResult {
        records,
        sec_fit,
        riem_fit,
        q: q_max,
        harmonic_defect: defect,
    })
}

/// Whether the excesses shrink with `t`: each value is at most the one at the
/// next larger scale, or both sit at the noise floor.
pub fn decays_monotonically(records: &[DeviationRecord]) -> bool {
    records.windows(2).all(|w| {
        let (a, b) = (w[0].sec_excess.max(0.0), w[1].sec_excess.max(0.0));
        a <= b || a <= NOISE_FLOOR
    })
}

pub fn cmd_deviation(cfg: &ExperimentConfig) -> Result<Outcome> {
    let geometry = cfg.load_geometry()?;
    cfg.check_beta(geometry.atlas.dim())?;
    let res = deviation_sweep(&geometry, cfg)?;
    let mut table = Table::new(&[
        "t",
        "riem_excess",
        "sec_excess",
        "riem_margin",
        "sec_margin",
        "probes",
    ]);
    for r in &res.records {
        table.push(vec![
            fmt_num(r.t),
            fmt_num(r.riem_excess),
            fmt_num(r.sec_excess),
            fmt_num(r.riem_margin),
            fmt_num(r.sec_margin),
            r.probes.to_string(),
        ]);
    }
    let mut summary = String::new();
    kv(&mut summary, "geometry", &geometry.name);
    kv(&mut summary, "m", cfg.m);
    kv(&mut summary, "q", fmt_num(res.q));
    kv(
        &mut summary,
        "harmonic_defect",
        fmt_num(res.harmonic_defect),
    );
    kv(&mut summary, "beta", fmt_num(cfg.beta));
    kv(&mut summary, "beta_window", cfg.beta_window.name());
    kv(&mut summary, "monotone", decays_monotonically(&res.records));
    let mut violation = false;
    for (name, fit) in [("sec", &res.sec_fit), ("riem", &res.riem_fit)] {
        match fit {
            Some(f) => {
                kv(&mut summary, &format!("{name}_slope"), fmt_num(f.slope));
                kv(
                    &mut summary,
                    &format!("{name}_intercept"),
                    fmt_num(f.intercept),
                );
                kv(
                    &mut summary,
                    &format!("{name}_residual"),
                    fmt_num(f.residual),
                );
                kv(&mut summary, &format!("{name}_fit_points"), f.points);
            }
            None => kv(
                &mut summary,
                &format!("{name}_fit"),
                "excess at noise floor; exponent fit skipped",
            ),
        }
    }
    if let Some(f) = &res.sec_fit {
        let ok = f.slope >= cfg.beta;
        kv(&mut summary, "slope_at_least_beta", ok);
        violation |= !ok;
    }
    Ok(Outcome {
        table: Some(table),
        summary,
        violation,
    })
}

pub fn cmd_norms(cfg: &ExperimentConfig) -> Result<Outcome> {
    let geometry = cfg.load_geometry()?;
    let atlas = &geometry.atlas;
    let chart = match &cfg.chart {
        Some(id) => atlas
            .chart_index(id)
            .ok_or_else(|| Error::Config(format!("no chart '{id}' in {}", geometry.name)))?,
        None => 0,
    };
    let r = atlas.charts()[chart].radius;
    let lattice = chart_lattice(&geometry, chart, cfg.m)?;
    let g = atlas.charts()[chart]
        .generator
        .sample(&lattice)?
        .restrict(&lattice.ball_mask(r));
    let settings = NormSettings {
        holder_order: cfg.holder_order,
        alpha: cfg.alpha,
        sobolev_order: cfg.sobolev_order,
        p: cfg.p,
        pair_budget: DEFAULT_PAIR_BUDGET,
    };
    let report = chart_norms(&g, r, &settings)?;
    let mut summary = String::new();
    kv(&mut summary, "geometry", &geometry.name);
    kv(&mut summary, "chart", &atlas.charts()[chart].id);
    kv(&mut summary, "m", cfg.m);
    summary.push_str(&report.to_string());
    Ok(Outcome {
        table: None,
        summary,
        violation: false,
    })
}

/// Shapes in the seeded lemma family.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `A sin(ω·x + φ)`.
    Wave {
        amplitude: f64,
        omega: Vec<f64>,
        phase: f64,
    },
    /// `A |x − c|^{1+α}`, in `C^{1,α}` only.
    Cusp { amplitude: f64, center: Vec<f64> },
    /// `A |x₀ − c|^α`, in `C^{0,α}` only.
    Kink { amplitude: f64, center: f64 },
    /// `A exp(−|x − c|²/s²)`.
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64], alpha: f64) -> f64 {
        let dist = |c: &[f64]| {
            x.iter()
                .zip(c)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        match self {
            TestFunction::Wave {
                amplitude,
                omega,
                phase,
            } => amplitude * (x.iter().zip(omega).map(|(a, w)| a * w).sum::<f64>() + phase).sin(),
            TestFunction::Cusp { amplitude, center } => amplitude * dist(center).powf(1.0 + alpha),
            TestFunction::Kink { amplitude, center } => {
                amplitude * (x[0] - center).abs().powf(alpha)
            }
            TestFunction::Gaussian {
                amplitude,
                center,
                width,
            } => amplitude * (-(dist(center) / width).powi(2)).exp(),
        }
    }

    /// Highest derivative order at which the `α`-Hölder seminorm is finite.
    pub fn smoothness(&self) -> usize {
        match self {
            TestFunction::Kink { .. } => 0,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            TestFunction::Wave { .. } => "wave",
            TestFunction::Cusp { .. } => "cusp",
            TestFunction::Kink { .. } => "kink",
            TestFunction::Gaussian { .. } => "gaussian",
        }
    }
}

pub const LEMMA_FUNCTIONS: usize = 20;
pub const LEMMA_SCALES: usize = 5;
pub const LEMMA_POINTS: usize = 41;

/// The seeded family, cycling through the four shapes.
pub fn lemma_family(n: usize, seed: u64) -> Vec<TestFunction> {
    (0..LEMMA_FUNCTIONS)
        .map(|k| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
            let amplitude = rng.random_range(0.5..2.0);
            let mut point = |s: f64| {
                (0..n)
                    .map(|_| rng.random_range(-s..s))
                    .collect::<Vec<f64>>()
            };
            match k % 4 {
                0 => {
                    let omega = point(3.0);
                    TestFunction::Wave {
                        amplitude,
                        omega,
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    }
                }
                1 => TestFunction::Cusp {
                    amplitude,
                    center: point(0.3),
                },
                2 => TestFunction::Kink {
                    amplitude,
                    center: rng.random_range(-0.3..0.3),
                },
                _ => TestFunction::Gaussian {
                    amplitude,
                    center: point(0.4),
                    width: rng.random_range(0.2..0.6),
                },
            }
        })
        .collect()
}

/// One lemma check: the measured side, the bound and their ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaRow {
    pub lemma: &'static str,
    pub function: usize,
    pub kind: &'static str,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaRow {
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }

    /// The supremum property must hold exactly; the others get quadrature slack.
    pub fn passes(&self) -> bool {
        let limit = if self.lemma == "sup" {
            1.0
        } else {
            LEMMA_SLACK
        };
        self.ratio() <= limit
    }
}

fn sup_on(values: &[f64], mask: &[bool]) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(0.0f64, |a, (v, _)| a.max(v.abs()))
}

/// Discrete `L^p` norm with node weights `h^n`.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    let w = f.lattice().spacing().powi(f.lattice().dim() as i32);
    (f.valid_values().map(|v| v.abs().powf(p)).sum::<f64>() * w).powf(1.0 / p)
}

/// `Σ_k sup |∇^k f|` up to `order`, components combined by maximum, over `mask`.
fn ck_norm(f: &ScalarField, order: usize, mask: &[bool]) -> Result<f64> {
    let jet = differentiate(f, order)?;
    let valid = mask_and(mask, jet.mask());
    let mut total = 0.0;
    for k in 0..=order {
        let mut s = 0.0f64;
        for (_, block) in jet.order_blocks(k) {
            for ch in block {
                s = s.max(sup_on(ch, &valid));
            }
        }
        total += s;
    }
    Ok(total)
}

/// Evaluates every lemma on the seeded family.
pub fn lemma_suite(cfg: &ExperimentConfig) -> Result<Vec<LemmaRow>> {
    let n = 2;
    let r = 1.0;
    let lattice = Lattice::new(n, r, LEMMA_POINTS)?;
    let h = lattice.spacing();
    let alpha = cfg.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(cfg.p > n as f64) {
        return Err(Error::Config(format!(
            "p = {} must exceed the dimension {n}",
            cfg.p
        )));
    }
    let q = cfg.p / (cfg.p - 1.0);
    let scales: Vec<f64> = (0..LEMMA_SCALES)
        .map(|i| 2.0 * h * (0.4 * r / (2.0 * h)).powf(i as f64 / (LEMMA_SCALES - 1) as f64))
        .collect();
    let base = BumpKernel::new(n)?;
    let kernels = scales
        .iter()
        .map(|&t| ScaledKernel::new(&base, t, h))
        .collect::<Result<Vec<_>>>()?;
    let family = lemma_family(n, cfg.seed);
    let fields = family
        .iter()
        .map(|f| ScalarField::sample(&lattice, |x| f.eval(x, alpha)))
        .collect::<Result<Vec<_>>>()?;
    let half = lattice.ball_mask(r / 2.0);
    let mut rows = Vec::new();

    for (s, kernel) in kernels.iter().enumerate() {
        rows.push(LemmaRow {
            lemma: "kernel_lq",
            function: 0,
            kind: "-",
            t: scales[s],
            lhs: kernel_lq_norm(kernel, q)?,
            rhs: kernel_lq_bound(n, scales[s], q),
        });
    }

    for (k, f) in fields.iter().enumerate() {
        let kind = family[k].kind();
        let order = family[k].smoothness();
        let hn = holder_norm(f, order, alpha, DEFAULT_PAIR_BUDGET)?.total();
        let a = &fields[(k + 7) % LEMMA_FUNCTIONS];
        let c_a = holder_seminorm(a, alpha, DEFAULT_PAIR_BUDGET)?;
        let f_lp = lp_norm(f, cfg.p);
        let af = ScalarField::from_values(
            &lattice,
            a.values()
                .iter()
                .zip(f.values())
                .map(|(x, y)| x * y)
                .collect(),
            lattice.full_mask(),
        )?;
        for (s, kernel) in kernels.iter().enumerate() {
            let t = scales[s];
            let pf = convolve(kernel, f)?;

            let diff = ScalarField::linear_combination(1.0, f, -1.0, &pf)?;
            rows.push(LemmaRow {
                lemma: "holder",
                function: k,
                kind,
                t,
                lhs: ck_norm(&diff, order, &half)?,
                rhs: t.powf(alpha) * hn,
            });

            let paf = convolve(kernel, &af)?;
            let mut comm = 0.0f64;
            for node in 0..lattice.len() {
                if paf.mask()[node] && pf.mask()[node] {
                    comm =
                        comm.max((paf.values()[node] - a.values()[node] * pf.values()[node]).abs());
                }
            }
            rows.push(LemmaRow {
                lemma: "commutator",
                function: k,
                kind,
                t,
                lhs: comm,
                rhs: 2f64.powf((n as f64 + 1.0) / q)
                    * c_a
                    * f_lp
                    * t.powf(alpha - n as f64 / cfg.p),
            });

            rows.push(LemmaRow {
                lemma: "sup",
                function: k,
                kind,
                t,
                lhs: pf.sup_norm(),
                rhs: f.sup_norm(),
            });
        }
    }

    rows.extend(poly_rows(&lattice, &fields)?);
    Ok(rows)
}

/// Telescoping bound for `B` on pairs of nearby conformal metrics built from
/// the family.
fn poly_rows(lattice: &Lattice, fields: &[ScalarField]) -> Result<Vec<LemmaRow>> {
    let n = lattice.dim();
    let metric = |u: &[f64]| {
        let mut channels = vec![vec![0.0; lattice.len()]; linalg::sym_len(n)];
        for (node, v) in u.iter().enumerate() {
            for i in 0..n {
                channels[linalg::sym_index(n, i, i)][node] = (2.0 * v).exp();
            }
        }
        MetricField::from_channels(lattice, channels, lattice.full_mask())
    };
    let inputs = |g: &MetricField| -> Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> {
        let jet = differentiate(g, 1)?;
        let mut out = Vec::new();
        for node in (0..lattice.len()).filter(|&i| jet.mask()[i]) {
            let mut ginv = vec![0.0; n * n];
            linalg::inverse(n, &g.matrix_vec(node), &mut ginv).ok_or(
                Error::NotPositiveDefinite {
                    node,
                    coords: lattice.point_vec(node),
                },
            )?;
            let mut dg = vec![0.0; n * n * n];
            for x in 0..n {
                let d = jet.partial(&[x]);
                for a in 0..n {
                    for b in 0..n {
                        dg[(x * n + a) * n + b] = d[linalg::sym_index(n, a, b)][node];
                    }
                }
            }
            let dginv = inverse_derivative(n, &ginv, &dg);
            out.push((ginv, dginv, dg));
        }
        Ok(out)
    };
    let sup = |xs: &[&[f64]]| {
        xs.iter()
            .flat_map(|x| x.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    };
    let mut rows = Vec::new();
    for k in 0..fields.len() {
        let u0: Vec<f64> = fields[k].values().iter().map(|v| 0.2 * v).collect();
        let u1: Vec<f64> = u0
            .iter()
            .zip(fields[(k + 1) % fields.len()].values())
            .map(|(a, b)| a + 0.01 * b)
            .collect();
        let (i0, i1) = (inputs(&metric(&u0)?)?, inputs(&metric(&u1)?)?);
        let (mut mf, mut mg, mut du, mut db) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for ((gi, dgi, dg), (gi2, dgi2, dg2)) in i0.iter().zip(&i1) {
            mf = mf.max(sup(&[gi, dgi, dg]));
            mg = mg.max(sup(&[gi2, dgi2, dg2]));
            for (a, b) in [(gi, gi2), (dgi, dgi2), (dg, dg2)] {
                du = du.max(
                    a.iter()
                        .zip(b.iter())
                        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs())),
                );
            }
            let b1 = b_polynomial(n, gi, dgi, dg);
            let b2 = b_polynomial(n, gi2, dgi2, dg2);
            db = db.max(
                b1.iter()
                    .zip(&b2)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs())),
            );
        }
        rows.push(LemmaRow {
            lemma: "poly",
            function: k,
            kind: "conformal",
            t: 0.0,
            lhs: db,
            rhs: b_lipschitz_constant(n, mf, mg) * du,
        });
    }
    Ok(rows)
}

pub fn cmd_lemmas(cfg: &ExperimentConfig) -> Result<Outcome> {
    let rows = lemma_suite(cfg)?;
    let mut table = Table::new(&[
        "lemma", "function", "kind", "t", "lhs", "rhs", "ratio", "pass", "seed", "m", "alpha", "p",
    ]);
    for r in &rows {
        table.push(vec![
            r.lemma.to_string(),
            r.function.to_string(),
            r.kind.to_string(),
            fmt_num(r.t),
            fmt_num(r.lhs),
            fmt_num(r.rhs),
            fmt_num(r.ratio()),
            r.passes().to_string(),
            cfg.seed.to_string(),
            LEMMA_POINTS.to_string(),
            fmt_num(cfg.alpha),
            fmt_num(cfg.p),
        ]);
    }
    let mut summary = String::new();
    let mut violation = false;
    for lemma in ["holder", "commutator", "kernel_lq", "sup", "poly"] {
        let mine: Vec<&LemmaRow> = rows.iter().filter(|r| r.lemma == lemma).collect();
        let worst = mine.iter().map(|r| r.ratio()).fold(0.0f64, f64::max);
        let failed = mine.iter().filter(|r| !r.passes()).count();
        violation |= failed > 0;
        kv(&mut summary, &format!("{lemma}_max_ratio"), fmt_num(worst));
        kv(&mut summary, &format!("{lemma}_failures"), failed);
    }
    Ok(Outcome {
        table: Some(table),
        summary,
        violation,
    })
}

pub fn cmd_cover_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let geometry = cfg.load_geometry()?;
    let atlas = &geometry.atlas;
    let cover = check_cover(atlas, &atlas.cover_region(), cfg.m, 1.0)?;
    let mut summary = String::new();
    kv(&mut summary, "geometry", &geometry.name);
    kv(&mut summary, "covered", cover.covered);
    kv(&mut summary, "n", cover.n);
    kv(&mut summary, "samples", cover.samples);
    if let Some((chart, x)) = &cover.gap {
        let coords: Vec<String> = x.iter().map(|v| fmt_num(*v)).collect();
        kv(&mut summary, "gap", format!("{chart}:{}", coords.join(";")));
    }
    if !cover.covered {
        // the partition is undefined off the cover
        return Ok(Outcome {
            table: None,
            summary,
            violation: true,
        });
    }
    let partition = verify_partition(atlas, cfg.m)?;
    kv(
        &mut summary,
        "partition_max_sum_error",
        fmt_num(partition.max_sum_error),
    );
    kv(
        &mut summary,
        "partition_min_denominator",
        fmt_num(partition.min_denominator),
    );
    kv(
        &mut summary,
        "partition_support_violations",
        partition.support_violations,
    );
    kv(&mut summary, "partition_max_active", partition.max_active);
    Ok(Outcome {
        table: None,
        summary,
        violation: partition.support_violations > 0,
    })
}
