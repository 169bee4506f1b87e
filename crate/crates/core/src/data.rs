//! Synthetic generators, sampling of measurement/collocation sets and CSV
//! sensor ingestion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet2;

const BOUNDARY_EPS: f64 = 1e-12;

/// Space-time box `[x_lo, x_hi] x [t_lo, t_hi]`. Only one spatial dimension
/// is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
}

impl DomainSpec {
    pub const DIM: usize = 1;

    pub fn new(x_range: (f64, f64), t_range: (f64, f64)) -> Result<Self> {
        let d = Self { x_range, t_range };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let (xl, xh) = self.x_range;
        let (tl, th) = self.t_range;
        if !(xl.is_finite() && xh.is_finite() && xl < xh) {
            return Err(Error::config(format!("invalid x range [{xl}, {xh}]")));
        }
        if !(tl.is_finite() && th.is_finite() && tl < th) {
            return Err(Error::config(format!("invalid t range [{tl}, {th}]")));
        }
        Ok(())
    }

    pub fn on_boundary(&self, x: f64, t: f64) -> bool {
        (x - self.x_range.0).abs() <= BOUNDARY_EPS
            || (x - self.x_range.1).abs() <= BOUNDARY_EPS
            || (t - self.t_range.0).abs() <= BOUNDARY_EPS
    }

    pub fn strictly_interior(&self, x: f64, t: f64) -> bool {
        x > self.x_range.0 + BOUNDARY_EPS
            && x < self.x_range.1 - BOUNDARY_EPS
            && t > self.t_range.0 + BOUNDARY_EPS
            && t <= self.t_range.1 + BOUNDARY_EPS
    }

    /// Uniform `nx x nt` grid including the endpoints, `t` varying fastest.
    pub fn grid(&self, nx: usize, nt: usize) -> Vec<(f64, f64)> {
        let xs = linspace(self.x_range.0, self.x_range.1, nx);
        let ts = linspace(self.t_range.0, self.t_range.1, nt);
        xs.iter()
            .flat_map(|&x| ts.iter().map(move |&t| (x, t)))
            .collect()
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

/// Measurement set split into boundary/initial samples and interior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    domain: DomainSpec,
    boundary: Vec<Sample>,
    interior: Vec<Sample>,
}

impl TrainingData {
    pub fn new(domain: DomainSpec, boundary: Vec<Sample>, interior: Vec<Sample>) -> Result<Self> {
        domain.validate()?;
        for s in &boundary {
            if !domain.on_boundary(s.x, s.t) {
                return Err(Error::Data(format!(
                    "boundary sample ({}, {}) does not lie on the boundary or initial line",
                    s.x, s.t
                )));
            }
        }
        for s in &interior {
            if !domain.strictly_interior(s.x, s.t) {
                return Err(Error::Data(format!(
                    "interior sample ({}, {}) is not strictly inside the domain",
                    s.x, s.t
                )));
            }
        }
        if boundary.iter().chain(&interior).any(|s| !(s.x.is_finite() && s.t.is_finite() && s.u.is_finite())) {
            return Err(Error::Data("non-finite sample".into()));
        }
        Ok(Self {
            domain,
            boundary,
            interior,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn boundary(&self) -> &[Sample] {
        &self.boundary
    }

    pub fn interior(&self) -> &[Sample] {
        &self.interior
    }

    /// All samples, boundary first.
    pub fn samples(&self) -> Vec<Sample> {
        self.boundary.iter().chain(&self.interior).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.boundary.len() + self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collocation coordinates; mirrors the measurement coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub boundary: Vec<(f64, f64)>,
    pub interior: Vec<(f64, f64)>,
}

impl CollocationSet {
    pub fn from_training(data: &TrainingData) -> Self {
        Self {
            boundary: data.boundary.iter().map(|s| (s.x, s.t)).collect(),
            interior: data.interior.iter().map(|s| (s.x, s.t)).collect(),
        }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.boundary.iter().chain(&self.interior).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.boundary.len() + self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An analytic field with its source term.
pub trait Generator: Send + Sync {
    fn domain(&self) -> DomainSpec;

    /// `(u, g)` at a point.
    fn eval(&self, x: f64, t: f64) -> (f64, f64);

    /// Closed-form value and derivatives of `u`.
    fn exact_jet(&self, x: f64, t: f64) -> Jet2;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    /// Diffusion coefficient `a^2`.
    pub a2: f64,
    pub length: f64,
    pub t_end: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self {
            a2: 1.0,
            length: PI,
            t_end: 10.0,
        }
    }
}

/// `u = exp(-t) sin(x/2)` on `[0, pi] x [0, T]` with the matching source
/// `g = (a^2/4 - 1) exp(-t) sin(x/2)` of `u_t = a^2 u_xx + g`.
///
/// Satisfies `u(x, 0) = sin(x/2)`, `u(0, t) = 0` and `u_x(pi, t) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedHeat {
    config: HeatConfig,
}

impl ManufacturedHeat {
    pub fn new(config: HeatConfig) -> Result<Self> {
        if (config.length - PI).abs() > 1e-12 {
            return Err(Error::config(format!(
                "manufactured heat solution needs L = pi, got {}",
                config.length
            )));
        }
        if !(config.a2 > 0.0) {
            return Err(Error::config("a2 must be positive"));
        }
        if !(config.t_end > 0.0) {
            return Err(Error::config("t_end must be positive"));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &HeatConfig {
        &self.config
    }
}

/// Free-function form of [`ManufacturedHeat::eval`].
pub fn manufactured_heat(config: &HeatConfig, x: f64, t: f64) -> Result<(f64, f64)> {
    Ok(ManufacturedHeat::new(*config)?.eval(x, t))
}

impl Generator for ManufacturedHeat {
    fn domain(&self) -> DomainSpec {
        DomainSpec {
            x_range: (0.0, self.config.length),
            t_range: (0.0, self.config.t_end),
        }
    }

    fn eval(&self, x: f64, t: f64) -> (f64, f64) {
        let u = (-t).exp() * (x / 2.0).sin();
        (u, (self.config.a2 / 4.0 - 1.0) * u)
    }

    fn exact_jet(&self, x: f64, t: f64) -> Jet2 {
        let e = (-t).exp();
        let u = e * (x / 2.0).sin();
        let ux = 0.5 * e * (x / 2.0).cos();
        Jet2 {
            value: u,
            d_x: ux,
            d_t: -u,
            d_xx: -0.25 * u,
            d_xt: -ux,
            d_tt: u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    /// Squared wave speed `c^2`.
    pub c2: f64,
    pub length: f64,
    pub t_end: f64,
    pub damping: f64,
    /// Angular frequency of the standing wave.
    pub omega: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            c2: 1.0,
            length: 5.2,
            t_end: 2.0,
            damping: 0.3,
            omega: 4.0 * PI,
        }
    }
}

/// Damped standing wave `u = exp(-gamma t) sin(pi x / L) cos(omega t)` with
/// source `g = u_tt - c^2 u_xx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticWave {
    config: WaveConfig,
}

impl SyntheticWave {
    pub fn new(config: WaveConfig) -> Result<Self> {
        if !(config.length > 0.0 && config.t_end > 0.0) {
            return Err(Error::config("wave domain must have positive extent"));
        }
        Ok(Self { config })
    }
}

/// Free-function form of [`SyntheticWave::eval`].
pub fn synthetic_wave(config: &WaveConfig, x: f64, t: f64) -> Result<(f64, f64)> {
    Ok(SyntheticWave::new(*config)?.eval(x, t))
}

impl Generator for SyntheticWave {
    fn domain(&self) -> DomainSpec {
        DomainSpec {
            x_range: (0.0, self.config.length),
            t_range: (0.0, self.config.t_end),
        }
    }

    fn eval(&self, x: f64, t: f64) -> (f64, f64) {
        let j = self.exact_jet(x, t);
        (j.value, j.d_tt - self.config.c2 * j.d_xx)
    }

    fn exact_jet(&self, x: f64, t: f64) -> Jet2 {
        let WaveConfig {
            length,
            damping: gamma,
            omega,
            ..
        } = self.config;
        let k = PI / length;
        let (sx, cx) = (k * x).sin_cos();
        let (sw, cw) = (omega * t).sin_cos();
        let e = (-gamma * t).exp();
        // time factor T(t) = e cos(wt) and its derivatives
        let tf = e * cw;
        let tf_t = e * (-gamma * cw - omega * sw);
        let tf_tt = e * ((gamma * gamma - omega * omega) * cw + 2.0 * gamma * omega * sw);
        Jet2 {
            value: sx * tf,
            d_x: k * cx * tf,
            d_t: sx * tf_t,
            d_xx: -k * k * sx * tf,
            d_xt: k * cx * tf_t,
            d_tt: sx * tf_tt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    pub boundary: usize,
    pub interior: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            boundary: 60,
            interior: 200,
        }
    }
}

/// Uniform random measurement and collocation sets.
///
/// Boundary samples are split equally between `t = t_lo`, `x = x_lo` and
/// `x = x_hi` (remainder to the first segments). Gaussian noise with
/// standard deviation `noise_sd` is added to every `u`.
pub fn sample_dataset(
    domain: &DomainSpec,
    generator: &dyn Generator,
    counts: SampleCounts,
    noise_sd: f64,
    seed: u64,
) -> Result<(TrainingData, CollocationSet)> {
    domain.validate()?;
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::config(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let (xl, xh) = domain.x_range;
    let (tl, th) = domain.t_range;

    let measure = |x: f64, t: f64, rng: &mut ChaCha8Rng| {
        let (u, _) = generator.eval(x, t);
        let eps = if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
        Sample { x, t, u: u + eps }
    };

    let per = counts.boundary / 3;
    let rem = counts.boundary % 3;
    let seg = [per + usize::from(rem > 0), per + usize::from(rem > 1), per];
    let mut boundary = Vec::with_capacity(counts.boundary);
    for _ in 0..seg[0] {
        let x = rng.gen_range(xl..=xh);
        boundary.push(measure(x, tl, &mut rng));
    }
    for _ in 0..seg[1] {
        let t = rng.gen_range(tl..=th);
        boundary.push(measure(xl, t, &mut rng));
    }
    for _ in 0..seg[2] {
        let t = rng.gen_range(tl..=th);
        boundary.push(measure(xh, t, &mut rng));
    }

    let mut interior = Vec::with_capacity(counts.interior);
    while interior.len() < counts.interior {
        let x = rng.gen_range(xl..xh);
        let t = rng.gen_range(tl..=th);
        if domain.strictly_interior(x, t) {
            interior.push(measure(x, t, &mut rng));
        }
    }

    let data = TrainingData::new(*domain, boundary, interior)?;
    let colloc = CollocationSet::from_training(&data);
    Ok((data, colloc))
}

/// Readings of fixed sensors at evenly spaced times over the generator's
/// time range, with optional Gaussian noise.
pub fn sensor_dataset(generator: &dyn Generator, positions: &[f64], readings: usize, noise_sd: f64, seed: u64) -> Result<Vec<Sample>> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::config(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    if readings < 2 {
        return Err(Error::config("need at least two readings per sensor"));
    }
    let dom = generator.domain();
    let times = linspace(dom.t_range.0, dom.t_range.1, readings);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let mut rows = Vec::with_capacity(positions.len() * readings);
    for &x in positions {
        for &t in &times {
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            rows.push(Sample {
                x,
                t,
                u: generator.eval(x, t).0 + eps,
            });
        }
    }
    Ok(rows)
}

/// Samples of the generator on a grid, without noise.
pub fn grid_samples(generator: &dyn Generator, nx: usize, nt: usize) -> Vec<Sample> {
    generator
        .domain()
        .grid(nx, nt)
        .into_iter()
        .map(|(x, t)| Sample {
            x,
            t,
            u: generator.eval(x, t).0,
        })
        .collect()
}

/// Writes `x,t,u` rows.
pub fn write_samples_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["x", "t", "u"])
        .and_then(|_| {
            for s in samples {
                w.write_record(&[s.x.to_string(), s.t.to_string(), s.u.to_string()])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Reads `x,t,u` rows; errors name the offending line.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let ingest = |line: u64, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "t", "u"] {
        return Err(ingest(1, format!("expected header 'x,t,u', found '{}'", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ingest(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ingest(line, format!("column '{name}' is not a finite number: '{raw}'")))
        };
        out.push(Sample {
            x: field(0, "x")?,
            t: field(1, "t")?,
            u: field(2, "u")?,
        });
    }
    Ok(out)
}

/// Sensor id to spatial position, plus the sensor withheld for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorLayout {
    pub sensors: BTreeMap<String, f64>,
    pub held_out: String,
}

impl SensorLayout {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Sensors `s0, s1, ...` at the given positions, withholding `held_out`.
    pub fn from_positions(positions: &[f64], held_out: usize) -> Result<Self> {
        if held_out >= positions.len() {
            return Err(Error::config(format!(
                "held-out index {held_out} out of range for {} sensors",
                positions.len()
            )));
        }
        Ok(Self {
            sensors: positions.iter().enumerate().map(|(i, &x)| (format!("s{i}"), x)).collect(),
            held_out: format!("s{held_out}"),
        })
    }

    pub fn sensor_at(&self, x: f64) -> Option<&str> {
        self.sensors
            .iter()
            .find(|(_, &pos)| (pos - x).abs() <= 1e-9)
            .map(|(id, _)| id.as_str())
    }
}

/// Loads sensor rows and withholds one sensor as test data.
///
/// The training domain spans the remaining sensors; its boundary set holds
/// the earliest-time rows and the rows of the two outermost sensors. The
/// held-out set uses the span of all sensors.
pub fn ingest_csv(path: &Path, layout: &SensorLayout) -> Result<(TrainingData, TrainingData)> {
    let rows = read_samples_csv(path)?;
    ingest_samples(&rows, layout)
}

pub fn ingest_samples(rows: &[Sample], layout: &SensorLayout) -> Result<(TrainingData, TrainingData)> {
    let held_x = *layout
        .sensors
        .get(&layout.held_out)
        .ok_or_else(|| Error::config(format!("held-out sensor '{}' is not in the layout", layout.held_out)))?;
    if rows.is_empty() {
        return Err(Error::Data("no sensor rows".into()));
    }
    let mut train_rows = Vec::new();
    let mut held_rows = Vec::new();
    for s in rows {
        let id = layout
            .sensor_at(s.x)
            .ok_or_else(|| Error::config(format!("row at x = {} matches no sensor position", s.x)))?;
        if id == layout.held_out {
            held_rows.push(*s);
        } else {
            train_rows.push(*s);
        }
    }
    let train_xs: Vec<f64> = layout
        .sensors
        .iter()
        .filter(|(id, _)| **id != layout.held_out)
        .map(|(_, &x)| x)
        .collect();
    if train_xs.len() < 2 {
        return Err(Error::config("need at least two non-held-out sensors"));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, xs: &mut dyn Iterator<Item = f64>| xs.fold(init, f);
    let x_lo = fold(f64::min, f64::INFINITY, &mut train_xs.iter().copied());
    let x_hi = fold(f64::max, f64::NEG_INFINITY, &mut train_xs.iter().copied());
    let t_lo = fold(f64::min, f64::INFINITY, &mut rows.iter().map(|s| s.t));
    let t_hi = fold(f64::max, f64::NEG_INFINITY, &mut rows.iter().map(|s| s.t));

    let split = |domain: DomainSpec, rows: Vec<Sample>| -> Result<TrainingData> {
        let (b, i): (Vec<Sample>, Vec<Sample>) = rows.into_iter().partition(|s| domain.on_boundary(s.x, s.t));
        TrainingData::new(domain, b, i)
    };
    let train_domain = DomainSpec::new((x_lo, x_hi), (t_lo, t_hi))?;
    let all_lo = x_lo.min(held_x);
    let all_hi = x_hi.max(held_x);
    let held_domain = DomainSpec::new((all_lo, all_hi), (t_lo, t_hi))?;
    Ok((split(train_domain, train_rows)?, split(held_domain, held_rows)?))
}
