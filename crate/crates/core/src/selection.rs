//! Information-criterion scoring, metrics and the discovery report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::MlpParams;
use crate::data::TrainingData;
use crate::operators::{Combination, OperatorId};

/// Lower clamp applied to the fit variance before taking its logarithm.
pub const SIGMA2_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AicInput {
    /// Active operators.
    pub p: usize,
    /// Number of measurements.
    pub n: usize,
    pub sigma2_hat: f64,
}

/// `2 p + n ln(sigma2_hat)`.
pub fn aic(input: AicInput) -> Result<f64> {
    if input.p == 0 || input.n == 0 {
        return Err(Error::domain("AIC needs p >= 1 and n >= 1"));
    }
    if !(input.sigma2_hat > 0.0) || !input.sigma2_hat.is_finite() {
        return Err(Error::domain(format!(
            "fit variance must be positive and finite, got {}",
            input.sigma2_hat
        )));
    }
    Ok(2.0 * input.p as f64 + input.n as f64 * input.sigma2_hat.ln())
}

/// AIC with the variance clamped at [`SIGMA2_FLOOR`].
pub fn aic_clamped(p: usize, n: usize, sigma2_hat: f64) -> Result<f64> {
    aic(AicInput {
        p,
        n,
        sigma2_hat: sigma2_hat.max(SIGMA2_FLOOR),
    })
}

/// Fit variance: mean squared data residual of the solution network.
pub fn sigma2_from_fit(params_u: &MlpParams, data: &TrainingData) -> Result<f64> {
    crate::loss::mse_dn(params_u, data)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::config(format!(
            "metric inputs need equal nonzero lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Pearson correlation coefficient.
pub fn cc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::domain("correlation undefined for zero-variance input"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// A trained and scored combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub combination: Combination,
    pub n: usize,
    pub sigma2_hat: f64,
    pub aic: f64,
    pub rmse_train: f64,
    pub cc_train: f64,
    pub rmse_test: f64,
    pub cc_test: f64,
    /// RMSE of `phi(u)^T lambda - g_hat` over the collocation points.
    pub residual_rmse: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Checkpoint file names, relative to the run directory.
    pub checkpoint_u: Option<String>,
    pub checkpoint_g: Option<String>,
    pub checkpoint_rp: Option<String>,
    /// Test RMSE of the solution network before the recurrent phase.
    pub rmse_test_pre_rp: Option<f64>,
    pub monotone: bool,
    pub diagnostics: Vec<String>,
}

impl CandidateResult {
    pub fn p(&self) -> usize {
        self.combination.p()
    }

    pub fn mask(&self) -> u32 {
        self.combination.mask()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.combination.lambda
    }

    pub fn lambda_norm(&self) -> f64 {
        self.lambda().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn contains(&self, op: OperatorId) -> bool {
        self.combination.contains(op)
    }

    /// Checks `aic == 2p + n ln(max(sigma2, floor))` against its own fields.
    pub fn aic_consistent(&self) -> bool {
        aic_clamped(self.p(), self.n, self.sigma2_hat)
            .map(|a| (a - self.aic).abs() <= 1e-12 * (1.0 + a.abs()))
            .unwrap_or(false)
    }
}

/// A combination whose training aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub mask: u32,
    pub label: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryReport {
    /// Ascending AIC; ties by smaller `p`, then smaller mask.
    pub ranked: Vec<CandidateResult>,
    /// Best AIC for each number of active terms: `p -> (aic, mask)`.
    pub best_by_terms: BTreeMap<usize, (f64, u32)>,
    pub failed: Vec<FailedCandidate>,
}

impl DiscoveryReport {
    pub fn winner(&self) -> &CandidateResult {
        &self.ranked[0]
    }
}

fn rank_cmp(a: &CandidateResult, b: &CandidateResult) -> std::cmp::Ordering {
    a.aic
        .total_cmp(&b.aic)
        .then(a.p().cmp(&b.p()))
        .then(a.mask().cmp(&b.mask()))
}

/// Ranks candidates by AIC and picks the minimum.
pub fn select(results: Vec<CandidateResult>) -> Result<DiscoveryReport> {
    select_with_failures(results, Vec::new())
}

pub fn select_with_failures(mut results: Vec<CandidateResult>, failed: Vec<FailedCandidate>) -> Result<DiscoveryReport> {
    if results.is_empty() {
        return Err(Error::config("no candidates to select from"));
    }
    results.sort_by(rank_cmp);
    let mut best_by_terms: BTreeMap<usize, (f64, u32)> = BTreeMap::new();
    for r in &results {
        // results are ranked, so the first entry per p is the best
        best_by_terms.entry(r.p()).or_insert((r.aic, r.mask()));
    }
    Ok(DiscoveryReport {
        ranked: results,
        best_by_terms,
        failed,
    })
}

pub const CANDIDATE_CSV_HEADER: &str = "m,mask,operators,p,n,sigma2_hat,aic,rmse_train,cc_train,rmse_test,cc_test,residual_rmse,lambda_norm,lambda,outer_iterations,converged";

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

/// Candidate table, one row per combination in ascending mask order.
pub fn candidates_csv(report: &DiscoveryReport) -> String {
    let mut rows: Vec<&CandidateResult> = report.ranked.iter().collect();
    rows.sort_by_key(|r| r.mask());
    let mut out = String::from(CANDIDATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let lambda = r.lambda().iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.combination.index(),
            r.combination.mask_bits(),
            r.combination.label(),
            r.p(),
            r.n,
            fmt_f(r.sigma2_hat),
            fmt_f(r.aic),
            fmt_f(r.rmse_train),
            fmt_f(r.cc_train),
            fmt_f(r.rmse_test),
            fmt_f(r.cc_test),
            fmt_f(r.residual_rmse),
            fmt_f(r.lambda_norm()),
            lambda,
            r.outer_iterations,
            r.converged,
        );
    }
    out
}

pub fn markdown_summary(report: &DiscoveryReport) -> String {
    let w = report.winner();
    let mut md = String::new();
    let _ = writeln!(md, "# Discovered structure\n");
    let _ = writeln!(md, "Winner: `{}` (mask {}, p = {})\n", w.combination.label(), w.combination.mask_bits(), w.p());
    let _ = writeln!(md, "| quantity | value |\n|---|---|");
    let _ = writeln!(md, "| aic | {} |", fmt_f(w.aic));
    let _ = writeln!(md, "| sigma2_hat | {} |", fmt_f(w.sigma2_hat));
    let _ = writeln!(md, "| rmse_train | {} |", fmt_f(w.rmse_train));
    let _ = writeln!(md, "| cc_train | {} |", fmt_f(w.cc_train));
    let _ = writeln!(md, "| rmse_test | {} |", fmt_f(w.rmse_test));
    let _ = writeln!(md, "| cc_test | {} |", fmt_f(w.cc_test));
    let _ = writeln!(md, "| residual_rmse | {} |", fmt_f(w.residual_rmse));
    let coeffs = w
        .combination
        .active()
        .iter()
        .zip(w.lambda())
        .map(|(op, l)| format!("{op}: {}", fmt_f(*l)))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(md, "\nCoefficients: {coeffs}\n");
    let _ = writeln!(md, "## Best AIC per number of terms\n");
    let _ = writeln!(md, "Each bar is the best (minimal-AIC) subset of that size.\n");
    let _ = writeln!(md, "| terms | aic | operators |\n|---|---|---|");
    for (p, (a, mask)) in &report.best_by_terms {
        let label = report
            .ranked
            .iter()
            .find(|r| r.mask() == *mask)
            .map(|r| r.combination.label())
            .unwrap_or_default();
        let _ = writeln!(md, "| {p} | {} | {label} |", fmt_f(*a));
    }
    let _ = writeln!(md, "\n## Ranking\n");
    let _ = writeln!(md, "| rank | operators | p | aic | sigma2_hat |\n|---|---|---|---|---|");
    for (i, r) in report.ranked.iter().enumerate() {
        let _ = writeln!(md, "| {} | {} | {} | {} | {} |", i + 1, r.combination.label(), r.p(), fmt_f(r.aic), fmt_f(r.sigma2_hat));
    }
    if !report.failed.is_empty() {
        let _ = writeln!(md, "\n## Aborted combinations\n");
        for f in &report.failed {
            let _ = writeln!(md, "- `{}`: {}", f.label, f.message);
        }
    }
    md
}

/// Bar chart of the best AIC per number of terms.
pub fn aic_bar_svg(report: &DiscoveryReport) -> String {
    let bars: Vec<(usize, f64)> = report.best_by_terms.iter().map(|(p, (a, _))| (*p, *a)).collect();
    let (w, h) = (480.0, 320.0);
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
    let plot_h = h - top - bottom;
    let lo = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let hi = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let y_of = |v: f64| top + (hi - v) / span * plot_h;
    let zero = y_of(0.0);
    let slot = (w - left - right) / bars.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">best AIC per number of operator terms</text>"#, w / 2.0);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="black"/>"#, w - right);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    for (v, anchor) in [(hi, top), (lo, h - bottom)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{:.1}</text>"#, left - 4.0, anchor + 3.0, v);
    }
    let winner_p = report.winner().p();
    for (i, (p, a)) in bars.iter().enumerate() {
        let x = left + slot * (i as f64 + 0.2);
        let bw = slot * 0.6;
        let y = y_of(*a);
        let (y0, bh) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
        let fill = if *p == winner_p { "#c0392b" } else { "#5d7fa3" };
        let _ = writeln!(svg, r#"<rect x="{x:.2}" y="{y0:.2}" width="{bw:.2}" height="{bh:.2}" fill="{fill}"/>"#);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{p}</text>"#, x + bw / 2.0, h - bottom + 16.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="9" text-anchor="middle">{:.1}</text>"#, x + bw / 2.0, y0 - 3.0, a);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">number of terms</text>"#, w / 2.0, h - 12.0);
    svg.push_str("</svg>\n");
    svg
}

/// Writes `candidates.csv`, `summary.md` and `aic_bars.svg` into `dir`.
pub fn write_report(dir: &Path, report: &DiscoveryReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("candidates.csv", candidates_csv(report)),
        ("summary.md", markdown_summary(report)),
        ("aic_bars.svg", aic_bar_svg(report)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
