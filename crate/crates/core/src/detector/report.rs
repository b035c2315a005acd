use super::{DetectionReport, ScenarioOutcome};
use crate::attack::AttackKind;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprCurve {
    pub gamma: f64,
    /// `(alpha, fpr)` on clean test windows.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub format_version: u32,
    pub seed: u64,
    /// Hash of the run configuration, filled in by the experiment driver.
    #[serde(default)]
    pub config_hash: String,
    pub alpha: f64,
    pub model_hash: String,
    pub rows: Vec<DetectionReport>,
    pub curves: Vec<FprCurve>,
    pub outcomes: Vec<ScenarioOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn kind_label(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Fdia => "fdia",
        AttackKind::Replay => "replay",
        AttackKind::Combined => "combined",
    }
}

pub fn render_reports_csv(rows: &[DetectionReport]) -> String {
    let mut out = String::from("kind,bus,mu,gamma,scheme,steps,tp,fp,tn,fn,tpr,fpr,precision,recall,f1\n");
    for r in rows {
        let c = &r.confusion;
        let key = match &r.key {
            Some(k) => format!(
                "{},{},{},{},{},{}",
                kind_label(k.kind),
                k.bus.map(|b| b.to_string()).unwrap_or_default(),
                k.mu,
                k.gamma,
                k.scheme,
                k.steps
            ),
            None => "clean,,,,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{key},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.tp, c.fp, c.tn, c.fn_, r.tpr, r.fpr, r.precision, r.recall, r.f1
        );
    }
    out
}

fn curves_csv(curves: &[FprCurve]) -> String {
    let mut out = String::from("gamma,alpha,fpr,fpr_plus_alpha\n");
    for c in curves {
        for (a, f) in &c.points {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", c.gamma, a, f, f + a);
        }
    }
    out
}

fn series_csv(x_name: &str, series: &[ChartSeries]) -> String {
    let mut out = format!("series,{x_name},detection_rate\n");
    for s in series {
        for (x, y) in &s.points {
            let _ = writeln!(out, "{},{x},{y:.6}", s.label);
        }
    }
    out
}

impl CampaignReport {
    fn attack_rows(&self) -> impl Iterator<Item = &DetectionReport> {
        self.rows.iter().filter(|r| r.key.as_ref().is_some_and(|k| k.kind == AttackKind::Fdia && k.bus.is_none()))
    }

    /// Detection rate against `mu`, one series per `(gamma, scheme, steps)`.
    pub fn rate_vs_mu(&self) -> Vec<ChartSeries> {
        let mut out: Vec<ChartSeries> = Vec::new();
        for r in self.attack_rows() {
            let k = r.key.as_ref().expect("attack rows have keys");
            let label = format!("gamma={} {} steps={}", k.gamma, k.scheme, k.steps);
            push_point(&mut out, label, (k.mu, r.tpr));
        }
        sort_series(out)
    }

    /// Detection rate against `gamma`, one series per `(mu, steps)`.
    pub fn rate_vs_gamma(&self) -> Vec<ChartSeries> {
        let mut out: Vec<ChartSeries> = Vec::new();
        for r in self.attack_rows() {
            let k = r.key.as_ref().expect("attack rows have keys");
            push_point(&mut out, format!("mu={} steps={}", k.mu, k.steps), (k.gamma, r.tpr));
        }
        sort_series(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Writes CSV, JSON and SVG outputs into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), render_reports_csv(&self.rows))?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("fpr_vs_alpha.csv"), curves_csv(&self.curves))?;
        let fpr_series: Vec<ChartSeries> = self
            .curves
            .iter()
            .map(|c| ChartSeries { label: format!("gamma={}", c.gamma), points: c.points.clone() })
            .collect();
        std::fs::write(dir.join("fpr_vs_alpha.svg"), line_chart_svg("FPR vs alpha", "alpha", "FPR", &fpr_series))?;
        let by_mu = self.rate_vs_mu();
        std::fs::write(dir.join("rate_vs_mu.csv"), series_csv("mu", &by_mu))?;
        std::fs::write(dir.join("rate_vs_mu.svg"), line_chart_svg("Detection rate vs mu", "mu", "TPR", &by_mu))?;
        let by_gamma = self.rate_vs_gamma();
        std::fs::write(dir.join("rate_vs_gamma.csv"), series_csv("gamma", &by_gamma))?;
        std::fs::write(
            dir.join("rate_vs_gamma.svg"),
            line_chart_svg("Detection rate vs gamma", "gamma", "TPR", &by_gamma),
        )?;
        Ok(())
    }
}

fn push_point(out: &mut Vec<ChartSeries>, label: String, p: (f64, f64)) {
    match out.iter_mut().find(|s| s.label == label) {
        Some(s) => s.points.push(p),
        None => out.push(ChartSeries { label, points: vec![p] }),
    }
}

fn sort_series(mut out: Vec<ChartSeries>) -> Vec<ChartSeries> {
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal SVG line chart with linear axes and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[ChartSeries]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 180.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    y0 = y0.min(0.0);
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="black" points="{left},{top} {left},{} {},{}"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(yv) + 4.0, fmt_tick(yv));
        let _ = writeln!(out, r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, left + pw, sy(yv), sy(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        for (x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(*x), sy(*y));
        }
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, w - right + 12.0, ly);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, w - right + 26.0, ly + 9.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}
