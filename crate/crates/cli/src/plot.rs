//! Static SVG rendering of runs and law curves on a log-B axis.
//!
//! Output is a pure function of the input data, so equal inputs give
//! byte-identical files.

use std::fmt::Write as _;

use surge::fit::ScalingFit;
use surge::harness::{batch_sizes, empirical_optimal_lr, RunRecord};
use surge::laws::{curve, log_grid, CurveSource, LawCurve, LawParams, Variant};
use surge::{Error, Result};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 640.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 460.0;

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

#[derive(Debug, Clone, Default)]
pub struct PlotData {
    pub title: Option<String>,
    pub curves: Vec<LawCurve>,
    pub runs: Vec<RunRecord>,
    pub fit: Option<ScalingFit>,
    pub b_noise: Option<f64>,
}

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

struct Scale {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Scale {
    fn x(&self, b: f64) -> f64 {
        LEFT + (b.ln() - self.x_lo.ln()) / (self.x_hi.ln() - self.x_lo.ln()) * (RIGHT - LEFT)
    }

    fn y(&self, v: f64) -> f64 {
        BOTTOM - (v - self.y_lo) / (self.y_hi - self.y_lo) * (BOTTOM - TOP)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// t in [0, 1] mapped onto a perceptually ordered ramp.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let (a, b) = (RAMP[k], RAMP[k + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

fn fit_overlays(fit: &ScalingFit, lo: f64, hi: f64) -> Result<Vec<Series>> {
    let grid = log_grid(lo, hi, 120)?;
    let laws = [
        ("fit: surge", Variant::Surge, fit.eps_max_adam),
        ("fit: sgd α=0.5", Variant::SgdAlpha(0.5), fit.eps_max_sgd_05),
        ("fit: sgd α=1", Variant::SgdAlpha(1.0), fit.eps_max_sgd_10),
    ];
    laws.iter()
        .enumerate()
        .map(|(k, (label, v, eps))| {
            let params = LawParams {
                b_noise: fit.b_noise,
                eps_max: *eps,
                dl_max: None,
                large_batch_lr: None,
            };
            Ok(Series {
                label: label.to_string(),
                color: PALETTE[(k + 5) % PALETTE.len()],
                dashed: true,
                points: curve(CurveSource::Params(params), *v, &grid)?.points,
            })
        })
        .collect()
}

fn x_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut mults: &[f64] = &[1.0];
    if hi / lo < 30.0 {
        mults = &[1.0, 2.0, 5.0];
    }
    for e in lo.log10().floor() as i32..=hi.log10().ceil() as i32 {
        for m in mults {
            let v = m * 10f64.powi(e);
            if v >= lo && v <= hi {
                out.push(v);
            }
        }
    }
    out
}

fn y_ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

pub fn render_svg(data: &PlotData) -> Result<String> {
    let mut series: Vec<Series> = data
        .curves
        .iter()
        .enumerate()
        .map(|(k, c)| Series {
            label: c.variant.to_string(),
            color: PALETTE[k % PALETTE.len()],
            dashed: false,
            points: c
                .points
                .iter()
                .copied()
                .filter(|(b, v)| *b > 0.0 && v.is_finite())
                .collect(),
        })
        .collect();
    let runs: Vec<&RunRecord> = data
        .runs
        .iter()
        .filter(|r| r.final_loss.is_some_and(f64::is_finite))
        .collect();

    let xs = || {
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(runs.iter().map(|r| r.batch_size as f64))
    };
    let (mut x_lo, mut x_hi) = xs().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    if !x_lo.is_finite() {
        return Err(Error::InvalidArgument(
            "nothing to plot: no finite points".into(),
        ));
    }
    if let Some(fit) = &data.fit {
        series.extend(fit_overlays(fit, x_lo, x_hi.max(x_lo * 2.0))?);
    }
    let b_noise = data
        .b_noise
        .or(data.fit.map(|f| f.b_noise))
        .or_else(|| {
            data.curves
                .iter()
                .find(|c| c.variant == Variant::Surge)
                .and_then(|c| c.argmax())
                .map(|p| p.0)
        })
        .filter(|b| *b > 0.0 && b.is_finite());
    if let Some(b) = b_noise {
        x_lo = x_lo.min(b);
        x_hi = x_hi.max(b);
    }
    if x_hi <= x_lo {
        x_lo /= 2.0;
        x_hi *= 2.0;
    }
    let pad = (x_hi / x_lo).powf(0.04);
    let (x_lo, x_hi) = (x_lo / pad, x_hi * pad);

    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(runs.iter().map(|r| r.lr));
    let (y_min, y_max) = ys.fold((0.0f64, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    let y_hi = if y_max > y_min {
        y_max + 0.08 * (y_max - y_min)
    } else {
        y_min + 1.0
    };
    let sc = Scale {
        x_lo,
        x_hi,
        y_lo: y_min,
        y_hi,
    };

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        w,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if let Some(t) = &data.title {
        let _ = writeln!(
            w,
            r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            (LEFT + RIGHT) / 2.0,
            escape(t)
        );
    }

    // axes and grid
    for t in x_ticks(x_lo, x_hi) {
        let x = sc.x(t);
        let _ = writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{BOTTOM}" stroke="#e6e6e6"/><text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"##,
            BOTTOM + 18.0
        );
    }
    let (yt, decimals) = y_ticks(sc.y_lo, sc.y_hi);
    for t in yt {
        let y = sc.y(t);
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#e6e6e6"/><text x="{}" y="{:.2}" text-anchor="end">{t:.decimals$}</text>"##,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let _ = writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">batch size B</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0
    );
    let _ = writeln!(
        w,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">learning rate</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );

    // runs, colored by log final loss
    let losses: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.final_loss)
        .filter(|l| *l > 0.0)
        .collect();
    let (l_lo, l_hi) = losses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| {
            (a.min(*l), b.max(*l))
        });
    let shade = |l: f64| {
        if l.is_nan() || l <= 0.0 || l_hi <= l_lo {
            return ramp(0.0);
        }
        ramp((l.ln() - l_lo.ln()) / (l_hi.ln() - l_lo.ln()))
    };
    let _ = writeln!(w, r#"<g fill-opacity="0.75">"#);
    for r in &runs {
        let _ = writeln!(
            w,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            sc.x(r.batch_size as f64),
            sc.y(r.lr),
            shade(r.final_loss.unwrap_or(0.0))
        );
    }
    let _ = writeln!(w, "</g>");
    let optima: Vec<(f64, f64)> = batch_sizes(&data.runs)
        .into_iter()
        .filter_map(|b| {
            empirical_optimal_lr(&data.runs, b)
                .ok()
                .map(|(lr, _)| (b as f64, lr))
        })
        .collect();
    for (b, lr) in &optima {
        let _ = writeln!(
            w,
            r#"<circle cx="{:.2}" cy="{:.2}" r="6" fill="none" stroke="black" stroke-width="1.5"/>"#,
            sc.x(*b),
            sc.y(*lr)
        );
    }

    // law curves
    for ser in &series {
        if ser.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|(b, v)| format!("{:.2},{:.2}", sc.x(*b), sc.y(*v)))
            .collect();
        let dash = if ser.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            w,
            r#"<polyline fill="none" stroke="{}" stroke-width="2"{dash} points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
    }
    if let Some(b) = b_noise {
        let x = sc.x(b);
        let _ = writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{BOTTOM}" stroke="#555" stroke-dasharray="2 3"/>"##
        );
    }

    // legend
    let lx = RIGHT + 20.0;
    let mut ly = TOP + 10.0;
    for ser in &series {
        let dash = if ser.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ser.color,
            lx + 30.0,
            ly + 4.0,
            escape(&ser.label)
        );
        ly += 20.0;
    }
    if !optima.is_empty() {
        let _ = writeln!(
            w,
            r#"<circle cx="{}" cy="{ly}" r="6" fill="none" stroke="black" stroke-width="1.5"/><text x="{}" y="{}">optimal lr per B</text>"#,
            lx + 12.0,
            lx + 30.0,
            ly + 4.0
        );
        ly += 20.0;
    }
    if let Some(b) = b_noise {
        let _ = writeln!(
            w,
            r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="#555" stroke-dasharray="2 3"/><text x="{}" y="{}">B_noise = {b:.4}</text>"##,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        );
        ly += 20.0;
    }
    if l_hi > l_lo {
        ly += 10.0;
        let _ = writeln!(w, r#"<text x="{lx}" y="{ly}">final loss</text>"#);
        ly += 8.0;
        for k in 0..20 {
            let _ = writeln!(
                w,
                r#"<rect x="{:.1}" y="{ly}" width="10" height="12" fill="{}"/>"#,
                lx + 10.0 * k as f64,
                ramp(k as f64 / 19.0)
            );
        }
        let _ = writeln!(
            w,
            r#"<text x="{lx}" y="{}">{l_lo:.3e}</text><text x="{}" y="{}" text-anchor="end">{l_hi:.3e}</text>"#,
            ly + 26.0,
            lx + 200.0,
            ly + 26.0
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surge_curve() -> LawCurve {
        LawCurve {
            variant: Variant::Surge,
            points: vec![(1.0, 0.2), (10.0, 0.6), (100.0, 0.3)],
        }
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(7.0), "#fde725");
    }

    #[test]
    fn ticks() {
        assert_eq!(x_ticks(0.5, 2000.0), vec![1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(x_ticks(3.0, 40.0), vec![5.0, 10.0, 20.0]);
        let (t, d) = y_ticks(0.0, 0.031);
        assert_eq!(d, 2);
        assert_eq!(t, vec![0.0, 0.01, 0.02, 0.03]);
    }

    #[test]
    fn one_polyline_per_curve() {
        let mut other = surge_curve();
        other.variant = Variant::SgdAlpha(0.5);
        let svg = render_svg(&PlotData {
            curves: vec![surge_curve(), other],
            ..PlotData::default()
        })
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("B_noise = 10.0000"));
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn runs_are_scattered() {
        let run = |b, lr, loss| RunRecord {
            batch_size: b,
            lr,
            seed: 0,
            converged: true,
            steps: Some(3),
            final_loss: Some(loss),
        };
        let data = PlotData {
            runs: vec![
                run(4, 0.1, 1.0),
                run(4, 0.2, 0.5),
                run(8, 0.1, f64::INFINITY),
            ],
            title: Some("a < b".into()),
            ..PlotData::default()
        };
        let svg = render_svg(&data).unwrap();
        assert_eq!(svg.matches(r#"r="3""#).count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("final loss"));
        assert!(render_svg(&PlotData::default()).is_err());
    }
}
