use std::fmt::Write;

use rppg_core::pipeline::MetricsReport;

pub struct RunSummary {
    pub name: String,
    pub metrics: MetricsReport,
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"))
}

pub fn render_table(runs: &[RunSummary]) -> String {
    let width = runs.iter().map(|r| r.name.len()).max().unwrap_or(0).max(3);
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>6}  {:>5}\n", "run", "MAE", "RMSE", "SD", "R", "n");
    for run in runs {
        let m = &run.metrics;
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>6}  {:>5}",
            run.name,
            m.mae,
            m.rmse,
            m.sd,
            fmt_r(m.r),
            m.n
        );
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bars of MAE and RMSE per run, on a shared bpm axis.
pub fn render_svg(runs: &[RunSummary]) -> String {
    const LABEL_W: f64 = 160.0;
    const PLOT_W: f64 = 400.0;
    const ROW_H: f64 = 36.0;
    const TOP: f64 = 30.0;
    let max = runs
        .iter()
        .map(|r| r.metrics.rmse.max(r.metrics.mae))
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let height = TOP + ROW_H * runs.len() as f64 + 30.0;
    let width = LABEL_W + PLOT_W + 80.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<text x=\"{LABEL_W}\" y=\"18\">heart-rate error (bpm): MAE (dark), RMSE (light)</text>");
    for (i, run) in runs.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        let bar = |v: f64| if v.is_finite() { PLOT_W * v / max } else { 0.0 };
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", LABEL_W - 8.0, y + 18.0, escape(&run.name));
        let _ = writeln!(
            svg,
            "<rect x=\"{LABEL_W}\" y=\"{y}\" width=\"{:.1}\" height=\"13\" fill=\"#1f4e79\"/>",
            bar(run.metrics.mae)
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{LABEL_W}\" y=\"{}\" width=\"{:.1}\" height=\"13\" fill=\"#9dc3e6\"/>",
            y + 14.0,
            bar(run.metrics.rmse)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{}\">{:.2} / {:.2}</text>",
            LABEL_W + bar(run.metrics.rmse.max(run.metrics.mae)) + 6.0,
            y + 18.0,
            run.metrics.mae,
            run.metrics.rmse
        );
    }
    svg.push_str("</svg>\n");
    svg
}
