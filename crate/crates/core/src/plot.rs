//! Self-contained SVG charts: training curves with confidence bands, travel
//! time box plots, and relative-change bars. No external assets, scripts, or
//! fonts beyond `sans-serif`; every file renders standalone.

use std::fmt::Write;

use crate::eval::{CellSummary, BoxStats};
use crate::offline_rl::AggregateCurve;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

/// Line colors cycled across series.
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn fmt(v: f64) -> String {
    // Shortest representation that survives axis labels: trim trailing zeros.
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" { "0".to_string() } else { s.to_string() }
}

/// Maps data values into pixel coordinates for one axis.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Scale {
        let (lo, hi) = if (hi - lo).abs() < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        Scale { lo, hi, px_lo, px_hi }
    }

    fn at(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    /// Round tick positions covering the range: steps of 1, 2, or 5 times a
    /// power of ten, aiming for about `n` ticks.
    fn ticks(&self, n: usize) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / n.max(2) as f64;
        let mag = 10f64.powf(raw.log10().floor());
        let norm = raw / mag;
        let step = if norm <= 1.5 {
            1.0
        } else if norm <= 3.5 {
            2.0
        } else if norm <= 7.5 {
            5.0
        } else {
            10.0
        } * mag;
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + step * 1e-9 {
            out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
            t += step;
        }
        out
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        write!(
            body,
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
                "width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
                "<text x=\"{cx}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{t}</text>\n"
            ),
            w = WIDTH,
            h = HEIGHT,
            cx = WIDTH / 2.0,
            t = escape(title),
        )
        .unwrap();
        Svg { body }
    }

    fn axes(&mut self, xs: &Scale, ys: &Scale, x_label: &str, y_label: &str) {
        let b = &mut self.body;
        for t in ys.ticks(6) {
            let y = ys.at(t);
            write!(
                b,
                concat!(
                    "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" ",
                    "stroke=\"#ddd\" stroke-width=\"1\"/>\n",
                    "<text x=\"{xt}\" y=\"{yt}\" text-anchor=\"end\">{v}</text>\n"
                ),
                x0 = MARGIN_L,
                x1 = WIDTH - MARGIN_R,
                y = y,
                xt = MARGIN_L - 8.0,
                yt = y + 4.0,
                v = fmt(t),
            )
            .unwrap();
        }
        for t in xs.ticks(8) {
            let x = xs.at(t);
            write!(
                b,
                "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{v}</text>\n",
                x = x,
                y = HEIGHT - MARGIN_B + 20.0,
                v = fmt(t),
            )
            .unwrap();
        }
        write!(
            b,
            concat!(
                "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b0}\" stroke=\"black\"/>\n",
                "<line x1=\"{l}\" y1=\"{b0}\" x2=\"{r}\" y2=\"{b0}\" stroke=\"black\"/>\n",
                "<text x=\"{cx}\" y=\"{bl}\" text-anchor=\"middle\">{xl}</text>\n",
                "<text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" ",
                "transform=\"rotate(-90 16 {cy})\">{yl}</text>\n"
            ),
            l = MARGIN_L,
            r = WIDTH - MARGIN_R,
            t = MARGIN_T,
            b0 = HEIGHT - MARGIN_B,
            bl = HEIGHT - 16.0,
            cx = (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            cy = (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            xl = escape(x_label),
            yl = escape(y_label),
        )
        .unwrap();
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{:.2},{:.2}", x, y).unwrap();
    }
    s
}

/// Training curves, one line per labeled series, with a translucent 95% CI
/// band where the series carries one.
pub fn training_curves_svg(series: &[(String, AggregateCurve)], title: &str) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut x_hi: f64 = 1.0;
    for (_, c) in series {
        for (i, &m) in c.mean.iter().enumerate() {
            let (a, b) = match &c.ci {
                Some((l, h)) => (l[i], h[i]),
                None => (m, m),
            };
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if let Some(&s) = c.steps.last() {
            x_hi = x_hi.max(s as f64);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    let xs = Scale::new(0.0, x_hi, MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(lo - pad, hi + pad, HEIGHT - MARGIN_B, MARGIN_T);

    let mut svg = Svg::new(title);
    svg.axes(&xs, &ys, "training step", "normalized reward");
    for (k, (label, c)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some((l, h)) = &c.ci {
            let mut band: Vec<(f64, f64)> = c
                .steps
                .iter()
                .zip(h)
                .map(|(&s, &v)| (xs.at(s as f64), ys.at(v)))
                .collect();
            band.extend(
                c.steps.iter().zip(l).rev().map(|(&s, &v)| (xs.at(s as f64), ys.at(v))),
            );
            write!(
                svg.body,
                "<polygon points=\"{}\" fill=\"{}\" opacity=\"0.15\"/>\n",
                polyline(&band),
                color,
            )
            .unwrap();
        }
        let line: Vec<(f64, f64)> = c
            .steps
            .iter()
            .zip(&c.mean)
            .map(|(&s, &v)| (xs.at(s as f64), ys.at(v)))
            .collect();
        write!(
            svg.body,
            concat!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
                "<rect x=\"{lx}\" y=\"{ly}\" width=\"14\" height=\"4\" fill=\"{}\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\">{}</text>\n"
            ),
            polyline(&line),
            color,
            color,
            escape(label),
            lx = MARGIN_L + 12.0,
            ly = MARGIN_T + 8.0 + 18.0 * k as f64,
            tx = MARGIN_L + 32.0,
            ty = MARGIN_T + 14.0 + 18.0 * k as f64,
        )
        .unwrap();
    }
    svg.finish()
}

fn draw_box(body: &mut String, x: f64, half_w: f64, b: &BoxStats, ys: &Scale, color: &str) {
    let (q1, q3, med, lo, hi) = (ys.at(b.q1), ys.at(b.q3), ys.at(b.median), ys.at(b.min), ys.at(b.max));
    write!(
        body,
        concat!(
            "<line x1=\"{x}\" y1=\"{lo}\" x2=\"{x}\" y2=\"{q1}\" stroke=\"{c}\"/>\n",
            "<line x1=\"{x}\" y1=\"{q3}\" x2=\"{x}\" y2=\"{hi}\" stroke=\"{c}\"/>\n",
            "<line x1=\"{wl}\" y1=\"{lo}\" x2=\"{wr}\" y2=\"{lo}\" stroke=\"{c}\"/>\n",
            "<line x1=\"{wl}\" y1=\"{hi}\" x2=\"{wr}\" y2=\"{hi}\" stroke=\"{c}\"/>\n",
            "<rect x=\"{bx}\" y=\"{by}\" width=\"{bw}\" height=\"{bh}\" ",
            "fill=\"{c}\" opacity=\"0.25\" stroke=\"{c}\"/>\n",
            "<line x1=\"{bx}\" y1=\"{med}\" x2=\"{bxr}\" y2=\"{med}\" ",
            "stroke=\"{c}\" stroke-width=\"2\"/>\n"
        ),
        x = x,
        lo = lo,
        hi = hi,
        q1 = q1,
        q3 = q3,
        med = med,
        wl = x - half_w * 0.5,
        wr = x + half_w * 0.5,
        bx = x - half_w,
        bxr = x + half_w,
        by = q3,
        bw = 2.0 * half_w,
        bh = (q1 - q3).max(0.5),
        c = color,
    )
    .unwrap();
}

/// Travel-time box plots grouped by density, one colored box per agent.
/// Cells without completed episodes are drawn as a label only.
pub fn travel_time_boxes_svg(cells: &[CellSummary], title: &str) -> String {
    let mut agents: Vec<&str> = Vec::new();
    let mut densities: Vec<&str> = Vec::new();
    for c in cells {
        if !agents.contains(&c.agent.as_str()) {
            agents.push(&c.agent);
        }
        if !densities.contains(&c.density.name()) {
            densities.push(c.density.name());
        }
    }
    let mut lo: f64 = 0.0;
    let mut hi = f64::NEG_INFINITY;
    for c in cells {
        if let Some(b) = &c.travel_time {
            lo = lo.min(b.min);
            hi = hi.max(b.max);
        }
    }
    if !hi.is_finite() {
        hi = 1.0;
    }
    let pad = 0.08 * (hi - lo).max(1e-9);
    let ys = Scale::new(lo, hi + pad, HEIGHT - MARGIN_B, MARGIN_T);
    let span = WIDTH - MARGIN_L - MARGIN_R;
    let group_w = span / densities.len() as f64;
    let slot_w = group_w / (agents.len() + 1) as f64;

    let mut svg = Svg::new(title);
    svg.axes(&Scale::new(0.0, 1.0, MARGIN_L, WIDTH - MARGIN_R), &ys, "", "travel time, s");
    // Cover the x tick labels from the dummy scale with group names instead.
    write!(
        svg.body,
        "<rect x=\"0\" y=\"{}\" width=\"{}\" height=\"26\" fill=\"white\"/>\n",
        HEIGHT - MARGIN_B + 6.0,
        WIDTH,
    )
    .unwrap();
    for (di, d) in densities.iter().enumerate() {
        let cx = MARGIN_L + (di as f64 + 0.5) * group_w;
        write!(
            svg.body,
            "<text x=\"{cx}\" y=\"{y}\" text-anchor=\"middle\">{d}</text>\n",
            y = HEIGHT - MARGIN_B + 20.0,
        )
        .unwrap();
    }
    for c in cells {
        let ai = agents.iter().position(|a| *a == c.agent).unwrap();
        let di = densities.iter().position(|d| *d == c.density.name()).unwrap();
        let x = MARGIN_L + di as f64 * group_w + (ai as f64 + 1.0) * slot_w;
        let color = PALETTE[ai % PALETTE.len()];
        match &c.travel_time {
            Some(b) => draw_box(&mut svg.body, x, slot_w * 0.35, b, &ys, color),
            None => write!(
                svg.body,
                "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" fill=\"{color}\">n/a</text>\n",
                y = HEIGHT - MARGIN_B - 8.0,
            )
            .unwrap(),
        }
    }
    for (ai, a) in agents.iter().enumerate() {
        let color = PALETTE[ai % PALETTE.len()];
        write!(
            svg.body,
            concat!(
                "<rect x=\"{lx}\" y=\"{ly}\" width=\"14\" height=\"10\" ",
                "fill=\"{c}\" opacity=\"0.4\" stroke=\"{c}\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\">{a}</text>\n"
            ),
            lx = MARGIN_L + 12.0,
            ly = MARGIN_T + 4.0 + 18.0 * ai as f64,
            tx = MARGIN_L + 32.0,
            ty = MARGIN_T + 13.0 + 18.0 * ai as f64,
            c = color,
            a = escape(a),
        )
        .unwrap();
    }
    svg.finish()
}

/// Bars of percentage travel-time change against the baseline, grouped by
/// density. Negative bars (faster than baseline) grow downward from zero.
pub fn travel_time_change_svg(cells: &[CellSummary], title: &str) -> String {
    let bars: Vec<(&CellSummary, f64)> =
        cells.iter().filter_map(|c| c.travel_time_change_pct.map(|p| (c, p))).collect();
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for (_, p) in &bars {
        lo = lo.min(*p);
        hi = hi.max(*p);
    }
    let pad = 0.1 * (hi - lo).max(1.0);
    let ys = Scale::new(lo - pad, hi + pad, HEIGHT - MARGIN_B, MARGIN_T);
    let span = WIDTH - MARGIN_L - MARGIN_R;
    let slot = span / bars.len().max(1) as f64;

    let mut svg = Svg::new(title);
    svg.axes(
        &Scale::new(0.0, 1.0, MARGIN_L, WIDTH - MARGIN_R),
        &ys,
        "",
        "travel time change vs baseline, %",
    );
    write!(
        svg.body,
        "<rect x=\"0\" y=\"{}\" width=\"{}\" height=\"26\" fill=\"white\"/>\n",
        HEIGHT - MARGIN_B + 6.0,
        WIDTH,
    )
    .unwrap();
    let zero = ys.at(0.0);
    write!(
        svg.body,
        "<line x1=\"{}\" y1=\"{zero}\" x2=\"{}\" y2=\"{zero}\" stroke=\"black\"/>\n",
        MARGIN_L,
        WIDTH - MARGIN_R,
    )
    .unwrap();
    for (i, (c, p)) in bars.iter().enumerate() {
        let x = MARGIN_L + (i as f64 + 0.2) * slot;
        let y = ys.at(*p);
        let (top, h) = if *p >= 0.0 { (y, zero - y) } else { (zero, y - zero) };
        let color = if *p < 0.0 { "#2ca02c" } else { "#d62728" };
        write!(
            svg.body,
            concat!(
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" ",
                "fill=\"{c}\" opacity=\"0.7\"/>\n",
                "<text x=\"{cx:.2}\" y=\"{ly}\" text-anchor=\"middle\">{l}</text>\n",
                "<text x=\"{cx:.2}\" y=\"{vy:.2}\" text-anchor=\"middle\" font-size=\"11\">{v}%</text>\n"
            ),
            x = x,
            top = top,
            h = h,
            w = slot * 0.6,
            c = color,
            cx = x + slot * 0.3,
            ly = HEIGHT - MARGIN_B + 20.0,
            l = escape(&format!("{} {}", c.agent, c.density.name())),
            vy = if *p >= 0.0 { y - 6.0 } else { y + 14.0 },
            v = fmt(*p),
        )
        .unwrap();
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DensitySpec;

    fn curve(n: usize, offset: f64, with_ci: bool) -> AggregateCurve {
        let steps: Vec<usize> = (1..=n).map(|i| i * 400).collect();
        let mean: Vec<f64> = steps.iter().map(|&s| offset + (s as f64 / 8000.0).tanh()).collect();
        let ci = with_ci.then(|| {
            let lo = mean.iter().map(|m| m - 0.1).collect();
            let hi = mean.iter().map(|m| m + 0.1).collect();
            (lo, hi)
        });
        AggregateCurve { steps, mean, ci }
    }

    fn box_stats(center: f64) -> BoxStats {
        BoxStats {
            min: center - 2.0,
            q1: center - 1.0,
            median: center,
            mean: center + 0.1,
            q3: center + 1.0,
            max: center + 2.0,
            ci_half: Some(0.4),
        }
    }

    fn cell(agent: &str, density: DensitySpec, t: Option<f64>, pct: Option<f64>) -> CellSummary {
        CellSummary {
            agent: agent.to_string(),
            density,
            episodes: 5,
            completed: if t.is_some() { 4 } else { 0 },
            collisions: 1,
            timeouts: 0,
            travel_time: t.map(box_stats),
            safety: box_stats(2.0),
            efficiency: box_stats(0.5),
            travel_time_change_pct: pct,
        }
    }

    fn assert_valid_svg(s: &str) {
        assert!(s.starts_with("<svg "), "missing svg root");
        assert!(s.trim_end().ends_with("</svg>"), "unterminated svg");
        for tag in ["<svg ", "<rect ", "<text "] {
            assert!(s.contains(tag), "missing {tag}");
        }
        // Self-contained: no external references of any kind.
        for banned in ["http://www.w3.org/1999/xlink", "href", "<script", "<image", "url("] {
            assert!(!s.contains(banned), "found {banned}");
        }
        assert_eq!(s.matches("<svg ").count(), 1);
    }

    #[test]
    fn curves_render_with_and_without_bands() {
        let series = vec![
            ("bc".to_string(), curve(50, 0.0, true)),
            ("td3+bc".to_string(), curve(50, 0.2, false)),
        ];
        let svg = training_curves_svg(&series, "training");
        assert_valid_svg(&svg);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 1, "one CI band expected");
        assert!(svg.contains("td3+bc"));
        assert!(svg.contains("normalized reward"));
    }

    #[test]
    fn boxes_render_grouped_by_density() {
        let cells = vec![
            cell("baseline", DensitySpec::Low, Some(8.0), None),
            cell("td3+bc", DensitySpec::Low, Some(6.0), Some(-25.0)),
            cell("baseline", DensitySpec::High, Some(14.0), None),
            cell("td3+bc", DensitySpec::High, None, None),
        ];
        let svg = travel_time_boxes_svg(&cells, "travel time");
        assert_valid_svg(&svg);
        assert!(svg.contains(">low<") && svg.contains(">high<"));
        assert!(svg.contains(">n/a<"), "empty cell must be labeled");
        // Three drawn boxes, each contributing one median line + one rect.
        assert_eq!(svg.matches("stroke-width=\"2\"").count(), 3);
    }

    #[test]
    fn change_bars_split_sign_by_color() {
        let cells = vec![
            cell("td3+bc", DensitySpec::Low, Some(6.0), Some(-25.0)),
            cell("td3+bc", DensitySpec::High, Some(9.0), Some(12.0)),
        ];
        let svg = travel_time_change_svg(&cells, "relative change");
        assert_valid_svg(&svg);
        assert!(svg.contains("#2ca02c") && svg.contains("#d62728"));
        assert!(svg.contains("-25%") && svg.contains("12%"));
    }

    #[test]
    fn degenerate_inputs_still_render() {
        let svg = training_curves_svg(&[], "empty");
        assert_valid_svg(&svg);
        let one = vec![("x".to_string(), AggregateCurve {
            steps: vec![400],
            mean: vec![0.5],
            ci: None,
        })];
        assert_valid_svg(&training_curves_svg(&one, "single point"));
        assert_valid_svg(&travel_time_boxes_svg(&[], "no cells"));
        assert_valid_svg(&travel_time_change_svg(&[], "no bars"));
    }

    #[test]
    fn tick_positions_are_round_and_cover_range() {
        let s = Scale::new(-7.3, 13.7, 0.0, 100.0);
        let ticks = s.ticks(6);
        assert!(ticks.len() >= 3 && ticks.len() <= 12, "{ticks:?}");
        let step = ticks[1] - ticks[0];
        for w in ticks.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-9, "uneven spacing: {ticks:?}");
        }
        // Step is 1, 2, or 5 times a power of ten.
        let mantissa = step / 10f64.powf(step.log10().floor());
        assert!(
            [1.0, 2.0, 5.0].iter().any(|m| (mantissa - m).abs() < 1e-9),
            "step {step} not round"
        );
        for t in &ticks {
            assert!(*t >= -7.3 && *t <= 13.7 + 1e-9, "tick {t} outside range");
            let k = t / step;
            assert!((k - k.round()).abs() < 1e-9, "tick {t} off the step grid");
        }
        assert!(ticks.contains(&0.0));
    }

    #[test]
    fn labels_are_escaped() {
        let series = vec![("a<b&c".to_string(), curve(3, 0.0, false))];
        let svg = training_curves_svg(&series, "t<t");
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(!svg.contains("a<b"));
    }
}
