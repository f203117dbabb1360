//! Minimal grouped bar chart with error whiskers.

use std::fmt::Write as _;

pub struct Bar {
    pub group: String,
    pub series: String,
    pub value: f64,
    pub error: f64,
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bars grouped along x by `group`, colored by `series`.
pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let mut groups: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for b in bars {
        if !groups.contains(&b.group.as_str()) {
            groups.push(&b.group);
        }
        if !series.contains(&b.series.as_str()) {
            series.push(&b.series);
        }
    }
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y_max = bars.iter().map(|b| b.value + b.error).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + plot_w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, top + plot_h, left + plot_w);
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(s, r##"<line x1="{}" y1="{yy:.1}" x2="{left}" y2="{yy:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{v:.0}</text>"##, left - 4.0, left - 7.0, yy + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );

    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + group_w * gi as f64 + group_w * 0.1;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, gx + group_w * 0.4, top + plot_h + 18.0, escape(g));
        for b in bars.iter().filter(|b| b.group == *g) {
            let si = series.iter().position(|x| *x == b.series).unwrap_or(0);
            let x = gx + bar_w * si as f64;
            let color = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                y(b.value),
                bar_w * 0.9,
                (top + plot_h - y(b.value)).max(0.0)
            );
            let cx = x + bar_w * 0.45;
            let (lo, hi) = (y((b.value - b.error).max(0.0)), y(b.value + b.error));
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1},{lo:.1}V{hi:.1}M{:.1},{lo:.1}H{:.1}M{:.1},{hi:.1}H{:.1}" stroke="black" fill="none"/>"#,
                cx - 4.0,
                cx + 4.0,
                cx - 4.0,
                cx + 4.0
            );
        }
    }
    for (si, name) in series.iter().enumerate() {
        let ly = top + 10.0 + 20.0 * si as f64;
        let lx = left + plot_w + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{}" y="{ly:.1}">{}</text>"#,
            ly - 10.0,
            PALETTE[si % PALETTE.len()],
            lx + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_rect_per_bar() {
        let bars: Vec<Bar> = ["32", "128"]
            .iter()
            .flat_map(|g| {
                ["egoallo", "absolute"].iter().map(move |s| Bar { group: g.to_string(), series: s.to_string(), value: 100.0, error: 5.0 })
            })
            .collect();
        let svg = bar_chart("MPJPE", "mm", &bars);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // Background, four bars, two legend swatches.
        assert_eq!(svg.matches("<rect").count(), 7);
        assert_eq!(svg.matches("<path").count(), 4);
    }
}
