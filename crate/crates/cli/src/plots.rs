//! Minimal deterministic SVG emission. Every figure has a sibling tabular
//! file, so results stay inspectable without a renderer; the SVGs are
//! plain string builds and therefore byte-stable across runs.

/// Grayscale fill for a value in [0, 1]; dark means high.
fn shade(value: f64) -> String {
    let v = value.clamp(0.0, 1.0);
    let level = (235.0 - v * 190.0).round() as u8;
    format!("rgb({level},{level},{level})")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Cell-grid heatmap with row/column labels; `values[row][col]` in [0, 1],
/// None renders as an empty cell.
pub fn heatmap_svg(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> String {
    const CELL: f64 = 42.0;
    const LEFT: f64 = 150.0;
    const TOP: f64 = 60.0;
    let width = LEFT + col_labels.len() as f64 * CELL + 20.0;
    let height = TOP + row_labels.len() as f64 * CELL + 20.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"10\" y=\"20\" font-size=\"14\">{}</text>\n",
        esc(title)
    ));
    for (c, label) in col_labels.iter().enumerate() {
        let x = LEFT + c as f64 * CELL + CELL / 2.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            TOP - 8.0,
            esc(label)
        ));
    }
    for (r, rlabel) in row_labels.iter().enumerate() {
        let y = TOP + r as f64 * CELL + CELL / 2.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            LEFT - 8.0,
            esc(rlabel)
        ));
        for c in 0..col_labels.len() {
            let x = LEFT + c as f64 * CELL;
            let ytop = TOP + r as f64 * CELL;
            match values.get(r).and_then(|row| row.get(c)).copied().flatten() {
                Some(v) => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{ytop:.1}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"{}\" stroke=\"white\"/>\n",
                        shade(v)
                    ));
                    let text_fill = if v > 0.55 { "white" } else { "black" };
                    svg.push_str(&format!(
                        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
                         dominant-baseline=\"middle\" fill=\"{text_fill}\">{v:.2}</text>\n",
                        x + CELL / 2.0,
                        ytop + CELL / 2.0
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{ytop:.1}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"none\" stroke=\"#cccccc\"/>\n"
                    ));
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Polyline chart of one or more series over shared x labels; y in [0, 1].
pub fn line_chart_svg(title: &str, x_labels: &[String], series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 520.0;
    const H: f64 = 300.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 40.0;
    let plot_w = W - LEFT - 20.0;
    let plot_h = H - TOP - BOTTOM;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"10\" y=\"20\" font-size=\"14\">{}</text>\n",
        esc(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = TOP + plot_h * (1.0 - v);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{v:.2}</text>\n",
            LEFT - 6.0
        ));
    }
    let n = x_labels.len().max(1);
    for (i, label) in x_labels.iter().enumerate() {
        let x = if n == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        };
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            H - BOTTOM + 16.0,
            esc(label)
        ));
    }
    let dashes = ["none", "6,3", "2,2", "8,2,2,2", "4,4"];
    for (s_idx, (label, points)) in series.iter().enumerate() {
        let mut path = String::new();
        for (i, v) in points.iter().enumerate() {
            let x = if n == 1 {
                LEFT + plot_w / 2.0
            } else {
                LEFT + plot_w * i as f64 / (n - 1) as f64
            };
            let y = TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));
            path.push_str(if i == 0 { "M" } else { "L" });
            path.push_str(&format!("{x:.1},{y:.1} "));
        }
        let dash = dashes[s_idx % dashes.len()];
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"{dash}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{} ({dash})</text>\n",
            LEFT + 6.0,
            TOP + 14.0 + s_idx as f64 * 14.0,
            esc(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_emission_is_deterministic() {
        let rows = vec!["a".to_string(), "b".to_string()];
        let cols = vec!["x".to_string()];
        let values = vec![vec![Some(0.5)], vec![None]];
        let one = heatmap_svg("t", &rows, &cols, &values);
        let two = heatmap_svg("t", &rows, &cols, &values);
        assert_eq!(one, two);
        assert!(one.starts_with("<svg"));
        assert!(one.contains("0.50"));
    }

    #[test]
    fn line_chart_handles_single_point() {
        let svg = line_chart_svg(
            "s",
            &["only".to_string()],
            &[("series".to_string(), vec![0.7])],
        );
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn escapes_markup_in_labels() {
        let svg = heatmap_svg("<b>&", &["r".into()], &["c".into()], &[vec![Some(1.0)]]);
        assert!(svg.contains("&lt;b&gt;&amp;"));
    }
}
