//! Minimal SVG box-and-whisker rendering of per-fold metric distributions.

use tasked_core::eval::FoldResult;

struct BoxStats {
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

/// One SVG with a box per metric (acc, F_w, F_m) over the fold values.
pub fn metric_boxplot_svg(folds: &[FoldResult]) -> String {
    let series: [(&str, Vec<f64>); 3] = [
        ("acc", folds.iter().map(|f| f.metrics.acc).collect()),
        ("F_w", folds.iter().map(|f| f.metrics.f_w).collect()),
        ("F_m", folds.iter().map(|f| f.metrics.f_m).collect()),
    ];
    let (width, height) = (420.0, 300.0);
    let (left, bottom, top) = (50.0, 260.0, 20.0);
    let y = |v: f64| bottom - v.clamp(0.0, 1.0) * (bottom - top);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let ty = y(v);
        out.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{ty}\" x2=\"{}\" y2=\"{ty}\" stroke=\"#ddd\"/>\n",
            width - 20.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.1}</text>\n",
            left - 6.0,
            ty + 3.0,
            v
        ));
    }
    for (i, (name, values)) in series.iter().enumerate() {
        let cx = left + 60.0 + i as f64 * 110.0;
        let half = 28.0;
        let s = stats(values);
        out.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y(s.min),
            y(s.max)
        ));
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"black\"/>\n",
            cx - half,
            y(s.q3),
            2.0 * half,
            (y(s.q1) - y(s.q3)).max(0.5)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            cx - half,
            y(s.median),
            cx + half,
            y(s.median)
        ));
        for (cap, v) in [(0.6, s.min), (0.6, s.max)] {
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
                cx - half * cap,
                y(v),
                cx + half * cap,
                y(v)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{name}</text>\n",
            bottom + 18.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tasked_core::data::FoldSpec;
    use tasked_core::eval::{ConfusionMatrix, Metrics};

    #[test]
    fn renders_svg_with_three_boxes() {
        let folds: Vec<FoldResult> = (0..6)
            .map(|i| FoldResult {
                fold: FoldSpec {
                    test_subject: i / 2,
                    variant: i % 2,
                },
                test_subjects: vec![i / 2],
                val_subjects: vec![0],
                confusion: ConfusionMatrix::new(2),
                metrics: Metrics {
                    acc: 0.5 + 0.05 * i as f64,
                    f_w: 0.4 + 0.05 * i as f64,
                    f_m: 0.3 + 0.05 * i as f64,
                },
                best_val_macro_f1: 0.5,
            })
            .collect();
        let svg = metric_boxplot_svg(&folds);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 4); // background + 3 boxes
        assert!(svg.contains("F_m"));
    }
}
