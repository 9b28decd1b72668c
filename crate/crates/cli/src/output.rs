//! Run outputs: the convergence CSV, mesh-level SVG plots, and the
//! log-log convergence plot. All writers are deterministic: the same
//! records and meshes produce identical bytes (the wall-time column of the
//! CSV is the one value that varies between runs of the same config).

use std::fmt::Write as _;

use goafem::driver::AdaptiveRecord;
use goafem::mesh::Mesh;

pub const CSV_HEADER: &str = "iter,ntri,nedges,ndof,eta2,eta_star2,rho2,rho_star2,osc2,osc_star2,energy_uu,energy_dual,goal,nmarked,seconds";

/// Formats a float with 17 significant digits; round-trips bit-exactly.
fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_string(records: &[AdaptiveRecord]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.n_triangles,
            r.n_edges,
            r.n_dofs,
            sig17(r.eta_sq),
            sig17(r.eta_star_sq),
            sig17(r.rho_sq),
            sig17(r.rho_star_sq),
            sig17(r.osc_sq),
            sig17(r.osc_star_sq),
            sig17(r.energy_uu),
            sig17(r.energy_dual),
            sig17(r.goal),
            r.n_marked,
            sig17(r.seconds),
        )
        .unwrap();
    }
    s
}

pub fn write_csv(records: &[AdaptiveRecord], path: &std::path::Path) -> std::io::Result<()> {
    std::fs::write(path, csv_string(records))
}

/// Parses a CSV produced by [`write_csv`]; used by the round-trip tests.
#[allow(dead_code)]
pub fn parse_csv(text: &str) -> Result<Vec<AdaptiveRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header != CSV_HEADER {
        return Err(format!("unexpected header `{header}`"));
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(format!("expected 15 fields, got {}", f.len()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
        let num = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        out.push(AdaptiveRecord {
            iter: int(f[0])?,
            n_triangles: int(f[1])?,
            n_edges: int(f[2])?,
            n_dofs: int(f[3])?,
            eta_sq: num(f[4])?,
            eta_star_sq: num(f[5])?,
            rho_sq: num(f[6])?,
            rho_star_sq: num(f[7])?,
            osc_sq: num(f[8])?,
            osc_star_sq: num(f[9])?,
            energy_uu: num(f[10])?,
            energy_dual: num(f[11])?,
            goal: num(f[12])?,
            n_marked: int(f[13])?,
            seconds: num(f[14])?,
        });
    }
    Ok(out)
}

/// The quantity shown by the level plot: `log2(1 / |T|)`, which increases
/// by exactly one with every bisection.
pub fn level_value(mesh: &Mesh, t: usize) -> f64 {
    (1.0 / mesh.area(t)).log2()
}

/// Five-stop blue-to-yellow color ramp over `[0, 1]`.
fn ramp(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    rgb
}

/// Renders the mesh with one polygon per triangle, filled by the level
/// value `log2(1/|T|)`, plus a color-bar legend.
pub fn level_svg(mesh: &Mesh) -> String {
    let values: Vec<f64> = (0..mesh.n_triangles()).map(|t| level_value(mesh, t)).collect();
    let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (vmax - vmin).max(1e-12);

    let (xmin, xmax, ymin, ymax) = mesh.vertices().iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), v| (x0.min(v[0]), x1.max(v[0]), y0.min(v[1]), y1.max(v[1])),
    );
    let plot = 640.0;
    let margin = 20.0;
    let legend_w = 90.0;
    let scale = plot / (xmax - xmin).max(ymax - ymin);
    let width = margin * 2.0 + (xmax - xmin) * scale + legend_w;
    let height = margin * 2.0 + (ymax - ymin) * scale;
    let px = |x: f64| margin + (x - xmin) * scale;
    // SVG y grows downward
    let py = |y: f64| margin + (ymax - y) * scale;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    for t in 0..mesh.n_triangles() {
        let c = mesh.corners(t);
        let [r, g, b] = ramp((values[t] - vmin) / span);
        writeln!(
            s,
            "<polygon points=\"{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}\" fill=\"rgb({r},{g},{b})\" stroke=\"none\"/>",
            px(c[0][0]),
            py(c[0][1]),
            px(c[1][0]),
            py(c[1][1]),
            px(c[2][0]),
            py(c[2][1]),
        )
        .unwrap();
    }
    // legend: vertical color bar with min/max labels
    let bar_x = width - legend_w + 10.0;
    let bar_h = height - 2.0 * margin;
    let steps = 32;
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let [r, g, b] = ramp(t);
        let y = margin + (1.0 - t) * (bar_h - bar_h / steps as f64);
        writeln!(
            s,
            "<rect x=\"{bar_x:.1}\" y=\"{y:.3}\" width=\"18\" height=\"{:.3}\" fill=\"rgb({r},{g},{b})\"/>",
            bar_h / steps as f64 + 0.5
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\">{vmax:.1}</text>",
        bar_x + 24.0,
        margin + 10.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\">{vmin:.1}</text>",
        bar_x + 24.0,
        margin + bar_h
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\">log2(1/|T|)</text>",
        bar_x,
        margin - 6.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Log-log convergence plot: estimator (and, for goal-oriented runs, the
/// estimator product) against the element count, with reference slopes
/// `-p/2` and `-p`.
pub fn convergence_svg(records: &[AdaptiveRecord], degree: usize, goal_oriented: bool) -> String {
    let width = 640.0;
    let height = 480.0;
    let margin = 50.0;
    let pts_eta: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.eta_sq > 0.0)
        .map(|r| ((r.n_triangles as f64).log10(), r.eta_sq.sqrt().log10()))
        .collect();
    let pts_prod: Vec<(f64, f64)> = if goal_oriented {
        records
            .iter()
            .filter(|r| r.eta_sq * r.eta_star_sq > 0.0)
            .map(|r| {
                (
                    (r.n_triangles as f64).log10(),
                    (r.eta_sq * r.eta_star_sq).sqrt().log10(),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let all: Vec<&(f64, f64)> = pts_eta.iter().chain(&pts_prod).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if all.is_empty() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    let (dx, dy) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let px = |x: f64| margin + (x - x0) / dx * (width - 2.0 * margin);
    let py = |y: f64| height - margin - (y - y0) / dy * (height - 2.0 * margin);
    let polyline = |pts: &[(f64, f64)], color: &str, dash: &str| {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
            path.join(" ")
        )
    };

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    writeln!(
        s,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{:.0}\" height=\"{:.0}\" fill=\"none\" stroke=\"black\"/>",
        width - 2.0 * margin,
        height - 2.0 * margin
    )
    .unwrap();
    // decade ticks
    for k in (x0.ceil() as i64)..=(x1.floor() as i64) {
        writeln!(
            s,
            "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"#cccccc\"/>",
            px(k as f64),
            py(y0),
            py(y1)
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"middle\">1e{k}</text>",
            px(k as f64),
            height - margin + 16.0
        )
        .unwrap();
    }
    for k in (y0.ceil() as i64)..=(y1.floor() as i64) {
        writeln!(
            s,
            "<line x1=\"{1:.2}\" y1=\"{0:.2}\" x2=\"{2:.2}\" y2=\"{0:.2}\" stroke=\"#cccccc\"/>",
            py(k as f64),
            px(x0),
            px(x1)
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"end\">1e{k}</text>",
            margin - 4.0,
            py(k as f64) + 4.0
        )
        .unwrap();
    }
    if !pts_eta.is_empty() {
        s.push_str(&polyline(&pts_eta, "#1f5fbf", ""));
    }
    if !pts_prod.is_empty() {
        s.push_str(&polyline(
            &pts_prod,
            "#bf3f1f",
            " stroke-dasharray=\"6 3\"",
        ));
    }
    // reference slope wedges -p/2 and -p anchored at the last point
    if let Some(&(lx, ly)) = pts_eta.last() {
        for (slope, color) in [
            (-(degree as f64) / 2.0, "#444444"),
            (-(degree as f64), "#888888"),
        ] {
            let x_a = lx - 0.8;
            let y_a = ly - slope * 0.8;
            writeln!(
                s,
                "<polyline points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>",
                px(x_a),
                py(y_a),
                px(x_a),
                py(ly),
                px(lx),
                py(ly),
            )
            .unwrap();
            writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" font-family=\"sans-serif\">{slope}</text>",
                px(x_a) - 22.0,
                py(0.5 * (y_a + ly))
            )
            .unwrap();
        }
    }
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\">estimator vs elements (log-log)</text>",
        margin,
        margin - 8.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use goafem::mesh::MarkSet;

    fn record(iter: usize) -> AdaptiveRecord {
        AdaptiveRecord {
            iter,
            n_triangles: 10 * (iter + 1),
            n_edges: 17 * (iter + 1),
            n_dofs: 3 * (iter + 1),
            eta_sq: 1.0 / (iter + 1) as f64,
            eta_star_sq: 0.5 / (iter + 1) as f64,
            rho_sq: 0.25,
            rho_star_sq: 0.25,
            osc_sq: 0.125,
            osc_star_sq: 0.125,
            energy_uu: 0.123456789012345678,
            energy_dual: 0.2,
            goal: -1.0 / 3.0,
            n_marked: iter,
            seconds: 0.001 * (iter + 1) as f64,
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let records: Vec<AdaptiveRecord> = (0..5).map(record).collect();
        let text = csv_string(&records);
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(CSV_HEADER));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.iter, b.iter);
            assert_eq!(a.eta_sq.to_bits(), b.eta_sq.to_bits());
            assert_eq!(a.goal.to_bits(), b.goal.to_bits());
            assert_eq!(a.energy_uu.to_bits(), b.energy_uu.to_bits());
            assert_eq!(a.seconds.to_bits(), b.seconds.to_bits());
        }
        // rows sorted by iteration
        for w in back.windows(2) {
            assert!(w[1].iter > w[0].iter);
        }
    }

    #[test]
    fn single_record_gives_two_lines() {
        let text = csv_string(&[record(0)]);
        assert_eq!(text.lines().count(), 2);
    }

    fn unit_square() -> Mesh {
        Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 2, 1], [2, 0, 3]],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn level_plot_of_two_triangle_square() {
        let mesh = unit_square();
        let svg = level_svg(&mesh);
        let fills: Vec<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<polygon"))
            .collect();
        assert_eq!(fills.len(), 2);
        // equal areas -> identical fill colors
        let fill_of = |l: &str| l.split("fill=\"").nth(1).unwrap().to_string();
        assert_eq!(fill_of(fills[0]), fill_of(fills[1]));
    }

    #[test]
    fn bisection_increments_level_value_by_one() {
        let mesh = unit_square();
        let diag = mesh
            .edges()
            .iter()
            .position(|e| e.vertices == [0, 2])
            .unwrap();
        let parent_value = level_value(&mesh, 0);
        let (fine, lineage) = mesh.refine(&MarkSet::new(vec![diag])).unwrap();
        for t in 0..fine.n_triangles() {
            let expect = parent_value + 1.0;
            let _ = lineage;
            assert!((level_value(&fine, t) - expect).abs() < 1e-12);
        }
    }

    /// Minimal structural check: tags balance and polygons close.
    fn assert_well_formed(svg: &str) {
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let mut depth = 0i64;
        for token in svg.split('<').skip(1) {
            if token.starts_with('/') {
                depth -= 1;
            } else if !token.trim_end().ends_with("/>") {
                depth += 1;
            }
            assert!(depth >= 0, "unbalanced markup");
        }
        assert_eq!(depth, 0, "unbalanced markup");
        for line in svg.lines().filter(|l| l.starts_with("<polygon")) {
            let points = line.split("points=\"").nth(1).unwrap();
            let points = points.split('"').next().unwrap();
            assert!(points.split_whitespace().count() >= 3, "open polygon");
        }
    }

    #[test]
    fn svg_outputs_are_well_formed_and_deterministic() {
        let mesh = unit_square().refine_uniform().unwrap().0;
        let a = level_svg(&mesh);
        let b = level_svg(&mesh);
        assert_eq!(a, b);
        assert_well_formed(&a);

        let records: Vec<AdaptiveRecord> = (0..6).map(record).collect();
        let c = convergence_svg(&records, 1, true);
        assert_well_formed(&c);
        assert_eq!(c, convergence_svg(&records, 1, true));
    }
}
