//! Tab-separated result tables and static SVG line plots.
//!
//! Rendering uses fixed geometry, a fixed palette and fixed number
//! formatting, so the same table always produces the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::invalid(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, label: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: label.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines
            .next()
            .ok_or_else(|| err(1, "missing header row".into()))?;
        let mut table = Table::new(&head.split('\t').map(str::trim).collect::<Vec<_>>());
        for (i, l) in lines {
            let cells: Vec<String> = l.split('\t').map(|c| c.trim().to_string()).collect();
            if cells.len() != table.header.len() {
                return Err(err(
                    i + 1,
                    format!(
                        "expected {} cells, found {}",
                        table.header.len(),
                        cells.len()
                    ),
                ));
            }
            table.rows.push(cells);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of a numeric column; `nan` cells parse as NaN.
    pub fn numeric(&self, name: &str, label: &Path) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::invalid(format!("table has no `{name}` column")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>().map_err(|_| Error::Parse {
                    path: label.to_path_buf(),
                    line: i + 2,
                    message: format!("non-numeric `{name}` value `{}`", r[c]),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Horizon,
    TeacherLength,
    Loss,
}

pub fn detect_kind(t: &Table) -> Result<TableKind> {
    let has = |n: &str| t.column(n).is_some();
    if has("horizon") && has("min_ade") && has("min_fde") {
        Ok(TableKind::Horizon)
    } else if has("teacher_input_len") && has("scheme") && has("min_ade") && has("min_fde") {
        Ok(TableKind::TeacherLength)
    } else if has("epoch") && has("total") {
        Ok(TableKind::Loss)
    } else {
        Err(Error::invalid(format!(
            "no plot defined for a table with columns {}",
            t.header.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    };
    if s.contains('e') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    f * mag
}

fn ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    };
    let step = nice_step(hi - lo);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let n = ((end - start) / step).round() as usize;
    let t = (0..=n).map(|i| start + i as f64 * step).collect();
    (start, end, t)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn render_panel(out: &mut String, p: &Panel, oy: f64) {
    let pts: Vec<(f64, f64)> = p
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.min(p.0), a.1.max(p.0))
    });
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.min(p.1), a.1.max(p.1))
    });
    let (x0, x1, xt) = ticks(x0, x1);
    let (y0, y1, yt) = ticks(y0, y1);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_L + pw / 2.0,
        oy + 24.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##,
        oy + MARGIN_T
    );
    for &t in &xt {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"##,
            oy + MARGIN_T,
            oy + MARGIN_T + ph,
            oy + MARGIN_T + ph + 16.0,
            fmt_num(t)
        );
    }
    for &t in &yt {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_L:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        MARGIN_L + pw / 2.0,
        oy + PANEL_H - 12.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.2})">{}</text>"#,
        oy + MARGIN_T + ph / 2.0,
        oy + MARGIN_T + ph / 2.0,
        escape(&p.y_label)
    );
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (cx, cy) = c.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = oy + MARGIN_T + 10.0 + i as f64 * 18.0;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
}

/// Stacks panels vertically into one SVG document.
pub fn render_svg(panels: &[Panel]) -> Result<String> {
    if panels.is_empty()
        || panels
            .iter()
            .all(|p| p.series.iter().all(|s| s.points.is_empty()))
    {
        return Err(Error::invalid("nothing to plot"));
    }
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{height:.0}" viewBox="0 0 {PANEL_W:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn zip(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().copied().zip(ys.iter().copied()).collect()
}

/// Panels for a table of one of the known kinds.
pub fn table_panels(t: &Table, label: &Path) -> Result<Vec<Panel>> {
    if t.rows.is_empty() {
        return Err(Error::invalid(format!(
            "{} has no rows to plot",
            label.display()
        )));
    }
    match detect_kind(t)? {
        TableKind::Horizon => {
            let h = t.numeric("horizon", label)?;
            Ok(vec![Panel {
                title: "Displacement error vs prediction horizon".into(),
                x_label: "horizon (steps)".into(),
                y_label: "error (px)".into(),
                series: vec![
                    Series {
                        name: "minADE".into(),
                        points: zip(&h, &t.numeric("min_ade", label)?),
                    },
                    Series {
                        name: "minFDE".into(),
                        points: zip(&h, &t.numeric("min_fde", label)?),
                    },
                ],
            }])
        }
        TableKind::TeacherLength => {
            let len = t.numeric("teacher_input_len", label)?;
            let ade = t.numeric("min_ade", label)?;
            let fde = t.numeric("min_fde", label)?;
            let sc = t.column("scheme").expect("detected");
            let mut schemes: Vec<String> = Vec::new();
            for r in &t.rows {
                if !schemes.contains(&r[sc]) {
                    schemes.push(r[sc].clone());
                }
            }
            let series_for = |vals: &[f64]| -> Vec<Series> {
                schemes
                    .iter()
                    .map(|s| Series {
                        name: s.clone(),
                        points: t
                            .rows
                            .iter()
                            .enumerate()
                            .filter(|(_, r)| &r[sc] == s)
                            .map(|(i, _)| (len[i], vals[i]))
                            .collect(),
                    })
                    .collect()
            };
            Ok(vec![
                Panel {
                    title: "minADE vs teacher input length".into(),
                    x_label: "teacher input length (steps)".into(),
                    y_label: "minADE (px)".into(),
                    series: series_for(&ade),
                },
                Panel {
                    title: "minFDE vs teacher input length".into(),
                    x_label: "teacher input length (steps)".into(),
                    y_label: "minFDE (px)".into(),
                    series: series_for(&fde),
                },
            ])
        }
        TableKind::Loss => {
            let ep = t.numeric("epoch", label)?;
            let pick = |names: &[&str]| -> Result<Vec<Series>> {
                names
                    .iter()
                    .filter(|n| t.column(n).is_some())
                    .map(|n| {
                        Ok(Series {
                            name: n.to_string(),
                            points: zip(&ep, &t.numeric(n, label)?),
                        })
                    })
                    .collect()
            };
            let mut panels = vec![
                Panel {
                    title: "Goal losses".into(),
                    x_label: "epoch".into(),
                    y_label: "BCE".into(),
                    series: pick(&["goal_student", "goal_teacher", "goal_distill"])?,
                },
                Panel {
                    title: "Trajectory losses".into(),
                    x_label: "epoch".into(),
                    y_label: "MSE (px^2)".into(),
                    series: pick(&["traj_student", "traj_teacher", "traj_distill"])?,
                },
                Panel {
                    title: "Total loss".into(),
                    x_label: "epoch".into(),
                    y_label: "loss".into(),
                    series: pick(&["total"])?,
                },
            ];
            panels.retain(|p| !p.series.is_empty());
            Ok(panels)
        }
    }
}

/// Renders `input` to an SVG file in `out_dir` named after the input stem.
pub fn plot_file(input: &Path, out_dir: &Path) -> Result<std::path::PathBuf> {
    let table = Table::read(input)?;
    let svg = render_svg(&table_panels(&table, input)?)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let out = out_dir.join(format!("{stem}.svg"));
    fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn horizon_table(rows: usize) -> Table {
        let mut t = Table::new(&["horizon", "min_ade", "min_fde"]);
        for i in 0..rows {
            let h = (i + 1) * 5;
            t.push(vec![
                h.to_string(),
                format!("{}", h as f64 * 0.5),
                format!("{}", h as f64),
            ])
            .unwrap();
        }
        t
    }

    #[test]
    fn tsv_round_trip() {
        let t = horizon_table(3);
        assert_eq!(Table::parse(&t.to_tsv(), Path::new("x")).unwrap(), t);
    }

    #[test]
    fn malformed_row_names_line() {
        match Table::parse("a\tb\n1\t2\n3\n", Path::new("t.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horizon_plot_has_two_curves() {
        let svg = render_svg(&table_panels(&horizon_table(5), Path::new("h")).unwrap()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 10);
    }

    #[test]
    fn empty_table_is_refused() {
        assert!(table_panels(&horizon_table(0), &PathBuf::from("h")).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = horizon_table(4);
        let a = render_svg(&table_panels(&t, Path::new("h")).unwrap()).unwrap();
        let b = render_svg(&table_panels(&t, Path::new("h")).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tick_ranges_cover_data() {
        let (lo, hi, t) = ticks(0.3, 9.7);
        assert!(lo <= 0.3 && hi >= 9.7);
        assert_eq!(t.first().copied(), Some(lo));
        let (lo, hi, _) = ticks(2.0, 2.0);
        assert!(lo < 2.0 && hi > 2.0);
    }
}
