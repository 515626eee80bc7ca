//! SVG line plots of trace, aggregate or curve CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::coord::combinators::IntoLogRange;
use plotters::prelude::*;

use crate::csvio::{parse, Table};
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy)]
pub struct PlotStyle {
    pub log_y: bool,
    /// Vertical marker, e.g. the phase-one bound.
    pub marker: Option<f64>,
    pub width: u32,
    pub panel_height: u32,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle { log_y: true, marker: None, width: 900, panel_height: 420 }
    }
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

/// Picks the columns to draw. Reconstruction and off-subspace errors get a
/// panel each when both exist; otherwise the first plottable column is drawn.
fn panels(table: &Table, x: usize, group: Option<usize>) -> Vec<usize> {
    let candidates: Vec<usize> = (0..table.header.len())
        .filter(|&j| j != x && Some(j) != group)
        .filter(|&j| {
            let h = &table.header[j];
            h != "status" && h != "runs" && !h.ends_with("_std")
        })
        .collect();
    let find = |base: &str| {
        candidates.iter().copied().find(|&j| {
            let h = &table.header[j];
            h == base || *h == format!("{base}_median")
        })
    };
    match (find("recon_norm"), find("off_sub")) {
        (Some(a), Some(b)) => vec![a, b],
        (Some(a), None) => vec![a],
        _ => candidates.into_iter().take(1).collect(),
    }
}

fn collect(table: &Table, x: usize, y: usize, group: Option<usize>, log_y: bool) -> Result<Series> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for row in &table.rows {
        let key = group.map(|g| row[g].clone()).unwrap_or_default();
        let (xv, yv) = (parse(&row[x])?, parse(&row[y])?);
        if !xv.is_finite() || !yv.is_finite() || (log_y && yv <= 0.0) {
            continue;
        }
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((xv, yv));
    }
    let gname = group.map(|g| table.header[g].clone());
    Ok(order
        .into_iter()
        .map(|k| {
            let mut pts = groups.remove(&k).unwrap_or_default();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let label = match &gname {
                Some(g) => format!("{g} = {k}"),
                None => table.header[y].clone(),
            };
            (label, pts)
        })
        .collect())
}

fn bounds(series: &Series) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return None;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    Some((x0, x1, y0, y1))
}

fn draw_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    series: &Series,
    xname: &str,
    yname: &str,
    style: &PlotStyle,
) -> Result<()> {
    let err = |e: Box<dyn std::error::Error + '_>| CliError::Plot(e.to_string());
    let (x0, x1, mut y0, mut y1) =
        bounds(series).ok_or_else(|| CliError::Plot(format!("no plottable data in '{yname}'")))?;
    let marker = style.marker.filter(|m| m.is_finite());
    let (x0, x1) = match marker {
        Some(m) => (x0.min(m), x1.max(m)),
        None => (x0, x1),
    };
    let mut chart = ChartBuilder::on(area);
    chart.margin(12).x_label_area_size(40).y_label_area_size(70).caption(yname, ("sans-serif", 20));
    macro_rules! finish {
        ($chart:expr, $ylo:expr, $yhi:expr) => {{
            let mut chart = $chart;
            chart.configure_mesh().x_desc(xname).y_desc(yname).draw().map_err(|e| err(Box::new(e)))?;
            for (i, (label, pts)) in series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                    .map_err(|e| err(Box::new(e)))?
                    .label(label.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            }
            if let Some(m) = marker {
                chart
                    .draw_series(LineSeries::new(vec![(m, $ylo), (m, $yhi)], BLACK.stroke_width(1)))
                    .map_err(|e| err(Box::new(e)))?
                    .label(format!("marker t = {m}"))
                    .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.stroke_width(1)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| err(Box::new(e)))?;
        }};
    }
    if style.log_y {
        if y1 <= y0 {
            y0 /= 2.0;
            y1 *= 2.0;
        }
        let c = chart.build_cartesian_2d(x0..x1, (y0..y1).log_scale()).map_err(|e| err(Box::new(e)))?;
        finish!(c, y0, y1);
    } else {
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let c = chart.build_cartesian_2d(x0..x1, y0..y1).map_err(|e| err(Box::new(e)))?;
        finish!(c, y0, y1);
    }
    Ok(())
}

/// Renders `table` to an SVG string: one line per `value` group (if that
/// column exists) against `t` (or the first column).
pub fn render_svg(table: &Table, style: &PlotStyle) -> Result<String> {
    if table.rows.is_empty() || table.header.len() < 2 {
        return Err(CliError::Plot("empty data".into()));
    }
    let x = table.column_index("t").unwrap_or(0);
    let group = table.column_index("value").filter(|&g| g != x);
    let ys = panels(table, x, group);
    if ys.is_empty() {
        return Err(CliError::Plot("no numeric column to plot".into()));
    }
    let series = ys.iter().map(|&y| collect(table, x, y, group, style.log_y)).collect::<Result<Vec<_>>>()?;
    let mut svg = String::new();
    {
        let height = style.panel_height * ys.len() as u32;
        let root = SVGBackend::with_string(&mut svg, (style.width, height)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| CliError::Plot(e.to_string()))?;
        let areas = root.split_evenly((ys.len(), 1));
        for ((area, s), &y) in areas.iter().zip(&series).zip(&ys) {
            draw_panel(area, s, &table.header[x], &table.header[y], style)?;
        }
        root.present().map_err(|e| CliError::Plot(e.to_string()))?;
    }
    Ok(svg)
}

pub fn emit_plot(csv: &Path, out: &Path, style: &PlotStyle) -> Result<()> {
    let table = Table::read(csv)?;
    let svg = render_svg(&table, style)?;
    std::fs::write(out, svg)?;
    Ok(())
}
