//! SVG line charts of the CSV tables written by `metrics`.

use std::path::{Path, PathBuf};

use clap::Args;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{runtime, usage, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// CSV with an `x` column followed by one column per series.
    pub input: Option<PathBuf>,
    /// SVG path; `<input stem>.svg` in the output directory by default.
    pub output: Option<PathBuf>,
    pub title: Option<String>,
    pub y_label: Option<String>,
}

#[derive(Args, Debug, Default, Serialize)]
pub struct PlotArgs {
    /// Input CSV (regret.csv or exploitation.csv)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output SVG path
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Chart title
    #[arg(long)]
    pub title: Option<String>,
    /// Label of the y axis
    #[arg(long)]
    pub y_label: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PlotReport {
    pub svg: PathBuf,
    pub series: Vec<String>,
    pub points: usize,
}

/// Series of a CSV table. Columns ending in `_se` are dropped and `_mean`
/// suffixes are trimmed.
pub fn read_series(path: &Path) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers().map_err(usage)?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("x") || header.len() < 2 {
        return Err(usage("plot input needs an `x` column and at least one series"));
    }
    let cols: Vec<usize> = (1..header.len()).filter(|&i| !header[i].ends_with("_se")).collect();
    let mut series: Vec<(String, Vec<(f64, f64)>)> =
        cols.iter().map(|&i| (header[i].trim_end_matches("_mean").to_string(), Vec::new())).collect();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(usage)?;
        let x: f64 = rec[0].parse().map_err(|_| usage(format!("row {}: bad x", line + 2)))?;
        for (s, &i) in series.iter_mut().zip(&cols) {
            if let Ok(y) = rec.get(i).unwrap_or("").parse::<f64>() {
                if y.is_finite() {
                    s.1.push((x, y));
                }
            }
        }
    }
    Ok(series)
}

pub fn plot(cfg: &PlotConfig, out: &Path) -> Result<PlotReport> {
    let input = cfg.input.as_deref().ok_or_else(|| usage("missing `input`"))?;
    let series = read_series(input)?;
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    if pts.is_empty() {
        return Err(usage("nothing to plot"));
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let svg = match &cfg.output {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(out).map_err(runtime)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
            out.join(format!("{stem}.svg"))
        }
    };
    {
        let root = SVGBackend::new(&svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(runtime)?;
        let title = cfg.title.clone().unwrap_or_else(|| input.display().to_string());
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1.max(x0 + 1.0), (y0 - pad)..(y1 + pad))
            .map_err(runtime)?;
        chart
            .configure_mesh()
            .x_desc("round")
            .y_desc(cfg.y_label.clone().unwrap_or_default())
            .draw()
            .map_err(runtime)?;
        for (i, (name, data)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(data.iter().copied(), color.stroke_width(2)))
                .map_err(runtime)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(runtime)?;
        root.present().map_err(runtime)?;
    }
    Ok(PlotReport { svg, series: series.into_iter().map(|s| s.0).collect(), points: pts.len() })
}
