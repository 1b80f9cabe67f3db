//! Minimal SVG charts with plain-text numeric dumps.

use std::fmt::Write;

use crate::armodel::block_poles;
use crate::cascade::CascadeModel;
use crate::config::PipelineConfig;
use crate::enf::extract_enf;
use crate::error::{Error, Result};
use crate::grid::DataKind;
use crate::pretyping::classify_type;
use crate::signal_io::Recording;
use crate::spectral::{next_pow2, stft, Window};

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 50.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if lo.is_finite() && hi > lo {
                (lo, hi)
            } else if lo.is_finite() {
                (lo - 0.5, lo + 0.5)
            } else {
                (0.0, 1.0)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, ax: &Axes) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{ylabel}</text>\n",
        W / 2.0,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
    );
    for (v, x, y, anchor) in [
        (ax.x0, ax.px(ax.x0), H - MARGIN + 15.0, "start"),
        (ax.x1, ax.px(ax.x1), H - MARGIN + 15.0, "end"),
        (ax.y0, MARGIN - 4.0, ax.py(ax.y0), "end"),
        (ax.y1, MARGIN - 4.0, ax.py(ax.y1) + 10.0, "end"),
    ] {
        let _ = writeln!(s, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{v:.4}</text>");
    }
    s
}

pub fn enf(rec: &Recording, cfg: &PipelineConfig) -> Result<(String, String)> {
    let typing = classify_type(rec, cfg)?;
    let ty = rec.declared_type().unwrap_or(typing.data_type);
    let enf = extract_enf(rec, typing.nominal, ty, cfg)?;
    let t: Vec<f64> = (0..enf.len()).map(|i| i as f64 * enf.hop_seconds).collect();
    let ax = Axes::fit(t.iter().copied(), enf.values_hz.iter().copied());
    let mut svg = header(
        &format!("ENF ({} Hz {})", typing.nominal, ty),
        "time (s)",
        "frequency (Hz)",
        &ax,
    );
    let points: Vec<String> = t
        .iter()
        .zip(&enf.values_hz)
        .map(|(x, y)| format!("{:.2},{:.2}", ax.px(*x), ax.py(*y)))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>\n</svg>",
        COLOURS[0],
        points.join(" ")
    );
    let mut dump = String::from("# time_s enf_hz\n");
    for (x, y) in t.iter().zip(&enf.values_hz) {
        let _ = writeln!(dump, "{x} {y}");
    }
    Ok((svg, dump))
}

/// Log-power spectrogram up to 125 Hz, max-pooled to at most 200 x 125 cells.
pub fn spectrogram(rec: &Recording, cfg: &PipelineConfig) -> Result<(String, String)> {
    let rate = rec.sample_rate_hz();
    let frame = rec.samples_for(cfg.audio_frame_s);
    let hop = rec.samples_for(cfg.audio_frame_s - cfg.audio_overlap_s);
    let n_fft = next_pow2(frame);
    let spectra = stft(rec.samples(), rate, frame, hop, n_fft, Window::Hann)?;
    let max_hz = 125.0f64.min(rate / 2.0);
    let bins = ((max_hz / spectra[0].bin_hz) as usize).max(1);
    let rows = bins.min(125);
    let cols = spectra.len().min(200);
    let mut grid = vec![vec![f64::NEG_INFINITY; cols]; rows];
    for (i, s) in spectra.iter().enumerate() {
        let c = i * cols / spectra.len();
        for k in 0..bins {
            let r = k * rows / bins;
            grid[r][c] = grid[r][c].max(s.log_power(k));
        }
    }
    let (lo, hi) = grid
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let duration = rec.duration_seconds();
    let ax = Axes {
        x0: 0.0,
        x1: duration,
        y0: 0.0,
        y1: max_hz,
    };
    let mut svg = header("Spectrogram (log power)", "time (s)", "frequency (Hz)", &ax);
    let cw = (W - 2.0 * MARGIN) / cols as f64;
    let ch = (H - 2.0 * MARGIN) / rows as f64;
    for (r, row) in grid.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let level = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let g = (255.0 * (1.0 - level)).round() as u8;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({g},{g},255)\"/>",
                MARGIN + c as f64 * cw,
                H - MARGIN - (r + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    svg.push_str("</svg>\n");
    let mut dump = format!("# {rows} frequency rows (0..{max_hz} Hz) x {cols} time columns (0..{duration} s), log power\n");
    for row in &grid {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(dump, "{}", line.join(" "));
    }
    Ok((svg, dump))
}

/// Test poles over the training poles of every grid in the recording's kind.
pub fn poles(rec: &Recording, model: &CascadeModel) -> Result<(String, String)> {
    let cfg = &model.config;
    let typing = classify_type(rec, cfg)?;
    let ty = rec.declared_type().unwrap_or(typing.data_type);
    let kind = DataKind::new(typing.nominal, ty);
    let km = model.kind(kind).ok_or_else(|| Error::KindUnavailable(kind.to_string()))?;
    let test: Vec<_> = block_poles(rec, cfg.ar_order(ty), cfg.pole_block_s)?
        .into_iter()
        .flat_map(|s| s.poles)
        .collect();
    let ax = Axes {
        x0: -1.1,
        x1: 1.1,
        y0: -1.1,
        y1: 1.1,
    };
    let mut svg = header(&format!("Poles ({kind})"), "real", "imaginary", &ax);
    let r = ax.px(1.0) - ax.px(0.0);
    let ry = ax.py(0.0) - ax.py(1.0);
    let _ = writeln!(
        svg,
        "<ellipse cx=\"{:.1}\" cy=\"{:.1}\" rx=\"{r:.1}\" ry=\"{ry:.1}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        ax.px(0.0),
        ax.py(0.0)
    );
    let mut dump = String::from("# set re im\n");
    let mut legend_y = MARGIN + 14.0;
    for (i, g) in km.poles.grids().enumerate() {
        let colour = COLOURS[(i + 1) % COLOURS.len()];
        for z in km.poles.poles(g).unwrap_or(&[]) {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{colour}\" fill-opacity=\"0.4\"/>",
                ax.px(z.re),
                ax.py(z.im)
            );
            let _ = writeln!(dump, "{g} {} {}", z.re, z.im);
        }
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{legend_y}\" fill=\"{colour}\">grid {g}</text>", W - MARGIN - 70.0);
        legend_y += 14.0;
    }
    for z in &test {
        let (x, y) = (ax.px(z.re), ax.py(z.im));
        let _ = writeln!(
            svg,
            "<path d=\"M{:.2},{:.2} l6,6 m0,-6 l-6,6\" stroke=\"black\" stroke-width=\"1.2\"/>",
            x - 3.0,
            y - 3.0
        );
        let _ = writeln!(dump, "test {} {}", z.re, z.im);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{legend_y}\">x test</text>\n</svg>", W - MARGIN - 70.0);
    Ok((svg, dump))
}
