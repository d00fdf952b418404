//! Gnuplot scripts for the CSV files written by the harness.
//!
//! Each script sits next to its data and renders a PNG of the same stem when
//! run with `gnuplot <script>` from that directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{csv_body, files_with_extension, write_file};

/// File names [`emit_plots`] knows how to plot.
pub const KNOWN_INPUTS: [&str; 9] = [
    "depth_summary.csv",
    "depth_margin_curves.csv",
    "lambda_summary.csv",
    "lambda_margin_curves.csv",
    "losses_summary.csv",
    "losses_margin_curves.csv",
    "margin_curve*.csv",
    "history.csv",
    "epochs.csv",
];

fn header(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = csv_body(&text).next().unwrap_or_default();
    Ok(line.split(',').map(str::to_string).collect())
}

fn preamble(stem: &str, title: &str, xlabel: &str, ylabel: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set datafile commentschars '#'\n\
         set terminal pngcairo size 800,560\n\
         set output '{stem}.png'\n\
         set title '{title}'\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         set key outside right\n\
         set grid\n"
    )
}

/// Quotes a string for use inside a gnuplot single-quoted literal.
fn quoted(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn summary_script(file: &str, axis: &str, columns: &[String]) -> String {
    let col = |name: &str| columns.iter().position(|c| c == name).map(|i| i + 1);
    let (Some(mean), Some(min), Some(std)) = (col("mean_test_err"), col("min_test_err"), col("std_test_err")) else {
        return String::new();
    };
    let stem = file.trim_end_matches(".csv").replace("_summary", "_test_error");
    let mut s = preamble(&stem, &format!("test error by {axis}"), axis, "test error");
    let f = quoted(file);
    if axis == "loss" {
        s.push_str("set style fill solid 0.5\nset boxwidth 0.6\n");
        s.push_str(&format!(
            "plot {f} using 0:{mean}:{std}:xticlabels(1) with boxerrorbars title 'mean ± std', \\\n     {f} using 0:{min} with points pt 7 title 'min'\n"
        ));
    } else {
        if axis == "lambda" {
            s.push_str("set logscale x\n");
        }
        s.push_str(&format!(
            "plot {f} using 1:{mean}:{std} with yerrorlines title 'mean ± std', \\\n     {f} using 1:{min} with linespoints title 'min'\n"
        ));
    }
    s
}

fn overlay_script(stem: &str, title: &str, series: &[(String, usize, String)]) -> String {
    let mut s = preamble(stem, title, "gamma", "margin error");
    s.push_str("set yrange [0:1]\n");
    let plots: Vec<String> = series
        .iter()
        .map(|(file, col, label)| {
            format!(
                "{} using 1:{col} with linespoints title {}",
                quoted(file),
                quoted(label)
            )
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes one `.gp` script per recognized CSV file in `dir` and returns their
/// paths. Narrow `margin_curve*.csv` files are overlaid in a single
/// `margin_curves.gp`. Fails when `dir` holds none of [`KNOWN_INPUTS`].
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let csvs = files_with_extension(dir, "csv")?;
    let mut scripts: Vec<(String, String)> = Vec::new();
    let mut narrow = Vec::new();

    for path in &csvs {
        let name = file_name(path);
        let columns = header(path)?;
        match name.as_str() {
            "depth_summary.csv" | "lambda_summary.csv" | "losses_summary.csv" => {
                let axis = columns.first().cloned().unwrap_or_default();
                let script = summary_script(&name, &axis, &columns);
                if !script.is_empty() {
                    scripts.push((name.replace("_summary.csv", "_test_error.gp"), script));
                }
            }
            "depth_margin_curves.csv" | "lambda_margin_curves.csv" | "losses_margin_curves.csv" => {
                let stem = name.trim_end_matches(".csv");
                let series: Vec<_> = columns
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, label)| (name.clone(), i + 1, label.clone()))
                    .collect();
                scripts.push((
                    format!("{stem}.gp"),
                    overlay_script(stem, "training margin error", &series),
                ));
            }
            "history.csv" => {
                let mut s = preamble("training_loss", "training loss", "iteration", "loss");
                s.push_str("set logscale y\n");
                s.push_str(
                    "plot 'history.csv' using 1:3 with lines title 'loss', \\\n     'history.csv' using 1:4 with lines title 'cross entropy'\n",
                );
                scripts.push(("training_loss.gp".into(), s));
            }
            "epochs.csv" => {
                let mut s = preamble("epoch_error", "error per epoch", "epoch", "error");
                s.push_str(
                    "plot 'epochs.csv' using 1:2 with linespoints title 'train', \\\n     'epochs.csv' using 1:3 with linespoints title 'test'\n",
                );
                scripts.push(("epoch_error.gp".into(), s));
            }
            n if n.starts_with("margin_curve") && columns == ["gamma", "err"] => {
                let label = n
                    .trim_start_matches("margin_curve")
                    .trim_start_matches(['_', '-'])
                    .trim_end_matches(".csv");
                let label = if label.is_empty() { "run" } else { label };
                narrow.push((name.clone(), 2, label.to_string()));
            }
            _ => {}
        }
    }
    if !narrow.is_empty() {
        scripts.push((
            "margin_curves.gp".into(),
            overlay_script("margin_curves", "margin error", &narrow),
        ));
    }
    if scripts.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no plottable CSV files; expected one of {}", KNOWN_INPUTS.join(", ")),
            ),
        ));
    }
    let mut written = Vec::new();
    for (name, body) in scripts {
        let path = dir.join(name);
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}
