//! File formats: MNIST IDX loading, CSV export and model persistence.

use std::fs;
use std::path::{Path, PathBuf};

use lmdnn_core::data::idx;
use lmdnn_core::loss::MarginSpace;
use lmdnn_core::optim::TrainHistory;
use lmdnn_core::{Dataset, MarginCurve, Network};

use crate::error::{Error, Result};

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData(format!("{} not found", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

/// Loads an IDX image/label file pair as a dataset with pixels in `[0, 1]`,
/// labels `1..=10` and `M = 1`. Errors name the offending file and byte offset.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    let attribute = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Data { path, source }
    };
    idx::parse_images(&images).map_err(attribute(images_path))?;
    idx::parse_labels(&labels).map_err(attribute(labels_path))?;
    // Both headers parse; what remains is cross-file consistency, reported
    // against the labels file.
    idx::mnist_dataset(&images, &labels).map_err(attribute(labels_path))
}

/// The official training and test sets from a directory holding the four
/// uncompressed IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?;
    let test = load_mnist_idx(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))?;
    Ok((train, test))
}

/// `x` with 9 significant digits, positional when the exponent is small.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (DIGITS - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Comment lines carrying the resolved configuration of a run. Written at the
/// top of every CSV so that each result file identifies the run behind it.
pub fn config_echo(command: &str, config: &impl serde::Serialize) -> String {
    let json = serde_json::to_string(config).expect("configs serialize to JSON");
    format!("# lmdnn {command}\n# config {json}\n")
}

/// A CSV document: optional `#` comment preamble, header, rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    preamble: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            preamble: String::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_preamble(mut self, preamble: String) -> Self {
        self.preamble = preamble;
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "CSV row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.preamble.clone();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.render())
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `gamma,err`, one row per grid point.
pub fn curve_csv(curve: &MarginCurve) -> Csv {
    let mut csv = Csv::new(&["gamma", "err"]);
    for (g, e) in curve.points() {
        csv.push(vec![fmt_sig(g), fmt_sig(e)]);
    }
    csv
}

/// Several curves on a shared grid: `gamma,<label>...`.
pub fn curves_csv(gammas: &[f64], series: &[(String, Vec<f64>)]) -> Csv {
    let mut header = vec!["gamma"];
    header.extend(series.iter().map(|(name, _)| name.as_str()));
    let mut csv = Csv::new(&header);
    for (i, g) in gammas.iter().enumerate() {
        let mut row = vec![fmt_sig(*g)];
        row.extend(series.iter().map(|(_, v)| fmt_sig(v[i])));
        csv.push(row);
    }
    csv
}

/// `iter,lr,loss,base_ce,penalty`.
pub fn history_csv(history: &TrainHistory) -> Csv {
    let mut csv = Csv::new(&["iter", "lr", "loss", "base_ce", "penalty"]);
    for r in &history.iterations {
        csv.push(vec![
            r.iter.to_string(),
            fmt_sig(r.lr),
            fmt_sig(r.loss),
            fmt_sig(r.base_ce),
            fmt_sig(r.penalty),
        ]);
    }
    csv
}

/// `epoch,train_err,test_err` (empty `test_err` when no test set was used).
pub fn epochs_csv(history: &TrainHistory) -> Csv {
    let mut csv = Csv::new(&["epoch", "train_err", "test_err"]);
    for r in &history.epochs {
        csv.push(vec![
            r.epoch.to_string(),
            fmt_sig(r.train_err),
            r.test_err.map(fmt_sig).unwrap_or_default(),
        ]);
    }
    csv
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let json = serde_json::to_string_pretty(net).expect("networks serialize to JSON");
    write_file(path, &(json + "\n"))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-comment lines of a CSV file, for readers that skip the preamble.
pub fn csv_body(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.is_empty())
}

/// Reads a `gamma,err` file as written by [`curve_csv`].
pub fn read_curve_csv(path: &Path, space: MarginSpace) -> Result<MarginCurve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Config(format!("{}: line {line}: {what}", path.display()));
    let mut body = csv_body(&text);
    if body.next().map(str::trim) != Some("gamma,err") {
        return Err(bad(1, "expected a `gamma,err` header"));
    }
    let (mut gammas, mut errors) = (Vec::new(), Vec::new());
    for (i, line) in body.enumerate() {
        let (g, e) = line.split_once(',').ok_or_else(|| bad(i + 2, "expected two columns"))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 2, "not a number"));
        gammas.push(parse(g)?);
        errors.push(parse(e)?);
    }
    Ok(MarginCurve { gammas, errors, space })
}

/// Lists `dir` entries with the given extension, sorted by name.
pub fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
