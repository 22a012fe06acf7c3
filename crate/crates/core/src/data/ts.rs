//! Reader and writer for the `.ts` text format of the UEA/UCR archives.
//!
//! Only equal-length series without missing values are supported.

use std::fmt::Write as _;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Default)]
struct Header {
    problem_name: Option<String>,
    dimensions: Option<usize>,
    series_length: Option<usize>,
    equal_length: Option<bool>,
    class_label: Option<bool>,
    declared_classes: Vec<String>,
}

pub fn load_ts(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_ts(&text, path)
}

pub(crate) fn parse_ts(text: &str, path: &Path) -> Result<Dataset> {
    let mut header = Header::default();
    let mut in_data = false;
    let mut values: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut n_dims: Option<usize> = None;
    let mut len: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(Error::parse(path, lineno, "expected a header line or @data"));
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            let rest: Vec<&str> = parts.collect();
            let flag = |rest: &[&str]| -> Result<bool> {
                match rest.first().map(|s| s.to_ascii_lowercase()) {
                    Some(s) if s == "true" => Ok(true),
                    Some(s) if s == "false" => Ok(false),
                    _ => Err(Error::parse(path, lineno, format!("{key} expects true/false"))),
                }
            };
            let count = |rest: &[&str]| -> Result<usize> {
                rest.first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(path, lineno, format!("{key} expects an integer")))
            };
            match key.as_str() {
                "@problemname" => header.problem_name = rest.first().map(|s| s.to_string()),
                "@timestamps" => {
                    if flag(&rest)? {
                        return Err(Error::UnsupportedFormat("timestamped series".into()));
                    }
                }
                "@missing" => {
                    if flag(&rest)? {
                        return Err(Error::UnsupportedFormat("series with missing values".into()));
                    }
                }
                "@univariate" => {
                    if flag(&rest)? && header.dimensions.is_none() {
                        header.dimensions = Some(1);
                    }
                }
                "@dimensions" => header.dimensions = Some(count(&rest)?),
                "@equallength" => header.equal_length = Some(flag(&rest)?),
                "@serieslength" => header.series_length = Some(count(&rest)?),
                "@classlabel" => {
                    let on = flag(&rest)?;
                    header.class_label = Some(on);
                    if on {
                        header.declared_classes = rest[1..].iter().map(|s| s.to_string()).collect();
                    }
                }
                "@targetlabel" => {
                    return Err(Error::UnsupportedFormat("regression targets".into()));
                }
                "@data" => {
                    if header.class_label != Some(true) {
                        return Err(Error::parse(path, lineno, "@classLabel true required before @data"));
                    }
                    if header.equal_length == Some(false) {
                        return Err(Error::UnsupportedFormat("variable-length series".into()));
                    }
                    in_data = true;
                }
                _ => return Err(Error::parse(path, lineno, format!("unknown header {key}"))),
            }
            continue;
        }

        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(Error::parse(path, lineno, "data line needs dimensions and a class label"));
        }
        let (label, dims) = fields.split_last().unwrap();
        let d = dims.len();
        match n_dims {
            None => n_dims = Some(d),
            Some(n) if n != d => {
                return Err(Error::parse(path, lineno, format!("expected {n} dimensions, found {d}")))
            }
            _ => {}
        }
        if let Some(hd) = header.dimensions {
            if hd != d {
                return Err(Error::parse(path, lineno, format!("@dimensions is {hd} but line has {d}")));
            }
        }
        for dim in dims {
            let start = values.len();
            for tok in dim.split(',') {
                let tok = tok.trim();
                if tok == "?" || tok.eq_ignore_ascii_case("nan") {
                    return Err(Error::UnsupportedFormat(format!(
                        "missing value at {}:{lineno}",
                        path.display()
                    )));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad number {tok:?}")))?;
                values.push(v);
            }
            let n = values.len() - start;
            match len {
                None => len = Some(n),
                Some(l) if l != n => {
                    return Err(Error::UnsupportedFormat(format!(
                        "ragged series at {}:{lineno} ({n} vs {l} values)",
                        path.display()
                    )))
                }
                _ => {}
            }
            if let Some(sl) = header.series_length {
                if sl != n {
                    return Err(Error::parse(path, lineno, format!("@seriesLength is {sl} but dimension has {n}")));
                }
            }
        }
        raw_labels.push(label.trim().to_string());
    }

    if !in_data {
        return Err(Error::parse(path, text.lines().count(), "missing @data section"));
    }
    let (Some(c), Some(t)) = (n_dims, len) else {
        return Err(Error::Input(format!("{} contains no samples", path.display())));
    };

    let mut class_names: Vec<String> = Vec::new();
    let labels = raw_labels
        .iter()
        .map(|l| match class_names.iter().position(|n| n == l) {
            Some(i) => i,
            None => {
                class_names.push(l.clone());
                class_names.len() - 1
            }
        })
        .collect();
    // declared but unseen classes still count
    for name in &header.declared_classes {
        if !class_names.contains(name) {
            class_names.push(name.clone());
        }
    }
    let ds = Dataset::new(values, c, t, labels, class_names)?;
    Ok(ds.with_source(header.problem_name.unwrap_or_else(|| path.display().to_string())))
}

pub fn write_ts(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_ts(dataset))?;
    Ok(())
}

pub(crate) fn format_ts(dataset: &Dataset) -> String {
    let mut s = String::new();
    let name = if dataset.source.is_empty() {
        "dataset"
    } else {
        dataset.source.as_str()
    };
    let name: String = name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
    let _ = writeln!(s, "@problemName {name}");
    let _ = writeln!(s, "@timeStamps false");
    let _ = writeln!(s, "@missing false");
    let _ = writeln!(s, "@univariate {}", dataset.n_channels() == 1);
    let _ = writeln!(s, "@dimensions {}", dataset.n_channels());
    let _ = writeln!(s, "@equalLength true");
    let _ = writeln!(s, "@seriesLength {}", dataset.series_len());
    let _ = writeln!(s, "@classLabel true {}", dataset.class_names().join(" "));
    let _ = writeln!(s, "@data");
    for i in 0..dataset.len() {
        for c in 0..dataset.n_channels() {
            let ch = dataset.channel(i, c);
            let joined: Vec<String> = ch.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&joined.join(","));
            s.push(':');
        }
        s.push_str(&dataset.class_names()[dataset.labels()[i]]);
        s.push('\n');
    }
    s
}
