//! Long-format CSV: one row per (sample, channel) with columns
//! `sample_id, channel_id, label, t0, …, t{T−1}`.

use std::collections::HashMap;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 4
        || &headers[0] != "sample_id"
        || &headers[1] != "channel_id"
        || &headers[2] != "label"
    {
        return Err(Error::parse(path, 1, "expected header sample_id,channel_id,label,t0,..."));
    }
    let t = headers.len() - 3;

    struct Pending {
        label: String,
        rows: HashMap<String, Vec<f64>>,
        first_line: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut samples: HashMap<String, Pending> = HashMap::new();
    let mut channels: Vec<String> = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let sid = rec[0].to_string();
        let cid = rec[1].to_string();
        let label = rec[2].to_string();
        let vals = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("bad number {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != t {
            return Err(Error::parse(path, line, format!("expected {t} values, found {}", vals.len())));
        }
        if !channels.contains(&cid) {
            if order.len() > 1 {
                return Err(Error::parse(path, line, format!("channel {cid} missing from earlier samples")));
            }
            channels.push(cid.clone());
        }
        let entry = samples.entry(sid.clone()).or_insert_with(|| {
            order.push(sid.clone());
            Pending {
                label: label.clone(),
                rows: HashMap::new(),
                first_line: line,
            }
        });
        if entry.label != label {
            return Err(Error::parse(
                path,
                line,
                format!("sample {sid} has labels {} and {label}", entry.label),
            ));
        }
        if entry.rows.insert(cid.clone(), vals).is_some() {
            return Err(Error::parse(path, line, format!("duplicate row for sample {sid} channel {cid}")));
        }
    }

    let mut values = Vec::with_capacity(order.len() * channels.len() * t);
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(order.len());
    for sid in &order {
        let p = &samples[sid];
        for cid in &channels {
            let row = p.rows.get(cid).ok_or_else(|| {
                Error::parse(path, p.first_line, format!("sample {sid} lacks channel {cid}"))
            })?;
            values.extend_from_slice(row);
        }
        let idx = match class_names.iter().position(|n| n == &p.label) {
            Some(i) => i,
            None => {
                class_names.push(p.label.clone());
                class_names.len() - 1
            }
        };
        labels.push(idx);
    }
    let ds = Dataset::new(values, channels.len(), t, labels, class_names)?;
    Ok(ds
        .with_channel_names(channels)?
        .with_source(path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()))
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "channel_id".into(), "label".into()];
    header.extend((0..dataset.series_len()).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        for c in 0..dataset.n_channels() {
            let mut rec = vec![
                i.to_string(),
                dataset.channel_names()[c].clone(),
                dataset.class_names()[dataset.labels()[i]].clone(),
            ];
            rec.extend(dataset.channel(i, c).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.csv",
            "sample_id,channel_id,label,t0,t1,t2\n\
             s1,x,up,1,2,3\n\
             s1,y,up,4,5,6\n\
             s2,x,down,-1,-2,-3\n\
             s2,y,down,0.5,0.25,0\n",
        );
        let d = load_csv(&p).unwrap();
        assert_eq!((d.len(), d.n_channels(), d.series_len()), (2, 2, 3));
        assert_eq!(d.labels(), &[0, 1]);
        assert_eq!(d.channel(1, 1), &[0.5, 0.25, 0.0]);
        assert_eq!(d.channel_names(), &["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn inconsistent_label_and_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "b.csv",
            "sample_id,channel_id,label,t0\ns1,x,up,1\ns1,y,down,2\n",
        );
        assert!(matches!(load_csv(&p), Err(Error::Parse { .. })));
        let p = write(
            &dir,
            "c.csv",
            "sample_id,channel_id,label,t0\ns1,x,up,1\ns1,y,up,2\ns2,x,down,3\n",
        );
        assert!(matches!(load_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(
            vec![0.1, -2.0, 1e-300, 7.5, 3.0, 4.0, 5.0, 6.0],
            2,
            2,
            vec![1, 0],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&d, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.values(), d.values());
        // first-appearance order renames classes: sample 0 carries "b"
        assert_eq!(back.class_names(), &["b".to_string(), "a".to_string()]);
        assert_eq!(back.labels(), &[0, 1]);
    }
}
