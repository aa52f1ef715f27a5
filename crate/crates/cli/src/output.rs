//! Report files: CSV tables, JSON documents and raw f64 arrays.

use std::fs;
use std::path::{Path, PathBuf};

use hdsa_core::hdsa::{SensitivityReport, SpreadReport};
use serde::Serialize;

pub type Result<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sensitivity table with one row per (QoI, member).
pub fn write_sensitivities(path: &Path, report: &SensitivityReport, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "qoi",
        "subgroup",
        "member",
        "pointwise_raw",
        "pointwise_norm",
        "generalized_raw",
        "generalized_norm",
        "n_s",
        "seed",
    ])?;
    let n_s = report.n_used.to_string();
    let seed = seed.to_string();
    for qoi in ["map", "risk"] {
        for g in &report.groups {
            let (gr, gn) = match qoi {
                "map" => (g.map_raw, g.map_norm),
                _ => (g.risk_raw, g.risk_norm),
            };
            for m in &g.members {
                let (pr, pn) = match qoi {
                    "map" => (m.map_raw, m.map_norm),
                    _ => (m.risk_raw, m.risk_norm),
                };
                w.write_record([
                    qoi,
                    &g.name,
                    &m.name,
                    &pr.to_string(),
                    &opt(pn),
                    &gr.to_string(),
                    &opt(gn),
                    &n_s,
                    &seed,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_spread(path: &Path, reports: &[SpreadReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "group_size", "n_groups", "qoi", "subgroup", "min", "max", "mean", "std", "norm_min", "norm_max", "norm_mean", "norm_std",
    ])?;
    for r in reports {
        for g in &r.subgroups {
            for (qoi, raw, norm) in [
                ("map", g.map_generalized, g.map_generalized_norm),
                ("risk", g.risk_generalized, g.risk_generalized_norm),
            ] {
                w.write_record([
                    r.group_size.to_string(),
                    r.n_groups.to_string(),
                    qoi.into(),
                    g.subgroup.clone(),
                    raw.min.to_string(),
                    raw.max.to_string(),
                    raw.mean.to_string(),
                    raw.std.to_string(),
                    opt(norm.map(|s| s.min)),
                    opt(norm.map(|s| s.max)),
                    opt(norm.map(|s| s.mean)),
                    opt(norm.map(|s| s.std)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: &'static str,
    /// Row-major `[rows, cols]`.
    pub shape: [usize; 2],
}

/// Collects row-major little-endian f64 arrays and their manifest.
pub struct ArrayDump {
    dir: PathBuf,
    entries: Vec<ArrayEntry>,
}

impl ArrayDump {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn add<'a, I>(&mut self, name: &str, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut bytes = Vec::new();
        let (mut n_rows, mut n_cols) = (0, None);
        for row in rows {
            match n_cols {
                None => n_cols = Some(row.len()),
                Some(c) if c != row.len() => return Err(format!("array `{name}` has ragged rows").into()),
                _ => {}
            }
            bytes.extend(row.iter().flat_map(|v| v.to_le_bytes()));
            n_rows += 1;
        }
        let file = format!("{name}.f64");
        fs::write(self.dir.join(&file), bytes)?;
        self.entries.push(ArrayEntry {
            name: name.into(),
            file,
            dtype: "f64le",
            shape: [n_rows, n_cols.unwrap_or(0)],
        });
        Ok(())
    }

    pub fn finish<T: Serialize>(self, meta: T) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, T> {
            meta: T,
            arrays: &'a [ArrayEntry],
        }
        write_json(
            &self.dir.join("manifest.json"),
            &Manifest {
                meta,
                arrays: &self.entries,
            },
        )
    }
}

/// Reads one array written by [`ArrayDump`].
#[cfg(test)]
pub fn read_array(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} is not a whole number of f64 values", path.display()).into());
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}
