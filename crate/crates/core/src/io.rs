//! CSV input and output for the command line tools.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::items::ItemMatrix;
use crate::matrix::Matrix;
use crate::outcome_reg::OddsRatioRow;
use crate::wolca::LcaEstimates;

/// A CSV file held as strings with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Table { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing column {name:?}")))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let c = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<T>().map_err(|_| {
                    Error::InvalidInput(format!(
                        "row {}: cannot parse {name} value {:?}",
                        i + 1,
                        r[c]
                    ))
                })
            })
            .collect()
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.parsed(name)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input column"));
        }
        Ok(v)
    }

    pub fn column_u64(&self, name: &str) -> Result<Vec<u64>> {
        self.parsed(name)
    }

    pub fn column_u32(&self, name: &str) -> Result<Vec<u32>> {
        self.parsed(name)
    }

    /// Numeric columns as an n x p matrix.
    pub fn matrix(&self, names: &[String]) -> Result<Matrix> {
        let cols = names
            .iter()
            .map(|n| self.column_f64(n))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Matrix::zeros(self.len(), names.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    /// Headers starting with `prefix`, in file order.
    pub fn prefixed(&self, prefix: &str) -> Vec<String> {
        self.headers
            .iter()
            .filter(|h| h.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// 1-based categorical item columns.
    pub fn items(&self, names: &[String]) -> Result<ItemMatrix> {
        if names.is_empty() {
            return Err(Error::InvalidInput("no item columns selected".into()));
        }
        let cols = names
            .iter()
            .map(|n| self.column_u32(n))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<Vec<u32>> = (0..self.len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect();
        ItemMatrix::from_one_based(&rows, None)
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes `id, mean, w1..wD`.
pub fn write_weights(path: &Path, ids: &[u64], means: &[f64], draws: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "mean".to_string()];
    header.extend((1..=draws.len()).map(|d| format!("w{d}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.to_string(), num(means[i])];
        row.extend(draws.iter().map(|d| num(d[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Weight file as written by [`write_weights`]: ids, means and draws.
pub struct WeightFile {
    pub ids: Vec<u64>,
    pub means: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let t = Table::read(path)?;
    let ids = if t.has_column("id") {
        t.column_u64("id")?
    } else {
        (0..t.len() as u64).collect()
    };
    let names: Vec<String> = t
        .headers
        .iter()
        .filter(|h| is_draw_column(h))
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no weight draw columns w1, w2, ...",
            path.display()
        )));
    }
    let draws = names
        .iter()
        .map(|n| t.column_f64(n))
        .collect::<Result<Vec<_>>>()?;
    let means = if t.has_column("mean") {
        t.column_f64("mean")?
    } else {
        (0..t.len())
            .map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / draws.len() as f64)
            .collect()
    };
    Ok(WeightFile { ids, means, draws })
}

fn is_draw_column(h: &str) -> bool {
    h.len() > 1 && h.starts_with('w') && h[1..].chars().all(|c| c.is_ascii_digit())
}

/// Long table `parameter, class, item, level, estimate, lower, upper`;
/// class, item and level are 1-based.
pub fn write_estimates(path: &Path, est: &LcaEstimates) -> Result<()> {
    let p = &est.params;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "parameter",
        "class",
        "item",
        "level",
        "estimate",
        "lower",
        "upper",
    ])?;
    for k in 0..p.num_classes() {
        w.write_record([
            "pi".into(),
            (k + 1).to_string(),
            String::new(),
            String::new(),
            num(p.pi[k]),
            num(est.pi_lower[k]),
            num(est.pi_upper[k]),
        ])?;
    }
    for j in 0..p.num_items() {
        for k in 0..p.num_classes() {
            for r in 0..p.levels()[j] {
                let idx = p.theta_index(j, k, r);
                w.write_record([
                    "theta".into(),
                    (k + 1).to_string(),
                    (j + 1).to_string(),
                    (r + 1).to_string(),
                    num(p.theta[idx]),
                    num(est.theta_lower[idx]),
                    num(est.theta_upper[idx]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `id, class` with 1-based classes.
pub fn write_classes(path: &Path, ids: &[u64], classes: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "class"])?;
    for (id, c) in ids.iter().zip(classes) {
        w.write_record([id.to_string(), (c + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_odds_ratios(path: &Path, rows: &[OddsRatioRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "term",
        "odds_ratio",
        "lower",
        "upper",
        "direction_probability",
    ])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            num(r.odds_ratio),
            num(r.lower),
            num(r.upper),
            num(r.direction_probability),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Overlays the keys of a TOML file onto `base`. Nested tables merge key by
/// key; anything not named in the file keeps its value from `base`.
pub fn merge_toml<T: Serialize + DeserializeOwned>(base: &T, text: &str) -> Result<T> {
    let mut value = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    merge_into(&mut value, toml::Value::Table(overlay));
    value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn merge_into(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_into(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn weights_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        write_weights(&p, &[7, 9], &[1.5, 2.5], &[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let f = read_weights(&p).unwrap();
        assert_eq!(f.ids, [7, 9]);
        assert_eq!(f.means, [1.5, 2.5]);
        assert_eq!(f.draws, [vec![1.0, 2.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn table_parses_items_and_matrices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "id,x,item1,item2\n1,0.5,1,3\n2,-1,2,1\n").unwrap();
        let t = Table::read(&p).unwrap();
        let items = t.items(&t.prefixed("item")).unwrap();
        assert_eq!(items.levels(), [2, 3]);
        assert_eq!(items.get(0, 1), 2);
        let m = t.matrix(&["x".to_string()]).unwrap();
        assert_eq!(m.column(0), [0.5, -1.0]);
        assert!(t.column_f64("nope").is_err());
        fs::write(&p, "x\nabc\n").unwrap();
        assert!(Table::read(&p).unwrap().column_f64("x").is_err());
    }

    #[test]
    fn toml_overlay_keeps_unnamed_fields() {
        let base = crate::wolca::WolcaConfig::default();
        let merged = merge_toml(&base, "k_max = 12\n[fixed]\niterations = 400\n").unwrap();
        assert_eq!(merged.k_max, 12);
        assert_eq!(merged.fixed.iterations, 400);
        assert_eq!(merged.fixed.burn_in, base.fixed.burn_in);
        assert_eq!(merged.adaptive.iterations, base.adaptive.iterations);
        assert!(merge_toml(&base, "k_max = \"many\"").is_err());
    }

    #[test]
    fn draw_columns() {
        assert!(is_draw_column("w12"));
        assert!(!is_draw_column("w"));
        assert!(!is_draw_column("weight"));
    }
}
