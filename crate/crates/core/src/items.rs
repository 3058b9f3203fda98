//! Categorical item responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// n x J matrix of item responses stored 0-based (`level - 1`), with the
/// number of levels of each item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMatrix {
    n: usize,
    levels: Vec<usize>,
    data: Vec<u8>,
}

impl ItemMatrix {
    /// From 0-based codes.
    pub fn new(n: usize, levels: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let j = levels.len();
        if data.len() != n * j {
            return Err(Error::Dimension(format!(
                "{} codes for {n} x {j} items",
                data.len()
            )));
        }
        if levels.iter().any(|&r| r < 1 || r > u8::MAX as usize) {
            return Err(Error::InvalidInput(
                "item level counts must be in 1..=255".into(),
            ));
        }
        for (idx, &v) in data.iter().enumerate() {
            if v as usize >= levels[idx % j] {
                return Err(Error::InvalidInput(format!(
                    "row {} item {} has code {} but only {} levels",
                    idx / j,
                    idx % j,
                    v as usize + 1,
                    levels[idx % j]
                )));
            }
        }
        Ok(Self { n, levels, data })
    }

    /// From 1-based codes as they appear in data files.
    pub fn from_one_based(rows: &[Vec<u32>], levels: Option<Vec<usize>>) -> Result<Self> {
        let j = rows.first().map_or(0, Vec::len);
        let levels = match levels {
            Some(l) => l,
            None => (0..j)
                .map(|c| rows.iter().map(|r| r[c] as usize).max().unwrap_or(1))
                .collect(),
        };
        let mut data = Vec::with_capacity(rows.len() * j);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != j {
                return Err(Error::Dimension(format!(
                    "row {i} has {} items, expected {j}",
                    r.len()
                )));
            }
            for &v in r {
                if v == 0 {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: item codes start at 1"
                    )));
                }
                data.push((v - 1) as u8);
            }
        }
        Self::new(rows.len(), levels, data)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nitems(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn max_levels(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.levels.len() + j] as usize
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        let j = self.levels.len();
        &self.data[i * j..(i + 1) * j]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.nitems());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            levels: self.levels.clone(),
            data,
        }
    }
}
