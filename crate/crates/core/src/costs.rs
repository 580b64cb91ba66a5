//! Cost matrices for association: cosine appearance cost, IoU cost, their
//! blend, and dustbin augmentation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::{iou, BoundingBox};

/// Default dustbin (non-match) cost.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Appearance embedding of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy, or `None` for zero or non-finite vectors.
    pub fn normalized(&self) -> Option<Embedding> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return None;
        }
        Some(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Dense cost matrix. When augmented, the last row and column are the dustbin
/// and hold `gamma` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
    gamma: Option<f64>,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if let Some((row, col)) = first_non_finite(&entries) {
            return Err(Error::NonFiniteCost { row, col });
        }
        Ok(Self {
            entries,
            gamma: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n1 = rows.len();
        let n2 = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n2) {
            return Err(Error::DimensionMismatch("ragged cost rows".into()));
        }
        Self::new(DMatrix::from_fn(n1, n2, |i, j| rows[i][j]))
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn is_augmented(&self) -> bool {
        self.gamma.is_some()
    }

    /// Number of real (non-dustbin) rows.
    pub fn real_rows(&self) -> usize {
        self.entries.nrows() - usize::from(self.is_augmented())
    }

    /// Number of real (non-dustbin) columns.
    pub fn real_cols(&self) -> usize {
        self.entries.ncols() - usize::from(self.is_augmented())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// The real block, dropping the dustbin row and column if present.
    pub fn real_block(&self) -> CostMatrix {
        let (r, c) = (self.real_rows(), self.real_cols());
        CostMatrix {
            entries: self.entries.view((0, 0), (r, c)).into_owned(),
            gamma: None,
        }
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

fn unit_rows(xs: &[Embedding], offset: usize) -> Result<Vec<Embedding>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| x.normalized().ok_or(Error::ZeroNormEmbedding { index: offset + i }))
        .collect()
}

/// `C[i][j] = 1 - <x1_i / |x1_i|, x2_j / |x2_j|>`.
///
/// Embedding indices in errors count `x1` first, then `x2`.
pub fn cosine_cost(x1: &[Embedding], x2: &[Embedding]) -> Result<CostMatrix> {
    let dim = x1.first().or(x2.first()).map(Embedding::dim);
    if let Some(d) = dim {
        if let Some(bad) = x1.iter().chain(x2).find(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "embedding of dimension {} among dimension {d}",
                bad.dim()
            )));
        }
    }
    let u1 = unit_rows(x1, 0)?;
    let u2 = unit_rows(x2, x1.len())?;
    let entries = DMatrix::from_fn(x1.len(), x2.len(), |i, j| {
        let dot: f64 = u1[i].0.iter().zip(&u2[j].0).map(|(a, b)| a * b).sum();
        (1.0 - dot).clamp(0.0, 2.0)
    });
    CostMatrix::new(entries)
}

/// `C[i][j] = 1 - IoU(warped_i, targets_j)`.
pub fn iou_cost(warped: &[BoundingBox], targets: &[BoundingBox]) -> CostMatrix {
    let entries = DMatrix::from_fn(warped.len(), targets.len(), |i, j| {
        1.0 - iou(&warped[i], &targets[j])
    });
    CostMatrix {
        entries,
        gamma: None,
    }
}

/// `sigma * sim + (1 - sigma) * iou`, elementwise.
pub fn combine(sim: &CostMatrix, iou: &CostMatrix, sigma: f64) -> Result<CostMatrix> {
    if sim.is_augmented() || iou.is_augmented() {
        return Err(Error::AlreadyAugmented);
    }
    if sim.entries.shape() != iou.entries.shape() {
        return Err(Error::DimensionMismatch(format!(
            "similarity cost {:?} vs IoU cost {:?}",
            sim.entries.shape(),
            iou.entries.shape()
        )));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} outside [0, 1]")));
    }
    let entries = if sigma == 1.0 {
        sim.entries.clone()
    } else if sigma == 0.0 {
        iou.entries.clone()
    } else {
        sim.entries.zip_map(&iou.entries, |s, o| sigma * s + (1.0 - sigma) * o)
    };
    Ok(CostMatrix {
        entries,
        gamma: None,
    })
}

/// Appends a dustbin row and column filled with `gamma`.
pub fn augment_dustbin(c: &CostMatrix, gamma: f64) -> Result<CostMatrix> {
    if c.is_augmented() {
        return Err(Error::AlreadyAugmented);
    }
    if !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma {gamma} is not finite")));
    }
    let (n1, n2) = c.entries.shape();
    let entries = DMatrix::from_fn(n1 + 1, n2 + 1, |i, j| {
        if i < n1 && j < n2 {
            c.entries[(i, j)]
        } else {
            gamma
        }
    });
    Ok(CostMatrix {
        entries,
        gamma: Some(gamma),
    })
}
