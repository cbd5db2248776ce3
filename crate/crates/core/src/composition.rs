//! Counts and compositions to the centered log-ratio multi-view design.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default fill for zero counts: the maximum rounding error of an integer count.
pub const DEFAULT_COUNT_FILL: f64 = 0.5;

/// Grouped sub-compositions `Z_1 .. Z_K`, one `n x p_k` block per group.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCompositionalDataset<T: Real> {
    blocks: Vec<DMatrix<T>>,
    group_names: Vec<String>,
}

impl<T: Real> SubCompositionalDataset<T> {
    /// Wraps nonnegative blocks sharing the same number of rows.
    pub fn new(blocks: Vec<DMatrix<T>>, group_names: Vec<String>) -> Result<Self> {
        validate_blocks(&blocks, &group_names)?;
        for block in &blocks {
            check_nonnegative(block)?;
        }
        Ok(Self {
            blocks,
            group_names,
        })
    }

    /// Splits a wide `n x p` matrix into consecutive column blocks of the given sizes.
    pub fn from_columns(
        data: &DMatrix<T>,
        group_sizes: &[usize],
        group_names: Vec<String>,
    ) -> Result<Self> {
        Self::new(split_columns(data, group_sizes)?, group_names)
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn n(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn num_groups(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Replaces zeros by `fill` in every block and renormalizes each row per block.
    pub fn to_compositions(&self, fill: T) -> Result<Self> {
        let filled = self
            .blocks
            .iter()
            .map(|b| replace_zeros(b, fill))
            .collect::<Result<Vec<_>>>()?;
        to_compositions(filled, self.group_names.clone())
    }
}

/// Centered log-ratio design `X = (X_1, .., X_K)` with optional unpenalized controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDesign<T: Real> {
    x_blocks: Vec<DMatrix<T>>,
    controls: Option<DMatrix<T>>,
    has_intercept: bool,
    group_names: Vec<String>,
}

impl<T: Real> MultiViewDesign<T> {
    /// Builds a design from already-transformed blocks. Blocks need not have zero
    /// row sums; this is the entry point for non-compositional predictors.
    pub fn new(
        x_blocks: Vec<DMatrix<T>>,
        controls: Option<DMatrix<T>>,
        has_intercept: bool,
        group_names: Vec<String>,
    ) -> Result<Self> {
        validate_blocks(&x_blocks, &group_names)?;
        let n = x_blocks[0].nrows();
        if let Some(c) = &controls {
            if c.nrows() != n {
                return Err(Error::mismatch("control rows", n, c.nrows()));
            }
        }
        Ok(Self {
            x_blocks,
            controls,
            has_intercept,
            group_names,
        })
    }

    /// Same as [`MultiViewDesign::new`] with generated names `G1 .. GK`.
    pub fn from_blocks(x_blocks: Vec<DMatrix<T>>, has_intercept: bool) -> Result<Self> {
        let names = default_group_names(x_blocks.len());
        Self::new(x_blocks, None, has_intercept, names)
    }

    pub fn x_blocks(&self) -> &[DMatrix<T>] {
        &self.x_blocks
    }

    pub fn block(&self, k: usize) -> &DMatrix<T> {
        &self.x_blocks[k]
    }

    pub fn controls(&self) -> Option<&DMatrix<T>> {
        self.controls.as_ref()
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn n(&self) -> usize {
        self.x_blocks[0].nrows()
    }

    pub fn num_groups(&self) -> usize {
        self.x_blocks.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.x_blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn p(&self) -> usize {
        self.x_blocks.iter().map(|b| b.ncols()).sum()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.as_ref().map_or(0, |c| c.ncols())
    }

    /// Column offsets of each block inside the concatenated design.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.x_blocks
            .iter()
            .map(|b| {
                let start = acc;
                acc += b.ncols();
                start
            })
            .collect()
    }

    /// Concatenated `n x p` design.
    pub fn concatenated(&self) -> DMatrix<T> {
        concat_columns(&self.x_blocks)
    }

    /// Restricts the design to a subset of rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x_blocks: self.x_blocks.iter().map(|b| b.select_rows(rows)).collect(),
            controls: self.controls.as_ref().map(|c| c.select_rows(rows)),
            has_intercept: self.has_intercept,
            group_names: self.group_names.clone(),
        }
    }
}

/// Replaces zero entries with `fill`, leaving positive entries unchanged.
pub fn replace_zeros<T: Real>(counts: &DMatrix<T>, fill: T) -> Result<DMatrix<T>> {
    if !(fill > T::zero()) || !fill.is_finite_value() {
        return Err(Error::invalid("fill", format!("must be positive, got {fill}")));
    }
    check_nonnegative(counts)?;
    Ok(counts.map(|v| if v == T::zero() { fill } else { v }))
}

/// Normalizes every row of every block to sum to one.
pub fn to_compositions<T: Real>(
    blocks: Vec<DMatrix<T>>,
    group_names: Vec<String>,
) -> Result<SubCompositionalDataset<T>> {
    validate_blocks(&blocks, &group_names)?;
    let mut out = Vec::with_capacity(blocks.len());
    for (k, mut block) in blocks.into_iter().enumerate() {
        check_nonnegative(&block)?;
        for (i, mut row) in block.row_iter_mut().enumerate() {
            let total = row.sum();
            if !(total > T::zero()) {
                return Err(Error::ZeroRowSum { block: k, row: i });
            }
            row /= total;
        }
        out.push(block);
    }
    Ok(SubCompositionalDataset {
        blocks: out,
        group_names,
    })
}

/// Centered log-ratio of each sub-composition: `X_k = log(Z_k) (I - 11'/p_k)`.
pub fn clr_design<T: Real>(
    data: &SubCompositionalDataset<T>,
    controls: Option<DMatrix<T>>,
    has_intercept: bool,
) -> Result<MultiViewDesign<T>> {
    let mut x_blocks = Vec::with_capacity(data.num_groups());
    for (k, block) in data.blocks().iter().enumerate() {
        x_blocks.push(clr_block(block, k)?);
    }
    MultiViewDesign::new(x_blocks, controls, has_intercept, data.group_names.clone())
}

fn clr_block<T: Real>(block: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    let (n, p) = block.shape();
    let mut out = DMatrix::zeros(n, p);
    let inv_p = T::one() / T::from_usize_lossy(p);
    for i in 0..n {
        let mut mean = T::zero();
        for j in 0..p {
            let z = block[(i, j)];
            if !(z > T::zero()) {
                return Err(Error::NonPositiveComposition {
                    block: k,
                    row: i,
                    col: j,
                    value: z.as_f64(),
                });
            }
            let l = z.ln();
            out[(i, j)] = l;
            mean += l;
        }
        mean *= inv_p;
        for j in 0..p {
            out[(i, j)] -= mean;
        }
    }
    Ok(out)
}

/// One entry of the group map file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub size: usize,
}

/// `{"groups": [{"name": .., "size": ..}, ..]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMap {
    pub groups: Vec<GroupSpec>,
}

impl GroupMap {
    pub fn names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.size).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }
}

pub fn default_group_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("G{i}")).collect()
}

pub fn split_columns<T: Real>(data: &DMatrix<T>, group_sizes: &[usize]) -> Result<Vec<DMatrix<T>>> {
    let total: usize = group_sizes.iter().sum();
    if total != data.ncols() {
        return Err(Error::mismatch("total group size", data.ncols(), total));
    }
    if let Some(pos) = group_sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(
            "group_sizes",
            format!("group {} has size 0", pos + 1),
        ));
    }
    let mut start = 0;
    Ok(group_sizes
        .iter()
        .map(|&s| {
            let b = data.columns(start, s).into_owned();
            start += s;
            b
        })
        .collect())
}

pub fn concat_columns<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let p = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut start = 0;
    for b in blocks {
        out.columns_mut(start, b.ncols()).copy_from(b);
        start += b.ncols();
    }
    out
}

pub fn concat_rows<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let q = blocks.first().map_or(0, |b| b.ncols());
    let p = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(p, q);
    let mut start = 0;
    for b in blocks {
        out.rows_mut(start, b.nrows()).copy_from(b);
        start += b.nrows();
    }
    out
}

fn validate_blocks<T: Real>(blocks: &[DMatrix<T>], names: &[String]) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::invalid("blocks", "at least one group is required"));
    }
    if names.len() != blocks.len() {
        return Err(Error::mismatch("group names", blocks.len(), names.len()));
    }
    let n = blocks[0].nrows();
    for (k, b) in blocks.iter().enumerate() {
        if b.nrows() != n {
            return Err(Error::mismatch(format!("rows of block {}", k + 1), n, b.nrows()));
        }
        if b.ncols() == 0 {
            return Err(Error::invalid("blocks", format!("block {} has no columns", k + 1)));
        }
    }
    Ok(())
}

fn check_nonnegative<T: Real>(m: &DMatrix<T>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !(v >= T::zero()) || !v.is_finite_value() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v.as_f64(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn replace_zeros_fills_only_zeros() {
        let m = dmatrix![2.0, 0.0; 1.0, 3.0];
        assert_eq!(replace_zeros(&m, 0.5).unwrap(), dmatrix![2.0, 0.5; 1.0, 3.0]);
        let all = dmatrix![0.0, 0.0];
        assert_eq!(replace_zeros(&all, 0.5).unwrap(), dmatrix![0.5, 0.5]);
        let pos = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(replace_zeros(&pos, 0.5).unwrap(), pos);
    }

    #[test]
    fn replace_zeros_rejects_negative_with_index() {
        let m = dmatrix![1.0, 2.0; 3.0, -1.0];
        match replace_zeros(&m, 0.5) {
            Err(Error::NegativeEntry { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(replace_zeros(&m.abs(), 0.0).is_err());
    }

    #[test]
    fn compositions_normalize_per_block() {
        let names = vec!["a".to_string(), "b".to_string()];
        let ds = to_compositions(vec![dmatrix![1.0, 3.0], dmatrix![2.0, 2.0, 4.0]], names).unwrap();
        assert_eq!(ds.blocks()[0], dmatrix![0.25, 0.75]);
        assert_eq!(ds.blocks()[1], dmatrix![0.25, 0.25, 0.5]);

        let single = to_compositions(vec![dmatrix![1.0, 1.0, 2.0; 5.0, 5.0, 0.0]], vec!["g".into()])
            .unwrap();
        assert_eq!(single.blocks()[0].row(0), dmatrix![0.25, 0.25, 0.5].row(0));
    }

    #[test]
    fn zero_row_sum_is_rejected() {
        let err = to_compositions(vec![dmatrix![1.0, 1.0; 0.0, 0.0]], vec!["g".into()]).unwrap_err();
        assert!(matches!(err, Error::ZeroRowSum { block: 0, row: 1 }));
    }

    #[test]
    fn clr_examples() {
        let ds: SubCompositionalDataset<f64> = to_compositions(
            vec![dmatrix![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0; 0.2, 0.3, 0.5]],
            vec!["g".into()],
        )
        .unwrap();
        let x = clr_design(&ds, None, false).unwrap();
        let b = x.block(0);
        for j in 0..3 {
            assert!(b[(0, j)].abs() < 1e-15);
        }
        // log(0.2), log(0.3), log(0.5) centred by their mean, evaluated independently.
        let expected = [-0.440_585_28, -0.035_120_17, 0.475_705_45];
        for j in 0..3 {
            assert!((b[(1, j)] - expected[j]).abs() < 1e-8, "{} vs {}", b[(1, j)], expected[j]);
        }
        assert!(b.row(1).sum().abs() < 1e-12);
    }

    #[test]
    fn clr_rejects_nonpositive() {
        let ds = SubCompositionalDataset::new(vec![dmatrix![0.0, 1.0]], vec!["g".into()]).unwrap();
        assert!(matches!(
            clr_design(&ds, None, false),
            Err(Error::NonPositiveComposition { .. })
        ));
    }

    #[test]
    fn proportion_data_renormalized_after_fill() {
        let ds: SubCompositionalDataset<f64> = SubCompositionalDataset::new(vec![dmatrix![0.0, 0.4, 0.6]], vec!["g".into()]).unwrap();
        let comp = ds.to_compositions(1e-6).unwrap();
        assert!((comp.blocks()[0].sum() - 1.0).abs() < 1e-12);
        assert!(comp.blocks()[0][(0, 0)] > 0.0);
    }

    #[test]
    fn controls_must_match_rows() {
        let err = MultiViewDesign::new(
            vec![dmatrix![1.0; 2.0]],
            Some(dmatrix![1.0]),
            true,
            vec!["g".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
