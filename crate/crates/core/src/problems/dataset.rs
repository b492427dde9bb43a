use std::path::Path;

use nalgebra::DVector;

use super::pca::{PcaInstance, Sign};
use crate::matrix_io::load_matrix;
use crate::{Error, Mat, Result};

/// How data rows are split across agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Partition {
    /// Equal consecutive blocks; the last agent also takes the remainder.
    #[default]
    Contiguous,
    /// Row `k` goes to agent `k mod n`.
    RoundRobin,
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub header: bool,
    pub center: bool,
    pub partition: Partition,
    pub weights: DVector<f64>,
    pub sign: Sign,
}

pub fn partition_rows(rows: usize, n: usize, partition: Partition) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Parameter("need at least one agent".into()));
    }
    if n > rows {
        return Err(Error::InsufficientData(format!(
            "{rows} rows cannot be split across {n} agents"
        )));
    }
    Ok(match partition {
        Partition::Contiguous => {
            let base = rows / n;
            (0..n)
                .map(|i| {
                    let end = if i + 1 == n { rows } else { (i + 1) * base };
                    (i * base..end).collect()
                })
                .collect()
        }
        Partition::RoundRobin => (0..n).map(|i| (i..rows).step_by(n).collect()).collect(),
    })
}

/// Splits the rows of `a` across agents and forms `C_i = A_iᵀ A_i`.
pub fn pca_from_data(a: &Mat, n: usize, opts: &DatasetOptions) -> Result<PcaInstance> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dataset".into()));
    }
    let parts = partition_rows(a.nrows(), n, opts.partition)?;
    let mut data = a.clone();
    if opts.center {
        let means = data.row_mean();
        for mut row in data.row_iter_mut() {
            row -= &means;
        }
    }
    let covs = parts
        .iter()
        .map(|rows| {
            let block = data.select_rows(rows.iter());
            block.tr_mul(&block)
        })
        .collect();
    PcaInstance::new(covs, opts.weights.clone(), opts.sign)
}

/// Reads a CSV or DMAT matrix and builds the partitioned PCA instance.
pub fn load_dataset_matrix(path: &Path, n: usize, opts: &DatasetOptions) -> Result<PcaInstance> {
    let a = load_matrix(path, opts.header)?;
    pca_from_data(&a, n, opts)
}
