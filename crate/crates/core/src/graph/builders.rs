//! Fixed Kronecker-structured blocks mapping single variables to and from
//! their product space.
//!
//! Product-space symbols are indexed row-major over `(X_1, …, X_D)`: the
//! last variable varies fastest.

use super::SisoBlock;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check(sizes: &[usize], j: usize) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "product-space sizes must be non-empty and positive, got {sizes:?}"
        )));
    }
    if j == 0 || j > sizes.len() {
        return Err(Error::InvalidIndex {
            index: j,
            len: sizes.len(),
        });
    }
    Ok(())
}

/// `P(X_j | X_1…X_D) = 1 ⊗ … ⊗ I_{M_j} ⊗ … ⊗ 1`, a `ΠM × M_j` 0/1 matrix.
/// `j` is 1-based.
pub fn projector_matrix(sizes: &[usize], j: usize) -> Result<Matrix> {
    check(sizes, j)?;
    let m = sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            if i + 1 == j {
                Matrix::identity(size)
            } else {
                Matrix::filled(size, 1, 1.0)
            }
        })
        .reduce(|acc, f| acc.kron(&f))
        .expect("non-empty sizes");
    Ok(m)
}

/// `P((X_1…X_D)^{(j)} | X_j) = (M_j/ΠM) · projectorᵀ`, `M_j × ΠM`.
pub fn expander_matrix(sizes: &[usize], j: usize) -> Result<Matrix> {
    let proj = projector_matrix(sizes, j)?;
    let total: usize = sizes.iter().product();
    Ok(proj.transpose().scale(sizes[j - 1] as f64 / total as f64))
}

pub fn build_projector(sizes: &[usize], j: usize) -> Result<SisoBlock> {
    Ok(SisoBlock {
        name: format!("projector{sizes:?}/{j}"),
        theta: projector_matrix(sizes, j)?,
        trainable: false,
    })
}

pub fn build_expander(sizes: &[usize], j: usize) -> Result<SisoBlock> {
    Ok(SisoBlock {
        name: format!("expander{sizes:?}/{j}"),
        theta: expander_matrix(sizes, j)?,
        trainable: false,
    })
}
