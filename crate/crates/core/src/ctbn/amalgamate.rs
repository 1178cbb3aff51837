//! Flattening a structured model into a single joint-state chain.
//!
//! Off-diagonal entries of the joint matrix are the conditional rates of
//! single-variable changes; entries that would change two or more variables
//! at once stay exactly zero.

use nalgebra::DMatrix;

use super::model::{joint_decode, joint_index, CtbnModel};
use crate::ctmc::IntensityMatrix;
use crate::{Error, Result};

/// Largest joint state space `amalgamate` will materialize.
pub const JOINT_CAP: usize = 4096;

/// Flatten `model` into the joint intensity matrix, refusing joint spaces
/// above [`JOINT_CAP`].
pub fn amalgamate(model: &CtbnModel) -> Result<IntensityMatrix> {
    amalgamate_capped(model, Some(JOINT_CAP))
}

/// Flatten with an explicit cap; `None` removes the guard entirely.
pub fn amalgamate_capped(model: &CtbnModel, cap: Option<usize>) -> Result<IntensityMatrix> {
    let size = model.joint_size().ok_or(Error::StateSpaceCap {
        size: usize::MAX,
        cap: cap.unwrap_or(JOINT_CAP),
    })?;
    if let Some(cap) = cap {
        if size > cap {
            return Err(Error::StateSpaceCap { size, cap });
        }
    }
    let sizes = model.sizes();
    let n_vars = model.n_variables();
    let mut q = DMatrix::zeros(size, size);
    let mut values = vec![0usize; n_vars];
    for x in 0..size {
        joint_decode(x, sizes, &mut values);
        for i in 0..n_vars {
            let m = model.rate_matrix_for(i, &values);
            let xi = values[i];
            for yi in 0..sizes[i] {
                if yi == xi {
                    continue;
                }
                values[i] = yi;
                q[(x, joint_index(&values, sizes))] = m.rate(xi, yi);
                values[i] = xi;
            }
        }
    }
    IntensityMatrix::from_rates(q)
}
