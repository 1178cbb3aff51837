//! Network structure: variables, parent sets, and conditional intensity
//! matrices, with the mixed-radix codecs shared by amalgamation, sampling,
//! and learning.

use nalgebra::DVector;
use rand::Rng;

use crate::ctmc::{sample_categorical, IntensityMatrix};
use crate::{Error, Result};

/// Joint index of a full assignment; variable 0 is the least significant
/// digit.
pub fn joint_index(values: &[usize], sizes: &[usize]) -> usize {
    let mut idx = 0;
    for i in (0..values.len()).rev() {
        idx = idx * sizes[i] + values[i];
    }
    idx
}

/// Inverse of `joint_index`, writing one digit per variable into `out`.
pub fn joint_decode(mut idx: usize, sizes: &[usize], out: &mut [usize]) {
    for (slot, &s) in out.iter_mut().zip(sizes) {
        *slot = idx % s;
        idx /= s;
    }
}

/// Parent-instantiation index in declared parent order; the first parent is
/// the most significant digit.
pub fn parent_index(parent_values: &[usize], parent_sizes: &[usize]) -> usize {
    let mut idx = 0;
    for (&v, &s) in parent_values.iter().zip(parent_sizes) {
        idx = idx * s + v;
    }
    idx
}

/// One intensity matrix per full instantiation of the parent set, in
/// mixed-radix instantiation order.
#[derive(Debug, Clone)]
pub struct Cim {
    variable: usize,
    parents: Vec<usize>,
    matrices: Vec<IntensityMatrix>,
}

impl Cim {
    pub fn new(variable: usize, parents: Vec<usize>, matrices: Vec<IntensityMatrix>) -> Self {
        Cim {
            variable,
            parents,
            matrices,
        }
    }

    /// A parentless variable: a single unconditional intensity matrix.
    pub fn root(variable: usize, matrix: IntensityMatrix) -> Self {
        Cim {
            variable,
            parents: Vec::new(),
            matrices: vec![matrix],
        }
    }

    pub fn variable(&self) -> usize {
        self.variable
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn matrices(&self) -> &[IntensityMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, u: usize) -> &IntensityMatrix {
        &self.matrices[u]
    }
}

/// A directed (possibly cyclic) graph of variables, each evolving under the
/// intensity matrix its parents' current values select. The optional initial
/// distribution is factored per variable; absent means uniform.
#[derive(Debug, Clone)]
pub struct CtbnModel {
    names: Vec<String>,
    sizes: Vec<usize>,
    cims: Vec<Cim>,
    initial: Option<Vec<Vec<f64>>>,
}

impl CtbnModel {
    pub fn new(
        names: Vec<String>,
        sizes: Vec<usize>,
        cims: Vec<Cim>,
        initial: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = names.len();
        if sizes.len() != n || cims.len() != n {
            return Err(Error::InvalidModel(format!(
                "{} names, {} sizes, {} conditional matrices",
                n,
                sizes.len(),
                cims.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidModel("model has no variables".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidModel(format!(
                    "variable {i} name {name:?} is empty or contains whitespace"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidModel(format!("duplicate variable name {name:?}")));
            }
        }
        if let Some(&bad) = sizes.iter().find(|&&s| s == 0) {
            return Err(Error::InvalidModel(format!("variable with {bad} states")));
        }
        for (i, cim) in cims.iter().enumerate() {
            if cim.variable != i {
                return Err(Error::InvalidModel(format!(
                    "conditional matrix {i} declares variable {}",
                    cim.variable
                )));
            }
            let mut seen = vec![false; n];
            for &p in &cim.parents {
                if p >= n || p == i || seen[p] {
                    return Err(Error::InvalidModel(format!(
                        "variable {} has an invalid parent list {:?}",
                        names[i], cim.parents
                    )));
                }
                seen[p] = true;
            }
            let n_u: usize = cim.parents.iter().map(|&p| sizes[p]).product();
            if cim.matrices.len() != n_u {
                return Err(Error::InvalidModel(format!(
                    "variable {} has {} matrices for {} parent instantiations",
                    names[i],
                    cim.matrices.len(),
                    n_u
                )));
            }
            if let Some(m) = cim.matrices.iter().find(|m| m.n() != sizes[i]) {
                return Err(Error::InvalidModel(format!(
                    "variable {} has {} states but a {}-state matrix",
                    names[i],
                    sizes[i],
                    m.n()
                )));
            }
        }
        if let Some(dists) = &initial {
            if dists.len() != n {
                return Err(Error::InvalidModel(format!(
                    "initial distribution covers {} of {} variables",
                    dists.len(),
                    n
                )));
            }
            for (i, d) in dists.iter().enumerate() {
                let sum: f64 = d.iter().sum();
                if d.len() != sizes[i] || d.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9
                {
                    return Err(Error::InvalidModel(format!(
                        "initial distribution for variable {} is not a distribution over {} states",
                        names[i], sizes[i]
                    )));
                }
            }
        }
        Ok(CtbnModel {
            names,
            sizes,
            cims,
            initial,
        })
    }

    pub fn n_variables(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Variable id for a name, if present.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn cims(&self) -> &[Cim] {
        &self.cims
    }

    pub fn cim(&self, i: usize) -> &Cim {
        &self.cims[i]
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        self.cims[i].parents()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n_variables())
            .filter(|&c| self.parents(c).contains(&i))
            .collect()
    }

    pub fn initial(&self) -> Option<&Vec<Vec<f64>>> {
        self.initial.as_ref()
    }

    /// Product of state-space sizes, None on overflow.
    pub fn joint_size(&self) -> Option<usize> {
        self.sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
    }

    pub fn parent_sizes(&self, i: usize) -> Vec<usize> {
        self.parents(i).iter().map(|&p| self.sizes[p]).collect()
    }

    /// Parent-instantiation index of variable `i` under a full assignment.
    pub fn parent_index_of(&self, i: usize, values: &[usize]) -> usize {
        let mut idx = 0;
        for &p in self.parents(i) {
            idx = idx * self.sizes[p] + values[p];
        }
        idx
    }

    /// The intensity matrix governing variable `i` under a full assignment.
    pub fn rate_matrix_for(&self, i: usize, values: &[usize]) -> &IntensityMatrix {
        self.cims[i].matrix(self.parent_index_of(i, values))
    }

    /// Initial distribution over joint states: the product of the factored
    /// per-variable distributions, uniform when none was supplied.
    pub fn initial_joint(&self) -> DVector<f64> {
        let size = self
            .joint_size()
            .expect("joint space too large to materialize");
        match &self.initial {
            None => DVector::from_element(size, 1.0 / size as f64),
            Some(dists) => {
                let mut values = vec![0usize; self.n_variables()];
                DVector::from_fn(size, |idx, _| {
                    joint_decode(idx, &self.sizes, &mut values);
                    values
                        .iter()
                        .zip(dists)
                        .map(|(&v, d)| d[v])
                        .product::<f64>()
                })
            }
        }
    }

    /// Draw an initial full assignment from the factored distribution.
    pub fn sample_initial<R: Rng>(&self, rng: &mut R) -> Result<Vec<usize>> {
        match &self.initial {
            None => Ok(self
                .sizes
                .iter()
                .map(|&s| rng.gen_range(0..s))
                .collect()),
            Some(dists) => dists
                .iter()
                .map(|d| sample_categorical(d, rng))
                .collect(),
        }
    }

    /// Same structure with replaced conditional matrices.
    pub fn with_cims(&self, cims: Vec<Cim>) -> Result<CtbnModel> {
        CtbnModel::new(
            self.names.clone(),
            self.sizes.clone(),
            cims,
            self.initial.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sym(n: usize, rate: f64) -> IntensityMatrix {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = rate;
                }
            }
        }
        IntensityMatrix::from_rates(m).unwrap()
    }

    #[test]
    fn joint_codec_round_trips() {
        let sizes = [2usize, 3, 4];
        let mut buf = [0usize; 3];
        for idx in 0..24 {
            joint_decode(idx, &sizes, &mut buf);
            assert!(buf.iter().zip(&sizes).all(|(&v, &s)| v < s));
            assert_eq!(joint_index(&buf, &sizes), idx);
        }
        // Variable 0 is the least significant digit.
        assert_eq!(joint_index(&[1, 0, 0], &sizes), 1);
        assert_eq!(joint_index(&[0, 1, 0], &sizes), 2);
        assert_eq!(joint_index(&[0, 0, 1], &sizes), 6);
    }

    #[test]
    fn parent_index_puts_first_parent_most_significant() {
        assert_eq!(parent_index(&[1, 2], &[2, 3]), 5);
        assert_eq!(parent_index(&[0, 2], &[2, 3]), 2);
        assert_eq!(parent_index(&[], &[]), 0);
    }

    #[test]
    fn model_validation_checks_matrix_counts() {
        let names = vec!["A".to_string(), "B".to_string()];
        let sizes = vec![2, 2];
        // B conditioned on A needs 2 matrices, give it 1.
        let cims = vec![
            Cim::root(0, sym(2, 1.0)),
            Cim::new(1, vec![0], vec![sym(2, 1.0)]),
        ];
        assert!(CtbnModel::new(names, sizes, cims, None).is_err());
    }

    #[test]
    fn model_accessors_cover_structure() {
        let names = vec!["A".to_string(), "B".to_string()];
        let sizes = vec![2, 3];
        let cims = vec![
            Cim::root(0, sym(2, 0.5)),
            Cim::new(1, vec![0], vec![sym(3, 1.0), sym(3, 2.0)]),
        ];
        let m = CtbnModel::new(names, sizes, cims, None).unwrap();
        assert_eq!(m.joint_size(), Some(6));
        assert_eq!(m.children(0), vec![1]);
        assert_eq!(m.parent_index_of(1, &[1, 2]), 1);
        assert_eq!(m.rate_matrix_for(1, &[1, 0]).rate(0, 1), 2.0);
        let pi = m.initial_joint();
        assert!((pi.sum() - 1.0).abs() < 1e-12);
        assert!((pi[0] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn factored_initial_multiplies_out() {
        let names = vec!["A".to_string(), "B".to_string()];
        let sizes = vec![2, 2];
        let cims = vec![Cim::root(0, sym(2, 1.0)), Cim::root(1, sym(2, 1.0))];
        let initial = Some(vec![vec![0.25, 0.75], vec![0.1, 0.9]]);
        let m = CtbnModel::new(names, sizes, cims, initial).unwrap();
        let pi = m.initial_joint();
        // Index 3 = (A=1, B=1).
        assert!((pi[3] - 0.75 * 0.9).abs() < 1e-12);
        assert!((pi.sum() - 1.0).abs() < 1e-12);
    }
}
