//! The host model: one hidden machine-state chain emitting system calls.
//!
//! A hidden variable H with m states moves by an intensity matrix, and each
//! call name in the vocabulary fires as an instantaneous event at a rate
//! `q_{s|h}` set by the current hidden state. The model converts losslessly
//! to the shared chain-network text format for storage.

use nalgebra::DMatrix;

use crate::ctbn::{Cim, CtbnModel};
use crate::ctmc::IntensityMatrix;
use crate::rng::{log_uniform, substream};
use crate::{Error, Result};

/// The call names every stock model knows, ending with the catch-all symbol
/// that unseen names map to.
pub const OTHER_CALL: &str = "OTHER";

pub fn default_vocabulary() -> Vec<String> {
    [
        "close", "ioctl", "mmap", "open", "fcntl", "stat", "access", "execve", "chdir", "chroot",
        "unlink", "chown", "mkdir", "chmod", OTHER_CALL,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone)]
pub struct SyscallModel {
    vocab: Vec<String>,
    q_h: IntensityMatrix,
    /// rates[(s, h)] = firing rate of call s while the hidden state is h.
    rates: DMatrix<f64>,
}

impl SyscallModel {
    pub fn new(vocab: Vec<String>, q_h: IntensityMatrix, rates: DMatrix<f64>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidModel("empty vocabulary".into()));
        }
        for (i, name) in vocab.iter().enumerate() {
            if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::InvalidModel(format!(
                    "call name {name:?} (entry {i}) must be nonempty without spaces or commas"
                )));
            }
            if vocab[..i].contains(name) {
                return Err(Error::InvalidModel(format!("duplicate call name {name}")));
            }
        }
        if rates.nrows() != vocab.len() || rates.ncols() != q_h.n() {
            return Err(Error::InvalidModel(format!(
                "rate table is {}x{}, expected {} calls x {} hidden states",
                rates.nrows(),
                rates.ncols(),
                vocab.len(),
                q_h.n()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidModel(format!(
                "call rates must be finite and nonnegative, found {r}"
            )));
        }
        Ok(Self { vocab, q_h, rates })
    }

    /// Number of hidden states.
    pub fn m(&self) -> usize {
        self.q_h.n()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn q_h(&self) -> &IntensityMatrix {
        &self.q_h
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn rate(&self, call: usize, h: usize) -> f64 {
        self.rates[(call, h)]
    }

    /// Total call intensity in hidden state h.
    pub fn total_rate(&self, h: usize) -> f64 {
        self.rates.column(h).sum()
    }

    /// Vocabulary index of a call name; unknown names fall to the catch-all
    /// symbol when the vocabulary has one.
    pub fn call_index(&self, name: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|v| v == name)
            .or_else(|| self.vocab.iter().position(|v| v == OTHER_CALL))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown call name {name}")))
    }

    /// The hidden generator with every call intensity folded into the
    /// diagonal: off-diagonals are the hidden transition rates, and each
    /// diagonal loses the total call rate of its state. Rows sum to at most
    /// zero; the deficit is the probability flow into "a call happened".
    pub fn quiet_generator(&self) -> DMatrix<f64> {
        let mut g = self.q_h.matrix().clone();
        for h in 0..self.m() {
            g[(h, h)] -= self.total_rate(h);
        }
        g
    }

    /// As a chain network: H plus one two-state flip variable per call name,
    /// each flipping symmetrically at that call's per-state rate.
    pub fn to_ctbn(&self) -> CtbnModel {
        let m = self.m();
        let mut names = vec!["H".to_string()];
        let mut sizes = vec![m];
        let mut cims = vec![Cim::root(0, self.q_h.clone())];
        for (s, call) in self.vocab.iter().enumerate() {
            names.push(format!("S:{call}"));
            sizes.push(2);
            let mats = (0..m)
                .map(|h| {
                    let r = self.rates[(s, h)];
                    IntensityMatrix::from_rates(DMatrix::from_row_slice(2, 2, &[0.0, r, r, 0.0]))
                        .expect("symmetric 2-state rates are a valid matrix")
                })
                .collect();
            cims.push(Cim::new(s + 1, vec![0], mats));
        }
        CtbnModel::new(names, sizes, cims, None).expect("construction follows the schema")
    }

    pub fn from_ctbn(model: &CtbnModel) -> Result<SyscallModel> {
        let bad = |msg: String| Error::InvalidModel(msg);
        let h_idx = model
            .index_of("H")
            .ok_or_else(|| bad("no variable named H".into()))?;
        if !model.parents(h_idx).is_empty() {
            return Err(bad("H must have no parents".into()));
        }
        let m = model.size(h_idx);
        let q_h = model.cim(h_idx).matrices()[0].clone();
        let mut vocab = Vec::new();
        let mut rows = Vec::new();
        for v in 0..model.n_variables() {
            if v == h_idx {
                continue;
            }
            let name = model.name(v);
            let call = name
                .strip_prefix("S:")
                .ok_or_else(|| bad(format!("unexpected variable {name}")))?;
            if model.size(v) != 2 || model.parents(v) != [h_idx] {
                return Err(bad(format!(
                    "call variable {name} must have two states and H as its only parent"
                )));
            }
            let mut row = Vec::with_capacity(m);
            for (h, mat) in model.cim(v).matrices().iter().enumerate() {
                let up = mat.rate(0, 1);
                let down = mat.rate(1, 0);
                if up != down {
                    return Err(bad(format!(
                        "call variable {name} must flip symmetrically, state {h} has {up} up and {down} down"
                    )));
                }
                row.push(up);
            }
            vocab.push(call.to_string());
            rows.push(row);
        }
        let n = vocab.len();
        let rates = DMatrix::from_fn(n, m, |s, h| rows[s][h]);
        SyscallModel::new(vocab, q_h, rates)
    }

    pub fn to_text(&self) -> String {
        crate::ctbn::write_model(&self.to_ctbn())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<SyscallModel> {
        SyscallModel::from_ctbn(&crate::ctbn::parse_model(text, origin)?)
    }
}

/// Hidden-state transition and call-rate ranges for random initialization:
/// machine state shifts over seconds to minutes, calls fire up to tens per
/// second.
const H_RATES: (f64, f64) = (0.01, 0.2);
const CALL_RATES: (f64, f64) = (0.2, 20.0);

/// A randomly initialized model over the vocabulary, for starting EM.
pub fn build_syscall_model(vocab: Vec<String>, m: usize, seed: u64) -> Result<SyscallModel> {
    if m < 1 {
        return Err(Error::InvalidArgument(
            "need at least one hidden state".into(),
        ));
    }
    let mut rng = substream(seed, "hids.build");
    let q = DMatrix::from_fn(m, m, |x, y| {
        if x == y {
            0.0
        } else {
            log_uniform(&mut rng, H_RATES.0, H_RATES.1)
        }
    });
    let q_h = IntensityMatrix::from_rates(q)?;
    let n = vocab.len();
    let rates = DMatrix::from_fn(n, m, |_, _| log_uniform(&mut rng, CALL_RATES.0, CALL_RATES.1));
    SyscallModel::new(vocab, q_h, rates)
}
