//! The small text formats the commands exchange: window and process score
//! tables, ground truth intervals, ROC points, and confusion matrices.
//! Everything is comma-separated with a header line; `#` lines are comments.

use std::fmt::Write as _;

use ctids_core::nids::WindowScore;
use ctids_core::synth::GroundTruth;

use crate::CliError;

pub const HORIZON_COMMENT: &str = "# horizon_seconds=";
pub const TRUTH_HEADER: &str = "start_seconds,end_seconds";
pub const HIDS_SCORE_COLUMN: &str = "log_likelihood";
pub const STIDE_SCORE_COLUMN: &str = "mismatch_count";
pub const BASELINE_SCORE_COLUMN: &str = "connection_opens";

/// Window score table. Skipped (event-free) windows are written too; their
/// zero event count is what downstream evaluation keys on.
pub fn write_window_scores(scores: &[WindowScore], score_column: &str) -> String {
    let mut out = format!("window_start_seconds,window_end_seconds,event_count,{score_column}\n");
    for w in scores {
        let _ = write!(
            out,
            "{:?},{:?},{},{:?}\n",
            w.start,
            w.start + w.length,
            w.events,
            w.loglik
        );
    }
    out
}

pub fn write_truth(truth: &GroundTruth, horizon: f64) -> String {
    let mut out = format!("{HORIZON_COMMENT}{horizon:?}\n{TRUTH_HEADER}\n");
    for &(s, e) in truth.intervals() {
        let _ = write!(out, "{s:?},{e:?}\n");
    }
    out
}

pub fn parse_truth(text: &str, origin: &str) -> Result<GroundTruth, CliError> {
    let mut horizon: Option<f64> = None;
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix(HORIZON_COMMENT) {
            horizon = Some(rest.trim().parse().map_err(|_| {
                CliError::Input(format!("{origin}: bad horizon value {rest:?}"))
            })?);
        }
    }
    let horizon = horizon.ok_or_else(|| {
        CliError::Input(format!("{origin}: missing the {HORIZON_COMMENT:?} comment"))
    })?;
    let table = Table::parse(text, origin)?;
    if table.columns != ["start_seconds", "end_seconds"] {
        return Err(CliError::Input(format!(
            "{origin}: expected header {TRUTH_HEADER:?}"
        )));
    }
    let mut intervals = Vec::new();
    for row in 0..table.rows.len() {
        intervals.push((table.f64_at(row, 0)?, table.f64_at(row, 1)?));
    }
    GroundTruth::new(intervals, horizon).map_err(CliError::from)
}

/// A parsed comma-separated table: a header naming the columns, then rows.
pub struct Table {
    origin: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, origin: &str) -> Result<Table, CliError> {
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            match &columns {
                None => columns = Some(fields),
                Some(cols) => {
                    if fields.len() != cols.len() {
                        return Err(CliError::Input(format!(
                            "{origin}:{}: {} fields under a {}-column header",
                            idx + 1,
                            fields.len(),
                            cols.len()
                        )));
                    }
                    rows.push(fields);
                }
            }
        }
        match columns {
            Some(columns) => Ok(Table {
                origin: origin.to_string(),
                columns,
                rows,
            }),
            None => Err(CliError::Input(format!("{origin}: no header line"))),
        }
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            CliError::Input(format!(
                "{}: no column {name:?}; have {}",
                self.origin,
                self.columns.join(", ")
            ))
        })
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64, CliError> {
        let raw = &self.rows[row][col];
        raw.parse().map_err(|_| {
            CliError::Input(format!(
                "{}: row {}: bad number {raw:?} in column {:?}",
                self.origin,
                row + 1,
                self.columns[col]
            ))
        })
    }
}
