//! Run configuration: defaults, a key = value file grouped in [sections],
//! and flag overrides. The effective settings echo in one canonical form so
//! a single hash names the whole setup of a run.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Scoring window length in seconds.
    pub window_seconds: f64,
    pub particles: usize,
    pub n_g: usize,
    pub n_h: usize,
    /// Stochastic EM sweeps when fitting the traffic model.
    pub nids_iterations: usize,
    /// Seconds between particle resampling points.
    pub resample_every: f64,
    /// The busiest `ports` ports get their own submodel; the rest share one.
    pub ports: usize,
    /// Hidden states of the system call model.
    pub m: usize,
    /// System call clock resolution in seconds.
    pub resolution_seconds: f64,
    pub hids_iterations: usize,
    pub hids_rel_tol: f64,
    /// Call-window length of the novelty baseline.
    pub stide_k: usize,
    /// Locality frame of the novelty baseline.
    pub stide_frame: usize,
    /// Fraction of a trace an injected anomaly occupies.
    pub alpha: f64,
    /// Anomaly speed scale; event gaps stretch by 1/beta.
    pub beta: f64,
    pub horizon_seconds: f64,
    pub processes: usize,
    pub mean_horizon_seconds: f64,
    /// Segment length for host identification.
    pub segment_seconds: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window_seconds: 50.0,
            particles: 100,
            n_g: 4,
            n_h: 8,
            nids_iterations: 10,
            resample_every: 50.0,
            ports: 9,
            m: 2,
            resolution_seconds: 0.01,
            hids_iterations: 50,
            hids_rel_tol: 1e-8,
            stide_k: 5,
            stide_frame: 50,
            alpha: 0.02,
            beta: 0.01,
            horizon_seconds: 7200.0,
            processes: 40,
            mean_horizon_seconds: 120.0,
            segment_seconds: 15.0,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with the file at `path` when one is given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Parse a configuration file on top of the defaults. A `[manifest]`
    /// section is ignored wholesale, so a run's manifest doubles as the
    /// configuration that reproduces it.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            if section == "manifest" {
                continue;
            }
            let at = |msg: String| CliError::Input(format!("{origin}:{}: {msg}", idx + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            cfg.set(&section, key.trim(), value.trim()).map_err(at)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad numeric value {value:?}"))
        }
        match (section, key) {
            ("run", "seed") => self.seed = num(value)?,
            ("nids", "window_seconds") => self.window_seconds = num(value)?,
            ("nids", "particles") => self.particles = num(value)?,
            ("nids", "n_g") => self.n_g = num(value)?,
            ("nids", "n_h") => self.n_h = num(value)?,
            ("nids", "iterations") => self.nids_iterations = num(value)?,
            ("nids", "resample_every") => self.resample_every = num(value)?,
            ("nids", "ports") => self.ports = num(value)?,
            ("hids", "m") => self.m = num(value)?,
            ("hids", "resolution_seconds") => self.resolution_seconds = num(value)?,
            ("hids", "iterations") => self.hids_iterations = num(value)?,
            ("hids", "rel_tol") => self.hids_rel_tol = num(value)?,
            ("stide", "k") => self.stide_k = num(value)?,
            ("stide", "frame") => self.stide_frame = num(value)?,
            ("synth", "alpha") => self.alpha = num(value)?,
            ("synth", "beta") => self.beta = num(value)?,
            ("synth", "horizon_seconds") => self.horizon_seconds = num(value)?,
            ("synth", "processes") => self.processes = num(value)?,
            ("synth", "mean_horizon_seconds") => self.mean_horizon_seconds = num(value)?,
            ("eval", "segment_seconds") => self.segment_seconds = num(value)?,
            _ => return Err(format!("unknown setting [{section}] {key}")),
        }
        Ok(())
    }

    /// Reject settings no pipeline can run with. Deeper structural checks
    /// (even state counts, cardinality caps) belong to the model builders.
    pub fn validate(&self) -> Result<(), CliError> {
        let floats = [
            ("nids.window_seconds", self.window_seconds),
            ("nids.resample_every", self.resample_every),
            ("hids.resolution_seconds", self.resolution_seconds),
            ("hids.rel_tol", self.hids_rel_tol),
            ("synth.alpha", self.alpha),
            ("synth.beta", self.beta),
            ("synth.horizon_seconds", self.horizon_seconds),
            ("synth.mean_horizon_seconds", self.mean_horizon_seconds),
            ("eval.segment_seconds", self.segment_seconds),
        ];
        for (name, v) in floats {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Input(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("nids.particles", self.particles),
            ("nids.n_g", self.n_g),
            ("nids.n_h", self.n_h),
            ("nids.iterations", self.nids_iterations),
            ("nids.ports", self.ports),
            ("hids.m", self.m),
            ("hids.iterations", self.hids_iterations),
            ("stide.k", self.stide_k),
            ("stide.frame", self.stide_frame),
            ("synth.processes", self.processes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CliError::Input(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("synth.alpha", self.alpha), ("synth.beta", self.beta)] {
            if v > 1.0 {
                return Err(CliError::Input(format!("{name} must be at most 1, got {v}")));
            }
        }
        Ok(())
    }

    /// Canonical echo: fixed section order, keys alphabetical, floats in
    /// shortest round-trip form. `parse(echo()) == self` always holds.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "[run]\nseed = {}\n\n", self.seed);
        let _ = write!(
            s,
            "[nids]\niterations = {}\nn_g = {}\nn_h = {}\nparticles = {}\nports = {}\nresample_every = {:?}\nwindow_seconds = {:?}\n\n",
            self.nids_iterations,
            self.n_g,
            self.n_h,
            self.particles,
            self.ports,
            self.resample_every,
            self.window_seconds,
        );
        let _ = write!(
            s,
            "[hids]\niterations = {}\nm = {}\nrel_tol = {:?}\nresolution_seconds = {:?}\n\n",
            self.hids_iterations, self.m, self.hids_rel_tol, self.resolution_seconds,
        );
        let _ = write!(s, "[stide]\nframe = {}\nk = {}\n\n", self.stide_frame, self.stide_k);
        let _ = write!(
            s,
            "[synth]\nalpha = {:?}\nbeta = {:?}\nhorizon_seconds = {:?}\nmean_horizon_seconds = {:?}\nprocesses = {}\n\n",
            self.alpha, self.beta, self.horizon_seconds, self.mean_horizon_seconds, self.processes,
        );
        let _ = write!(s, "[eval]\nsegment_seconds = {:?}\n", self.segment_seconds);
        s
    }
}
