//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub p: f64,
    pub omega: f64,
    pub dim: usize,
    /// Velocity; a single number is the speed along the first axis.
    pub v: Vec<f64>,
    /// Half width of the box; derived from the run when unset.
    pub l: Option<f64>,
    /// Lattice points per axis; derived from `h` when unset.
    pub n: Option<usize>,
    pub h: f64,
    pub a: f64,
    pub r1: f64,
    pub r2: f64,
    pub cutoff: String,
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    pub big_t0: f64,
    pub tn: f64,
    pub tmax: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<f64>,
    pub m_prime: Option<f64>,
    pub eps: Option<f64>,
    pub tol: f64,
    pub lin_tol: f64,
    pub iters: usize,
    pub seed: u64,
    pub horizon_k: f64,
    pub dt_scale: f64,
    pub alpha_plus: Option<f64>,
    pub search: bool,
    pub log_every: usize,
    pub snapshot_every: usize,
    /// Evolution aborts once ‖u‖_{H¹} exceeds this multiple of its start.
    pub blowup_factor: f64,
    pub probes: usize,
    pub mode_l: f64,
    pub mode_n: usize,
    pub sweep_command: String,
    pub sweep_key: String,
    pub sweep_values: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p: 7.0,
            omega: 1.0,
            dim: 1,
            v: vec![1.0],
            l: None,
            n: None,
            h: 0.02,
            a: 1.0,
            r1: 1.5,
            r2: 3.0,
            cutoff: "quintic".into(),
            dt: 0.0025,
            t0: 0.0,
            t1: 1.0,
            big_t0: 8.0,
            tn: 14.0,
            tmax: None,
            delta: None,
            m: None,
            m_prime: None,
            eps: None,
            tol: 1e-13,
            lin_tol: 1e-12,
            iters: 30,
            seed: 0,
            horizon_k: 12.0,
            dt_scale: 1.0,
            alpha_plus: None,
            search: false,
            log_every: 20,
            snapshot_every: 100,
            blowup_factor: 1e3,
            probes: 100,
            mode_l: 20.0,
            mode_n: 2047,
            sweep_command: "fixed-point".into(),
            sweep_key: "v".into(),
            sweep_values: Vec::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "p", "omega", "dim", "v", "L", "n", "h", "a", "R1", "R2", "cutoff", "dt", "t0", "t1", "T0", "Tn", "Tmax", "delta", "M",
    "Mprime", "eps", "tol", "lin_tol", "iters", "seed", "horizon_k", "dt_scale", "alpha_plus", "search", "log_every",
    "snapshot_every", "blowup_factor", "probes", "mode_L", "mode_n", "sweep_command", "sweep_key", "sweep_values",
];

/// Unknown key or unparsable value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn num<T: std::str::FromStr>(key: &str, val: &str) -> Result<T, ConfigError> {
    val.trim().parse().map_err(|_| ConfigError(format!("invalid value for key '{key}': '{val}'")))
}

fn list(val: &str) -> Vec<String> {
    val.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, val: &str) -> Result<(), ConfigError> {
        let val = val.trim();
        let opt = |v: &str| -> Result<Option<f64>, ConfigError> {
            if v == "auto" || v.is_empty() {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        };
        match key {
            "p" => self.p = num(key, val)?,
            "omega" => self.omega = num(key, val)?,
            "dim" => self.dim = num(key, val)?,
            "v" => self.v = list(val).iter().map(|s| num(key, s)).collect::<Result<_, _>>()?,
            "L" => self.l = opt(val)?,
            "n" => self.n = if val == "auto" { None } else { Some(num(key, val)?) },
            "h" => self.h = num(key, val)?,
            "a" => self.a = num(key, val)?,
            "R1" => self.r1 = num(key, val)?,
            "R2" => self.r2 = num(key, val)?,
            "cutoff" => match val {
                "quintic" | "septic" => self.cutoff = val.to_string(),
                _ => return Err(ConfigError(format!("invalid value for key 'cutoff': '{val}' (quintic | septic)"))),
            },
            "dt" => self.dt = num(key, val)?,
            "t0" => self.t0 = num(key, val)?,
            "t1" => self.t1 = num(key, val)?,
            "T0" => self.big_t0 = num(key, val)?,
            "Tn" => self.tn = num(key, val)?,
            "Tmax" => self.tmax = opt(val)?,
            "delta" => self.delta = opt(val)?,
            "M" => self.m = opt(val)?,
            "Mprime" => self.m_prime = opt(val)?,
            "eps" => self.eps = opt(val)?,
            "tol" => self.tol = num(key, val)?,
            "lin_tol" => self.lin_tol = num(key, val)?,
            "iters" => self.iters = num(key, val)?,
            "seed" => self.seed = num(key, val)?,
            "horizon_k" => self.horizon_k = num(key, val)?,
            "dt_scale" => self.dt_scale = num(key, val)?,
            "alpha_plus" => self.alpha_plus = opt(val)?,
            "search" => self.search = num(key, val)?,
            "log_every" => self.log_every = num(key, val)?,
            "snapshot_every" => self.snapshot_every = num(key, val)?,
            "blowup_factor" => self.blowup_factor = num(key, val)?,
            "probes" => self.probes = num(key, val)?,
            "mode_L" => self.mode_l = num(key, val)?,
            "mode_n" => self.mode_n = num(key, val)?,
            "sweep_command" => self.sweep_command = val.to_string(),
            "sweep_key" => self.sweep_key = val.to_string(),
            "sweep_values" => self.sweep_values = list(val),
            _ => return Err(ConfigError(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Command-line overrides, either `key=value` or `--key value`.
    pub fn apply_args(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            if let Some((k, v)) = a.split_once('=') {
                self.set(k.trim_start_matches('-'), v)?;
                i += 1;
            } else if let Some(k) = a.strip_prefix("--") {
                let v = args.get(i + 1).ok_or_else(|| ConfigError(format!("missing value for key '{k}'")))?;
                self.set(k, v)?;
                i += 2;
            } else {
                return Err(ConfigError(format!("unexpected argument '{a}'")));
            }
        }
        Ok(())
    }

    /// Canonical text form, every key in `KEYS` order.
    pub fn to_text(&self) -> String {
        let f = |x: Option<f64>| x.map_or("auto".to_string(), |v| format!("{v:?}"));
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("p", format!("{:?}", self.p));
        put("omega", format!("{:?}", self.omega));
        put("dim", self.dim.to_string());
        put("v", self.v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","));
        put("L", f(self.l));
        put("n", self.n.map_or("auto".into(), |n| n.to_string()));
        put("h", format!("{:?}", self.h));
        put("a", format!("{:?}", self.a));
        put("R1", format!("{:?}", self.r1));
        put("R2", format!("{:?}", self.r2));
        put("cutoff", self.cutoff.clone());
        put("dt", format!("{:?}", self.dt));
        put("t0", format!("{:?}", self.t0));
        put("t1", format!("{:?}", self.t1));
        put("T0", format!("{:?}", self.big_t0));
        put("Tn", format!("{:?}", self.tn));
        put("Tmax", f(self.tmax));
        put("delta", f(self.delta));
        put("M", f(self.m));
        put("Mprime", f(self.m_prime));
        put("eps", f(self.eps));
        put("tol", format!("{:?}", self.tol));
        put("lin_tol", format!("{:?}", self.lin_tol));
        put("iters", self.iters.to_string());
        put("seed", self.seed.to_string());
        put("horizon_k", format!("{:?}", self.horizon_k));
        put("dt_scale", format!("{:?}", self.dt_scale));
        put("alpha_plus", f(self.alpha_plus));
        put("search", self.search.to_string());
        put("log_every", self.log_every.to_string());
        put("snapshot_every", self.snapshot_every.to_string());
        put("blowup_factor", format!("{:?}", self.blowup_factor));
        put("probes", self.probes.to_string());
        put("mode_L", format!("{:?}", self.mode_l));
        put("mode_n", self.mode_n.to_string());
        put("sweep_command", self.sweep_command.clone());
        put("sweep_key", self.sweep_key.clone());
        put("sweep_values", self.sweep_values.join(","));
        s
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_text().as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn velocity(&self) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (i, x) in self.v.iter().take(3).enumerate() {
            v[i] = *x;
        }
        v
    }
}
