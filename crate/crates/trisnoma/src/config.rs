//! Flat `key = value` scenario files.
//!
//! One key per line, `#` starts a comment. Every key must be present; the
//! literal path `defaults` selects the built-in values instead of a file.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trisnoma_core::channel::{GeometryParams, SPEED_OF_LIGHT_M_S};
use trisnoma_core::optimize::Scenario;
use trisnoma_core::power::PowerConstraints;
use trisnoma_core::rate::NoisePower;

/// Name accepted by `--config` for the built-in defaults.
pub const DEFAULTS_NAME: &str = "defaults";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub m_elements: usize,
    pub sigma_sq: f64,
    pub p_max: f64,
    pub i_th: f64,
    pub r_min: f64,
    pub f_c_hz: f64,
    pub d0_m: f64,
    /// Path gains of users `k`, `j` and the primary receiver `l`.
    pub path_gain: [f64; 3],
    pub aod_theta: [f64; 3],
    pub aod_phi: [f64; 3],
    pub doppler_psi: f64,
    pub delta_step: f64,
    pub rand_trials: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let f_c = 2.0e9;
        Self {
            m_elements: 10,
            sigma_sq: 1e-7,
            p_max: 1.0,
            i_th: 2.0,
            r_min: 0.1,
            f_c_hz: f_c,
            d0_m: SPEED_OF_LIGHT_M_S / (2.0 * f_c),
            path_gain: [1e-3, 5e-4, 0.3],
            aod_theta: [0.4, 1.1, 0.8],
            aod_phi: [0.3, 2.0, 4.0],
            doppler_psi: 0.0,
            delta_step: 0.05,
            rand_trials: 200,
            seed: 1,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "m_elements",
    "sigma_sq",
    "p_max",
    "i_th",
    "r_min",
    "f_c_hz",
    "d0_m",
    "path_gain_k",
    "path_gain_j",
    "path_gain_l",
    "aod_theta_k",
    "aod_theta_j",
    "aod_theta_l",
    "aod_phi_k",
    "aod_phi_j",
    "aod_phi_l",
    "doppler_psi",
    "delta_step",
    "rand_trials",
    "seed",
];

const SUFFIXES: [&str; 3] = ["k", "j", "l"];

impl Config {
    /// Reads a config file, or the defaults for [`DEFAULTS_NAME`].
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if path.as_os_str() == DEFAULTS_NAME && !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let key = e
                .span()
                .and_then(|span| key_at(text, span.start))
                .unwrap_or_else(|| "<syntax>".into());
            ConfigError::new(key, e.message().trim().to_string())
        })?;
        if let Some(bad) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::new(bad.as_str(), "unknown key"));
        }
        let real = |key: &str| -> Result<f64, ConfigError> {
            match table.get(key) {
                None => Err(ConfigError::new(key, "missing")),
                Some(toml::Value::Float(x)) => Ok(*x),
                Some(toml::Value::Integer(i)) => Ok(*i as f64),
                Some(_) => Err(ConfigError::new(key, "expected a number")),
            }
        };
        let count = |key: &str| -> Result<i64, ConfigError> {
            match table.get(key) {
                None => Err(ConfigError::new(key, "missing")),
                Some(toml::Value::Integer(i)) => Ok(*i),
                Some(_) => Err(ConfigError::new(key, "expected an integer")),
            }
        };
        let triple = |prefix: &str| -> Result<[f64; 3], ConfigError> {
            let mut out = [0.0; 3];
            for (o, s) in out.iter_mut().zip(SUFFIXES) {
                *o = real(&format!("{prefix}_{s}"))?;
            }
            Ok(out)
        };
        let m = count("m_elements")?;
        let trials = count("rand_trials")?;
        let seed = count("seed")?;
        let cfg = Self {
            m_elements: usize::try_from(m)
                .map_err(|_| ConfigError::new("m_elements", "must be at least 1"))?,
            sigma_sq: real("sigma_sq")?,
            p_max: real("p_max")?,
            i_th: real("i_th")?,
            r_min: real("r_min")?,
            f_c_hz: real("f_c_hz")?,
            d0_m: real("d0_m")?,
            path_gain: triple("path_gain")?,
            aod_theta: triple("aod_theta")?,
            aod_phi: triple("aod_phi")?,
            doppler_psi: real("doppler_psi")?,
            delta_step: real("delta_step")?,
            rand_trials: usize::try_from(trials)
                .map_err(|_| ConfigError::new("rand_trials", "must be at least 1"))?,
            seed: u64::try_from(seed)
                .map_err(|_| ConfigError::new("seed", "must be nonnegative"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks, each naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::new(key, msg))
            }
        };
        check(self.m_elements >= 1, "m_elements", "must be at least 1")?;
        check(positive(self.sigma_sq), "sigma_sq", "must be positive and finite")?;
        check(positive(self.p_max), "p_max", "must be positive and finite")?;
        check(positive(self.i_th), "i_th", "must be positive and finite")?;
        check(
            self.r_min >= 0.0 && self.r_min.is_finite(),
            "r_min",
            "must be nonnegative and finite",
        )?;
        check(positive(self.f_c_hz), "f_c_hz", "must be positive and finite")?;
        check(positive(self.d0_m), "d0_m", "must be positive and finite")?;
        for (i, s) in SUFFIXES.iter().enumerate() {
            check(
                self.path_gain[i] >= 0.0 && self.path_gain[i].is_finite(),
                &format!("path_gain_{s}"),
                "must be nonnegative and finite",
            )?;
            check(self.aod_theta[i].is_finite(), &format!("aod_theta_{s}"), "must be finite")?;
            check(self.aod_phi[i].is_finite(), &format!("aod_phi_{s}"), "must be finite")?;
        }
        check(self.doppler_psi.is_finite(), "doppler_psi", "must be finite")?;
        check(positive(self.delta_step), "delta_step", "must be positive and finite")?;
        check(self.rand_trials >= 1, "rand_trials", "must be at least 1")?;
        Ok(())
    }

    /// Writes every key, in the canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("m_elements", self.m_elements.to_string());
        put("sigma_sq", float(self.sigma_sq));
        put("p_max", float(self.p_max));
        put("i_th", float(self.i_th));
        put("r_min", float(self.r_min));
        put("f_c_hz", float(self.f_c_hz));
        put("d0_m", float(self.d0_m));
        for (i, s) in SUFFIXES.iter().enumerate() {
            put(&format!("path_gain_{s}"), float(self.path_gain[i]));
        }
        for (i, s) in SUFFIXES.iter().enumerate() {
            put(&format!("aod_theta_{s}"), float(self.aod_theta[i]));
        }
        for (i, s) in SUFFIXES.iter().enumerate() {
            put(&format!("aod_phi_{s}"), float(self.aod_phi[i]));
        }
        put("doppler_psi", float(self.doppler_psi));
        put("delta_step", float(self.delta_step));
        put("rand_trials", self.rand_trials.to_string());
        put("seed", self.seed.to_string());
        out
    }

    pub fn geometry(&self, index: usize) -> GeometryParams {
        GeometryParams {
            carrier_frequency_hz: self.f_c_hz,
            element_spacing_m: self.d0_m,
            speed_of_light_m_s: SPEED_OF_LIGHT_M_S,
            vertical_aod_rad: self.aod_theta[index],
            horizontal_aod_rad: self.aod_phi[index],
            doppler_shift: self.doppler_psi,
            path_gain: self.path_gain[index],
        }
    }

    /// Copy with angles of departure drawn from `seed`: vertical uniform on
    /// `[0, pi/2)`, horizontal uniform on `[0, 2 pi)`.
    pub fn with_random_aods(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for i in 0..3 {
            out.aod_theta[i] = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            out.aod_phi[i] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        out
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let g = [self.geometry(0), self.geometry(1), self.geometry(2)];
        let noise =
            NoisePower::new(self.sigma_sq).map_err(|e| ConfigError::new("sigma_sq", e.to_string()))?;
        let cons = PowerConstraints::new(self.p_max, self.i_th, self.r_min)
            .map_err(|e| ConfigError::new("p_max", e.to_string()))?;
        let mut s = Scenario::from_geometry(self.m_elements, [&g[0], &g[1], &g[2]], noise, cons, self.seed)
            .map_err(|e| ConfigError::new("f_c_hz", e.to_string()))?;
        s.dual_step = self.delta_step;
        s.phase.trials = self.rand_trials;
        Ok(s)
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Keeps a decimal point or exponent so the value reads back as a float.
fn float(x: f64) -> String {
    format!("{x:?}")
}

/// Key on the line containing byte offset `at`.
fn key_at(text: &str, at: usize) -> Option<String> {
    let start = text[..at.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    (!key.is_empty()).then(|| key.to_string())
}
