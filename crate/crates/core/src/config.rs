//! Run configuration: INI sections with `section.key = value` overrides,
//! validated into a `RunConfig` whose canonical JSON hashes to the manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Absorber;
use crate::error::{Error, Result};
use crate::hamiltonian::PotentialShape;
use crate::nonlinearity::NonlinearitySpec;
use crate::probes::ProbeKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub shape: PotentialShape,
    /// None: tune the depth so that exactly one bound state exists.
    pub depth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveSection {
    /// |a| of the branch point the run starts from.
    pub amplitude: f64,
    /// L^2 size of the P_c-projected random perturbation.
    pub perturbation: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub absorber: Absorber,
    pub decompose: bool,
    pub snapshot_times: Vec<f64>,
    /// Fit window; None selects [5, min(0.3 R, t_final)].
    pub window: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub kinds: Vec<ProbeKind>,
    pub samples: usize,
    /// |a| of the frozen branch point the linearization is taken at.
    pub amplitude: f64,
    pub t_final: f64,
    pub spacing: f64,
    pub dt: f64,
    /// Used by the decay probes; boundedness probes always run unabsorbed.
    pub absorber: Absorber,
    pub window: (f64, f64),
    /// Also run each probe with g switched off.
    pub control: bool,
    pub jss_samples: usize,
    pub jss_t_max: f64,
    pub jss_exponents: Vec<f64>,
    pub wave_exponent: f64,
    pub wave_samples: usize,
    pub envelope_rate: f64,
    /// Extra lower exponents for the Fourier finiteness check.
    pub h2_alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    pub nonlinearity: NonlinearitySpec,
    pub branch: BranchConfig,
    pub evolve: EvolveSection,
    pub probes: ProbeSection,
    pub seed: u64,
    /// Where results go; not part of the hashed content.
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig { n: 2048, radius: 120.0 },
            potential: PotentialConfig { shape: PotentialShape::GaussianWell { width: 1.0 }, depth: None },
            nonlinearity: NonlinearitySpec { alpha1: 1.0, alpha2: 1.0, lambda1: 1.0, lambda2: 0.0 },
            branch: BranchConfig { a_min: 1e-3, a_max: 1e-2, count: 12 },
            evolve: EvolveSection {
                amplitude: 1e-2,
                perturbation: 1e-2,
                dt: 0.01,
                t_final: 40.0,
                record_stride: 20,
                absorber: Absorber::Cap { strength: 8.0, onset: 0.75 },
                decompose: true,
                snapshot_times: vec![10.0, 20.0, 30.0],
                window: None,
            },
            probes: ProbeSection {
                kinds: vec![
                    ProbeKind::Weighted { sigma: 2.0 },
                    ProbeKind::LpLp { p: 64.0 },
                    ProbeKind::L2Omega,
                    ProbeKind::L2T,
                    ProbeKind::LqL2 { p: 6.0 },
                ],
                samples: 8,
                amplitude: 1e-2,
                t_final: 40.0,
                spacing: 0.5,
                dt: 0.02,
                absorber: Absorber::Cap { strength: 8.0, onset: 0.75 },
                window: (5.0, 40.0),
                control: true,
                jss_samples: 100,
                jss_t_max: 1.0,
                jss_exponents: vec![2.0, 4.0],
                wave_exponent: 4.0,
                wave_samples: 20,
                envelope_rate: 0.9,
                h2_alphas: vec![0.3, 1.0],
            },
            seed: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Raw key/value pairs per section, in file order of appearance.
pub type RawConfig = BTreeMap<String, BTreeMap<String, String>>;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse INI text into raw sections. Keys outside any section are rejected.
pub fn parse_ini(text: &str) -> Result<RawConfig> {
    let opt = ini::ParseOption { enabled_quote: false, enabled_escape: false, ..Default::default() };
    let doc = ini::Ini::load_from_str_opt(text, opt).map_err(|e| config_err(format!("INI syntax: {e}")))?;
    let mut raw = RawConfig::new();
    for (section, props) in doc.iter() {
        let Some(section) = section else {
            if props.iter().next().is_some() {
                return Err(config_err("keys must appear inside a [section]"));
            }
            continue;
        };
        let entry = raw.entry(section.trim().to_string()).or_default();
        for (k, v) in props.iter() {
            entry.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(raw)
}

/// Parse one `section.key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String, String)> {
    let (lhs, value) = text.split_once('=').ok_or_else(|| config_err(format!("override {text:?} is not key=value")))?;
    let (section, key) =
        lhs.trim().split_once('.').ok_or_else(|| config_err(format!("override key {lhs:?} must be section.key")))?;
    let (section, key) = (section.trim(), key.trim());
    if section.is_empty() || key.is_empty() || key.contains('.') {
        return Err(config_err(format!("override key {lhs:?} must be section.key")));
    }
    Ok((section.to_string(), key.to_string(), value.trim().to_string()))
}

pub fn apply_overrides(raw: &mut RawConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (s, k, v) = parse_override(o)?;
        raw.entry(s).or_default().insert(k, v);
    }
    Ok(())
}

struct Section<'a> {
    name: &'a str,
    map: BTreeMap<String, String>,
}

impl<'a> Section<'a> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            *target =
                v.parse().map_err(|_| config_err(format!("[{}] {key} = {v:?} is not a valid number", self.name)))?;
        }
        Ok(())
    }

    fn flag(&mut self, key: &str, target: &mut bool) -> Result<()> {
        if let Some(v) = self.take(key) {
            *target = match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => true,
                "false" | "no" | "off" | "0" => false,
                _ => return Err(config_err(format!("[{}] {key} = {v:?} is not a boolean", self.name))),
            };
        }
        Ok(())
    }

    fn list(&mut self, key: &str, target: &mut Vec<f64>) -> Result<()> {
        if let Some(v) = self.take(key) {
            *target = parse_list(&v)
                .map_err(|_| config_err(format!("[{}] {key} = {v:?} is not a number list", self.name)))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(config_err(format!("unknown key [{}] {k}", self.name))),
            None => Ok(()),
        }
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn parse_absorber(sec: &mut Section<'_>, current: Absorber) -> Result<Absorber> {
    let (mut strength, mut onset) = match current {
        Absorber::Cap { strength, onset } => (strength, onset),
        Absorber::Off => (8.0, 0.75),
    };
    sec.num("absorber_strength", &mut strength)?;
    sec.num("absorber_onset", &mut onset)?;
    let on = match sec.take("absorber") {
        None => current.is_on(),
        Some(v) => match v.as_str() {
            "off" | "none" => false,
            "cap" | "on" => true,
            _ => return Err(config_err(format!("[{}] absorber = {v:?}; expected off or cap", sec.name))),
        },
    };
    Ok(if on { Absorber::Cap { strength, onset } } else { Absorber::Off })
}

fn parse_kinds(v: &str, sigma: f64, p: f64, lq_p: f64) -> Result<Vec<ProbeKind>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|k| match k {
            "weighted" => Ok(ProbeKind::Weighted { sigma }),
            "lp_lp" => Ok(ProbeKind::LpLp { p }),
            "lq_l2" => Ok(ProbeKind::LqL2 { p: lq_p }),
            "l2_omega" => Ok(ProbeKind::L2Omega),
            "l2_t" => Ok(ProbeKind::L2T),
            _ => Err(config_err(format!("unknown probe kind {k:?}"))),
        })
        .collect()
}

impl RunConfig {
    /// Defaults overlaid with the raw sections, then validated.
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let known = ["grid", "potential", "nonlinearity", "branch", "evolve", "probes", "run"];
        if let Some(s) = raw.keys().find(|s| !known.contains(&s.as_str())) {
            return Err(config_err(format!("unknown section [{s}]")));
        }
        let section = |name: &'static str| Section { name, map: raw.get(name).cloned().unwrap_or_default() };

        let mut s = section("grid");
        s.num("n", &mut cfg.grid.n)?;
        s.num("radius", &mut cfg.grid.radius)?;
        s.finish()?;

        let mut s = section("potential");
        let mut width = match cfg.potential.shape {
            PotentialShape::GaussianWell { width } => width,
            PotentialShape::ExponentialWell { rate } => rate,
        };
        let shape = s.take("shape").unwrap_or_else(|| "gaussian_well".into());
        match shape.as_str() {
            "gaussian_well" => {
                s.num("width", &mut width)?;
                cfg.potential.shape = PotentialShape::GaussianWell { width };
            }
            "exponential_well" => {
                let mut rate = 1.0;
                s.num("rate", &mut rate)?;
                cfg.potential.shape = PotentialShape::ExponentialWell { rate };
            }
            _ => return Err(config_err(format!("unknown potential shape {shape:?}"))),
        }
        if let Some(d) = s.take("depth") {
            cfg.potential.depth = if d == "auto" {
                None
            } else {
                Some(
                    d.parse()
                        .map_err(|_| config_err(format!("[potential] depth = {d:?}; expected auto or a number")))?,
                )
            };
        }
        s.finish()?;

        let mut s = section("nonlinearity");
        let nl = &mut cfg.nonlinearity;
        s.num("alpha1", &mut nl.alpha1)?;
        s.num("alpha2", &mut nl.alpha2)?;
        s.num("lambda1", &mut nl.lambda1)?;
        s.num("lambda2", &mut nl.lambda2)?;
        s.finish()?;

        let mut s = section("branch");
        s.num("a_min", &mut cfg.branch.a_min)?;
        s.num("a_max", &mut cfg.branch.a_max)?;
        s.num("count", &mut cfg.branch.count)?;
        s.finish()?;

        let mut s = section("evolve");
        let e = &mut cfg.evolve;
        s.num("amplitude", &mut e.amplitude)?;
        s.num("perturbation", &mut e.perturbation)?;
        s.num("dt", &mut e.dt)?;
        s.num("t_final", &mut e.t_final)?;
        s.num("record_stride", &mut e.record_stride)?;
        s.flag("decompose", &mut e.decompose)?;
        s.list("snapshot_times", &mut e.snapshot_times)?;
        e.absorber = parse_absorber(&mut s, e.absorber)?;
        if let Some(w) = s.take("window") {
            e.window = if w == "auto" {
                None
            } else {
                let v = parse_list(&w).map_err(|_| config_err(format!("[evolve] window = {w:?}")))?;
                if v.len() != 2 {
                    return Err(config_err("[evolve] window needs two values"));
                }
                Some((v[0], v[1]))
            };
        }
        s.finish()?;

        let mut s = section("probes");
        let p = &mut cfg.probes;
        let (mut sigma, mut pp, mut lq_p) = (2.0, 64.0, 6.0);
        s.num("sigma", &mut sigma)?;
        s.num("p", &mut pp)?;
        s.num("lq_p", &mut lq_p)?;
        let kinds = s.take("kinds").unwrap_or_else(|| "weighted,lp_lp,l2_omega,l2_t,lq_l2".into());
        p.kinds = parse_kinds(&kinds, sigma, pp, lq_p)?;
        s.num("samples", &mut p.samples)?;
        s.num("amplitude", &mut p.amplitude)?;
        s.num("t_final", &mut p.t_final)?;
        s.num("spacing", &mut p.spacing)?;
        s.num("dt", &mut p.dt)?;
        p.absorber = parse_absorber(&mut s, p.absorber)?;
        let mut window = vec![p.window.0, p.window.1];
        s.list("window", &mut window)?;
        if window.len() != 2 {
            return Err(config_err("[probes] window needs two values"));
        }
        p.window = (window[0], window[1]);
        s.flag("control", &mut p.control)?;
        s.num("jss_samples", &mut p.jss_samples)?;
        s.num("jss_t_max", &mut p.jss_t_max)?;
        s.list("jss_exponents", &mut p.jss_exponents)?;
        s.num("wave_exponent", &mut p.wave_exponent)?;
        s.num("wave_samples", &mut p.wave_samples)?;
        s.num("envelope_rate", &mut p.envelope_rate)?;
        s.list("h2_alphas", &mut p.h2_alphas)?;
        s.finish()?;

        let mut s = section("run");
        s.num("seed", &mut cfg.seed)?;
        if let Some(o) = s.take("out") {
            cfg.out = PathBuf::from(o);
        }
        s.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = parse_ini(text)?;
        apply_overrides(&mut raw, overrides)?;
        Self::from_raw(&raw)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{what} must be positive, got {v}")))
            }
        };
        if self.grid.n < 16 {
            return Err(config_err(format!("grid.n must be at least 16, got {}", self.grid.n)));
        }
        pos(self.grid.radius, "grid.radius")?;
        match self.potential.shape {
            PotentialShape::GaussianWell { width } => pos(width, "potential.width")?,
            PotentialShape::ExponentialWell { rate } => pos(rate, "potential.rate")?,
        }
        if let Some(d) = self.potential.depth {
            pos(d, "potential.depth")?;
        }
        let nl = &self.nonlinearity;
        NonlinearitySpec::new(nl.alpha1, nl.alpha2, nl.lambda1, nl.lambda2).map_err(|e| config_err(e.to_string()))?;
        pos(self.branch.a_min, "branch.a_min")?;
        if !(self.branch.a_max > self.branch.a_min) || self.branch.count < 2 {
            return Err(config_err(format!(
                "branch range is empty: a_min = {}, a_max = {}, count = {}",
                self.branch.a_min, self.branch.a_max, self.branch.count
            )));
        }
        let e = &self.evolve;
        pos(e.amplitude, "evolve.amplitude")?;
        if !(e.perturbation >= 0.0) {
            return Err(config_err("evolve.perturbation must be non-negative"));
        }
        pos(e.dt, "evolve.dt")?;
        pos(e.t_final, "evolve.t_final")?;
        if e.record_stride == 0 {
            return Err(config_err("evolve.record_stride must be at least 1"));
        }
        for a in [&e.absorber, &self.probes.absorber] {
            if let Absorber::Cap { strength, onset } = a {
                pos(*strength, "absorber_strength")?;
                if !(*onset >= 0.0 && *onset < 1.0) {
                    return Err(config_err(format!("absorber_onset must lie in [0, 1), got {onset}")));
                }
            }
        }
        if let Some((lo, hi)) = e.window {
            if !(lo < hi) {
                return Err(config_err("evolve.window is empty"));
            }
        }
        let p = &self.probes;
        if p.samples == 0 || p.jss_samples == 0 || p.wave_samples == 0 {
            return Err(config_err("probe sample counts must be positive"));
        }
        pos(p.amplitude, "probes.amplitude")?;
        pos(p.t_final, "probes.t_final")?;
        pos(p.spacing, "probes.spacing")?;
        pos(p.dt, "probes.dt")?;
        pos(p.jss_t_max, "probes.jss_t_max")?;
        pos(p.envelope_rate, "probes.envelope_rate")?;
        if !(p.window.0 < p.window.1) {
            return Err(config_err("probes.window is empty"));
        }
        for &q in p.jss_exponents.iter().chain([&p.wave_exponent]) {
            if !(q >= 1.0) {
                return Err(config_err(format!("Lebesgue exponent {q} must be at least 1")));
            }
        }
        for k in &p.kinds {
            match *k {
                ProbeKind::LpLp { p } | ProbeKind::LqL2 { p } if !(p >= 2.0) => {
                    return Err(config_err(format!("probe exponent {p} must be at least 2")));
                }
                _ => {}
            }
        }
        for &a in &p.h2_alphas {
            if !(a > 0.0 && a < 3.0) {
                return Err(config_err(format!("h2 exponent {a} outside (0, 3)")));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn manifest_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
