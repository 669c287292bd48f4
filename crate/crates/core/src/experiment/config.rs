//! Flat `key = value` configuration with dotted keys.
//!
//! Lines are `key = value`; `#` starts a comment. A scenario's bundled
//! defaults are overlaid by the user file. Setting a selector key
//! (`state.kind`, `partner.kind`, `potential.kind`, `model.variant`) in the
//! user file drops the bundled keys under that prefix first. Every key must be
//! consumed by the typed reader, so misspelt keys are rejected.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::Serialize;

use crate::eisenhart::{EisenhartOptions, DEFAULT_S_POINTS};
use crate::error::{config, Result};
use crate::fd::Stencil;
use crate::fields::{StateSpec, Weight};
use crate::flow::{EvalOptions, FlowModel, FlowVariant, DEFAULT_FLOOR};
use crate::grid::{Axis, SpatialGrid, UnitSystem};
use crate::lagrangian::PropagationOptions;
use crate::potential::Potential;

const SELECTORS: [(&str, &str); 4] = [
    ("state.kind", "state."),
    ("partner.kind", "partner."),
    ("potential.kind", "potential."),
    ("model.variant", "model."),
];

pub type ConfigMap = BTreeMap<String, String>;

/// Parses `key = value` lines. Duplicate keys and malformed lines are errors.
pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut out = ConfigMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return config(format!("line {}: expected `key = value`, got `{line}`", n + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        let valid = !k.is_empty()
            && k.split('.').all(|p| !p.is_empty())
            && k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.');
        if !valid {
            return config(format!("line {}: invalid key `{k}`", n + 1));
        }
        if v.is_empty() {
            return config(format!("line {}: key `{k}` has no value", n + 1));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return config(format!("line {}: duplicate key `{k}`", n + 1));
        }
    }
    Ok(out)
}

/// `base` overlaid by `user`, with selector-aware pruning.
pub fn overlay(base: &ConfigMap, user: &ConfigMap) -> ConfigMap {
    let mut out = base.clone();
    for (sel, prefix) in SELECTORS {
        if user.contains_key(sel) {
            out.retain(|k, _| !k.starts_with(prefix));
        }
    }
    for (k, v) in user {
        out.insert(k.clone(), v.clone());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => config(format!("format must be csv or json, got `{s}`")),
        }
    }
}

/// Typed view of one experiment's effective configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub state: StateSpec,
    /// Second state for two-particle scenarios.
    pub partner: Option<StateSpec>,
    pub model: FlowModel,
    pub grid: SpatialGrid,
    pub units: UnitSystem,
    pub potential: Potential,
    pub t_end: f64,
    pub dt: f64,
    pub propagation: PropagationOptions,
    pub s_points: usize,
    pub s_shift: f64,
    /// Scenario-specific numbers (`<experiment>.<name>` keys).
    pub params: BTreeMap<String, f64>,
    pub out_dir: PathBuf,
    pub format: Format,
    /// Every n-th recorded slice goes to the data files.
    pub output_stride: usize,
    /// The effective key/value pairs, echoed in reports.
    pub echo: ConfigMap,
}

impl ExperimentConfig {
    pub fn eisenhart_options(&self) -> EisenhartOptions {
        EisenhartOptions {
            base: self.propagation.clone(),
            s_points: self.s_points,
            s_shift: self.s_shift,
        }
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }
}

struct Reader<'a> {
    map: &'a ConfigMap,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        let v = self.map.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn str_or(&self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => config(format!("`{key}` must be a finite number, got `{v}`")),
            },
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.map_or_else(|| config(format!("missing key `{key}`")), Ok)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().or_else(|_| config(format!("`{key}` must be a non-negative integer, got `{v}`"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => config(format!("`{key}` must be true or false, got `{v}`")),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let Some(v) = self.raw(key) else {
            return config(format!("missing key `{key}`"));
        };
        v.split(',')
            .map(|p| match p.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => config(format!("`{key}` must be a comma-separated list of numbers, got `{v}`")),
            })
            .collect()
    }

    fn leftover(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.map.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

fn read_state(r: &Reader, prefix: &str) -> Result<StateSpec> {
    let key = |name: &str| format!("{prefix}.{name}");
    let kind = r.raw(&key("kind")).ok_or_else(|| crate::error::Error::Config(format!("missing key `{prefix}.kind`")))?;
    let spec = match kind {
        "plane_wave" => StateSpec::PlaneWave { k: r.f64(&key("k"))? },
        "gaussian" => StateSpec::Gaussian {
            center: r.f64_or(&key("center"), 0.0)?,
            width: r.f64(&key("width"))?,
            k: r.f64_or(&key("k"), 0.0)?,
        },
        "gaussian_tanh_phase" => StateSpec::GaussianTanhPhase {
            center: r.f64_or(&key("center"), 0.0)?,
            width: r.f64(&key("width"))?,
            a: r.f64(&key("a"))?,
            b: r.f64(&key("b"))?,
            sigma_s: r.f64_or(&key("sigma_s"), 1.0)?,
        },
        "coherent_state" => StateSpec::CoherentState {
            omega: r.f64(&key("omega"))?,
            x0: r.f64(&key("x0"))?,
        },
        "superposition" => {
            let n = r.usize_or(&key("terms"), 0)?;
            if n == 0 {
                return config(format!("`{prefix}.terms` must name at least one term"));
            }
            let mut terms = Vec::with_capacity(n);
            for i in 0..n {
                let p = format!("{prefix}.term{i}");
                let w = Weight {
                    re: r.f64_or(&format!("{p}.re"), 1.0)?,
                    im: r.f64_or(&format!("{p}.im"), 0.0)?,
                };
                terms.push((w, read_state(r, &p)?));
            }
            StateSpec::Superposition { terms }
        }
        other => return config(format!("unknown state kind `{other}`")),
    };
    spec.validate()?;
    Ok(spec)
}

fn read_potential(r: &Reader) -> Result<Potential> {
    match r.str_or("potential.kind", "zero") {
        "zero" => Ok(Potential::Zero),
        "constant" => Potential::constant(r.f64("potential.value")?),
        "harmonic" => Potential::harmonic(r.f64("potential.omega")?),
        "tabulated" => Potential::tabulated(r.list("potential.xs")?, r.list("potential.values")?),
        other => config(format!("unknown potential kind `{other}`")),
    }
}

fn read_model(r: &Reader, potential: &Potential) -> Result<FlowModel> {
    let stencil = match r.str_or("model.stencil", "fourth") {
        "second" => Stencil::Second,
        "fourth" => Stencil::Fourth,
        other => return config(format!("model.stencil must be second or fourth, got `{other}`")),
    };
    let options = EvalOptions {
        floor: r.f64_or("model.floor", DEFAULT_FLOOR)?,
        stencil,
    };
    let variant = match r.str_or("model.variant", "standard") {
        "standard" => FlowVariant::Standard,
        "polar" => FlowVariant::Polar,
        "eisenhart" => FlowVariant::Eisenhart {
            potential: potential.clone(),
        },
        "spin_augmented" => FlowVariant::SpinAugmented {
            w1: [0.0, 0.0, r.f64_or("model.w1", 0.0)?],
            w2: [0.0, 0.0, r.f64_or("model.w2", 0.0)?],
        },
        "dbb_hybrid" => FlowVariant::DbbHybrid,
        "linear_combo" => FlowVariant::LinearCombo {
            alpha: r.f64("model.alpha")?,
            beta: r.f64("model.beta")?,
        },
        other => return config(format!("unknown model variant `{other}`")),
    };
    FlowModel::with_options(variant, options)
}

fn read_grid(r: &Reader) -> Result<SpatialGrid> {
    let x = Axis::new(
        r.f64_or("grid.min", -20.0)?,
        r.f64_or("grid.max", 20.0)?,
        r.usize_or("grid.n", 4001)?,
        r.bool_or("grid.periodic", false)?,
    )?;
    if !r.has("grid.y_n") {
        return SpatialGrid::from_axes(vec![x]);
    }
    let y = Axis::new(
        r.f64_or("grid.y_min", -5.0)?,
        r.f64_or("grid.y_max", 5.0)?,
        r.usize_or("grid.y_n", 0)?,
        r.bool_or("grid.y_periodic", false)?,
    )?;
    SpatialGrid::from_axes(vec![x, y])
}

fn read_propagation(r: &Reader) -> Result<PropagationOptions> {
    let d = PropagationOptions::default();
    let o = PropagationOptions {
        dt_init: r.f64_or("propagation.dt_init", d.dt_init)?,
        dt_min: r.f64_or("propagation.dt_min", d.dt_min)?,
        tolerance: r.f64_or("propagation.tolerance", d.tolerance)?,
        floor: r.f64_or("propagation.floor", d.floor)?,
        max_time: r.f64_or("time.t_end", d.max_time)?,
        n_labels: r.usize_or("propagation.n_labels", d.n_labels)?,
        window: (
            r.f64_or("propagation.window_min", d.window.0)?,
            r.f64_or("propagation.window_max", d.window.1)?,
        ),
        max_steps: r.usize_or("propagation.max_steps", d.max_steps)?,
        record_history: r.bool_or("propagation.history", false)?,
    };
    o.validate()?;
    Ok(o)
}

/// Builds the typed configuration from an effective key map. `params` lists
/// the scenario-specific keys (without the experiment prefix) with defaults.
pub fn build_config(map: &ConfigMap, params: &[(&str, f64)]) -> Result<ExperimentConfig> {
    let r = Reader {
        map,
        used: RefCell::new(BTreeSet::new()),
    };
    let experiment = r.raw("experiment").ok_or_else(|| crate::error::Error::Config("missing key `experiment`".into()))?.to_string();
    let units = UnitSystem::new(r.f64_or("units.hbar", 1.0)?, r.f64_or("units.mass", 1.0)?)?;
    let state = read_state(&r, "state")?;
    let partner = if r.has("partner.kind") { Some(read_state(&r, "partner")?) } else { None };
    let potential = read_potential(&r)?;
    let model = read_model(&r, &potential)?;
    let grid = read_grid(&r)?;
    let t_end = r.f64_or("time.t_end", 0.2)?;
    let dt = r.f64_or("time.dt", 5e-4)?;
    if !(t_end > 0.0 && dt > 0.0) {
        return config("time.t_end and time.dt must be positive");
    }
    let propagation = read_propagation(&r)?;
    let s_points = r.usize_or("eisenhart.s_points", DEFAULT_S_POINTS)?;
    let s_shift = r.f64_or("eisenhart.s_shift", 0.0)?;
    let mut p = BTreeMap::new();
    for (name, default) in params {
        p.insert(name.to_string(), r.f64_or(&format!("{experiment}.{name}"), *default)?);
    }
    let out_dir = PathBuf::from(r.str_or("out_dir", "biflow-out"));
    let format = Format::parse(r.str_or("format", "json"))?;
    let output_stride = r.usize_or("output.stride", 1)?.max(1);
    let left = r.leftover();
    if !left.is_empty() {
        return config(format!("unrecognised configuration keys: {}", left.join(", ")));
    }
    Ok(ExperimentConfig {
        experiment,
        state,
        partner,
        model,
        grid,
        units,
        potential,
        t_end,
        dt,
        propagation,
        s_points,
        s_shift,
        params: p,
        out_dir,
        format,
        output_stride,
        echo: map.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_duplicates() {
        let m = parse_config("# head\nstate.kind = plane_wave  # trailing\n\nstate.k=2\n").unwrap();
        assert_eq!(m["state.kind"], "plane_wave");
        assert_eq!(m["state.k"], "2");
        assert!(parse_config("a = 1\na = 2").is_err());
        assert!(parse_config("novalue").is_err());
        assert!(parse_config("Bad.Key = 1").is_err());
    }

    #[test]
    fn selector_drops_bundled_prefix() {
        let base = parse_config("state.kind = gaussian\nstate.width = 2\nstate.center = 1").unwrap();
        let user = parse_config("state.kind = plane_wave\nstate.k = 1").unwrap();
        let m = overlay(&base, &user);
        assert_eq!(m.len(), 2);
        let m = overlay(&base, &parse_config("state.width = 3").unwrap());
        assert_eq!(m["state.width"], "3");
        assert_eq!(m["state.center"], "1");
    }

    #[test]
    fn superposition_and_unknown_keys() {
        let text = "experiment = x\nstate.kind = superposition\nstate.terms = 2\n\
                    state.term0.kind = plane_wave\nstate.term0.k = 1\n\
                    state.term1.kind = plane_wave\nstate.term1.k = 2\nstate.term1.im = 0.5";
        let c = build_config(&parse_config(text).unwrap(), &[]).unwrap();
        match c.state {
            StateSpec::Superposition { terms } => {
                assert_eq!(terms.len(), 2);
                assert_eq!(terms[1].0, Weight { re: 1.0, im: 0.5 });
            }
            _ => panic!("expected a superposition"),
        }
        let bad = format!("{text}\nstate.colour = red");
        assert!(build_config(&parse_config(&bad).unwrap(), &[]).is_err());
    }
}
