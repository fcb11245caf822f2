//! Run configuration: a TOML document, command-line overrides, and their
//! resolution into a runnable scenario.
//!
//! Precedence is flags, then file, then scenario defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dynamics::{IntegratorConfig, MechState, Scheme};
use crate::error::{Error, Result};
use crate::scenarios::{BaseLaw, Dissipation, FeedbackStack, Scenario, ScenarioId};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub initial: Option<InitialSection>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub integrator: Option<IntegratorSection>,
    pub feedback: Option<FeedbackSection>,
    pub output: Option<OutputSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    /// `dopri5` or `rk4`.
    pub scheme: Option<String>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub step: Option<f64>,
    pub max_steps: Option<usize>,
    pub sample_dt: Option<f64>,
    pub margin: Option<f64>,
    pub position_guard: Option<f64>,
    pub speed_guard: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    /// `barrier`, `constrained-cl` or `reference`.
    pub base: Option<String>,
    /// `none`, `simple` or `storage`.
    pub dissipation: Option<String>,
    pub gain: Option<f64>,
    pub e_star: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub stem: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Parameter name to the list of values it takes; the grid is the
    /// Cartesian product in name order.
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub params: Vec<(String, f64)>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub base: Option<String>,
    pub dissipation: Option<String>,
    pub gain: Option<f64>,
    pub e_star: Option<f64>,
    pub scheme: Option<String>,
    pub grid: Vec<(String, Vec<f64>)>,
}

/// Parses `key=value` with a floating-point value.
pub fn parse_assignment(text: &str) -> Result<(String, f64)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("expected key=value, got `{text}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Invalid(format!("empty key in `{text}`")));
    }
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("`{}` is not a number in `{text}`", value.trim())))?;
    Ok((key.to_string(), value))
}

/// Parses `key=v1,v2,...`.
pub fn parse_grid_axis(text: &str) -> Result<(String, Vec<f64>)> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("expected key=v1,v2,..., got `{text}`")))?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("`{v}` is not a number in `{text}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((key.trim().to_string(), values))
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub scenario: Scenario,
    pub stack: FeedbackStack,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub out_dir: PathBuf,
    pub stem: String,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_OUT_DIR: &str = "runs";

pub fn scenario_id(file: &RunConfig, flags: &Overrides) -> Result<ScenarioId> {
    flags
        .scenario
        .as_deref()
        .or(file.scenario.as_deref())
        .ok_or_else(|| {
            Error::Invalid("no scenario given (positional argument or `scenario` key)".into())
        })?
        .parse()
}

/// Merged parameter overrides, file first and flags after.
pub fn merged_params(file: &RunConfig, flags: &Overrides) -> Vec<(String, f64)> {
    let mut merged: BTreeMap<String, f64> = file.params.clone();
    for (k, v) in &flags.params {
        merged.insert(k.clone(), *v);
    }
    merged.into_iter().collect()
}

pub fn resolve(file: &RunConfig, flags: &Overrides) -> Result<ResolvedRun> {
    let id = scenario_id(file, flags)?;
    resolve_with_params(id, file, flags, &merged_params(file, flags))
}

pub fn resolve_with_params(
    id: ScenarioId,
    file: &RunConfig,
    flags: &Overrides,
    params: &[(String, f64)],
) -> Result<ResolvedRun> {
    let mut scenario = Scenario::build(id, params)?;
    if let Some(init) = &file.initial {
        let state = MechState::new(scenario.initial.t, &init.q, &init.qd);
        scenario = scenario.with_initial(state)?;
    }

    let horizon = flags.horizon.or(file.horizon).unwrap_or(scenario.horizon);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Invalid(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }

    let integrator = integrator_config(
        scenario.integrator,
        file.integrator.as_ref(),
        flags.scheme.as_deref(),
    )?;
    let stack = feedback_stack(&scenario, file.feedback.as_ref(), flags)?;

    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.output.as_ref().and_then(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let stem = file
        .output
        .as_ref()
        .and_then(|o| o.stem.clone())
        .unwrap_or_else(|| id.name().to_string());
    let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    Ok(ResolvedRun {
        scenario,
        stack,
        horizon,
        integrator,
        out_dir,
        stem,
        seed,
    })
}

fn integrator_config(
    mut cfg: IntegratorConfig,
    section: Option<&IntegratorSection>,
    scheme_flag: Option<&str>,
) -> Result<IntegratorConfig> {
    let empty = IntegratorSection::default();
    let s = section.unwrap_or(&empty);
    let scheme = scheme_flag.or(s.scheme.as_deref());
    cfg.scheme = match (scheme, cfg.scheme) {
        (None, Scheme::Dopri5 { rtol, atol }) | (Some("dopri5"), Scheme::Dopri5 { rtol, atol }) => {
            Scheme::Dopri5 {
                rtol: s.rtol.unwrap_or(rtol),
                atol: s.atol.unwrap_or(atol),
            }
        }
        (Some("dopri5"), Scheme::Rk4 { .. }) => Scheme::Dopri5 {
            rtol: s.rtol.unwrap_or(1e-9),
            atol: s.atol.unwrap_or(1e-12),
        },
        (None, Scheme::Rk4 { step }) | (Some("rk4"), Scheme::Rk4 { step }) => Scheme::Rk4 {
            step: s.step.unwrap_or(step),
        },
        (Some("rk4"), Scheme::Dopri5 { .. }) => Scheme::Rk4 {
            step: s.step.unwrap_or(1e-3),
        },
        (Some(other), _) => {
            return Err(Error::Invalid(format!(
                "unknown integrator scheme `{other}`"
            )))
        }
    };
    if let Some(n) = s.max_steps {
        cfg.max_steps = n;
    }
    if let Some(dt) = s.sample_dt {
        cfg.sample_dt = Some(dt);
    }
    if let Some(m) = s.margin {
        cfg.guards.margin = m;
    }
    if let Some(p) = s.position_guard {
        cfg.guards.position = p;
    }
    if let Some(v) = s.speed_guard {
        cfg.guards.speed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn feedback_stack(
    scenario: &Scenario,
    section: Option<&FeedbackSection>,
    flags: &Overrides,
) -> Result<FeedbackStack> {
    let empty = FeedbackSection::default();
    let s = section.unwrap_or(&empty);
    let default = scenario.default_stack;
    let base = match flags.base.as_deref().or(s.base.as_deref()) {
        None => default.base,
        Some("barrier") => BaseLaw::Barrier,
        Some("constrained-cl") => BaseLaw::ConstrainedCl,
        Some("reference") => BaseLaw::Reference,
        Some(other) => return Err(Error::Invalid(format!("unknown feedback base `{other}`"))),
    };
    let default_gain = match default.dissipation {
        Dissipation::Simple { gain } | Dissipation::Storage { gain, .. } => gain,
        Dissipation::None => 1.0,
    };
    let gain = flags.gain.or(s.gain).unwrap_or(default_gain);
    let e_star = flags.e_star.or(s.e_star).unwrap_or_else(|| {
        scenario
            .params
            .iter()
            .find(|(k, _)| *k == "e_star")
            .map(|(_, v)| v)
            .unwrap_or(1.0)
    });
    let dissipation = match flags.dissipation.as_deref().or(s.dissipation.as_deref()) {
        None => match default.dissipation {
            Dissipation::None if flags.gain.or(s.gain).is_some() => Dissipation::Simple { gain },
            d => d,
        },
        Some("none") => Dissipation::None,
        Some("simple") => Dissipation::Simple { gain },
        Some("storage") => Dissipation::Storage { gain, e_star },
        Some(other) => return Err(Error::Invalid(format!("unknown dissipation `{other}`"))),
    };
    if let Dissipation::Simple { gain } | Dissipation::Storage { gain, .. } = dissipation {
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::ParameterOutOfRange {
                name: "gain".into(),
                value: gain,
                reason: "dissipation gain must be finite and non-negative".into(),
            });
        }
    }
    Ok(FeedbackStack { base, dissipation })
}

/// Cartesian product of the grid axes, first axis slowest.
pub fn expand_grid(axes: &[(String, Vec<f64>)]) -> Vec<Vec<(String, f64)>> {
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        return Vec::new();
    }
    let mut rows: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (name, values) in axes {
        rows = rows
            .into_iter()
            .flat_map(|row| {
                values.iter().map(move |v| {
                    let mut next = row.clone();
                    next.push((name.clone(), *v));
                    next
                })
            })
            .collect();
    }
    rows
}

/// Grid axes, flags replacing file axes of the same name.
pub fn grid_axes(file: &RunConfig, flags: &Overrides) -> Vec<(String, Vec<f64>)> {
    let mut axes: BTreeMap<String, Vec<f64>> = file
        .sweep
        .as_ref()
        .map(|s| s.grid.clone())
        .unwrap_or_default();
    let mut order: Vec<String> = axes.keys().cloned().collect();
    for (k, v) in &flags.grid {
        if !axes.contains_key(k) {
            order.push(k.clone());
        }
        axes.insert(k.clone(), v.clone());
    }
    order
        .into_iter()
        .map(|k| (k.clone(), axes[&k].clone()))
        .collect()
}
