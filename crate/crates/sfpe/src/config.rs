//! Problem files: flat sectioned text, diff-friendly, strictly validated.
//!
//! ```text
//! [coefficients]
//! kind = brownian            # ornstein-uhlenbeck, scaled-brownian,
//! d = 1                      # geometric, cubic-drift
//!
//! [domain]
//! horizon = 1.0
//! lo = -2.0                  # optional; omit for an unbounded domain
//! hi = 2.0                   # scalars broadcast across axes
//! grid_lo = -2.0             # optional finite grid extent when the
//! grid_hi = 2.0              # domain itself is unbounded
//!
//! [terminal]
//! form = sine-sum            # linear-sum, quadratic, sine-sum, gaussian
//!
//! [nonlinearity]
//! form = manufactured        # zero, constant, value-scale, grad-scale
//! coupling = grad-scale
//! kappa = 0.5
//!
//! [lyapunov]
//! form = constant
//! value = 1.0
//! c_v = auto                 # or a positive number
//! ```
//!
//! Alternatively a single `[benchmark]` section with `name = <builtin>`
//! selects a packaged problem; no other sections are allowed then.
//! Unknown sections and keys are errors: a typo must fail loudly, not
//! silently fall back to a default.

use crate::coefficients::{
    Brownian, CoefficientSet, CubicDrift, GeometricDiffusion, OrnsteinUhlenbeck, ScaledBrownian,
};
use crate::error::{Error, Result};
use crate::grid::SpaceBox;
use crate::manufactured::{
    benchmark_by_name, manufactured_problem, GradientCoupling, ReferenceSolution, USpec,
};
use crate::norms::LyapunovV;
use crate::solver::{NonlinearFn, Problem, TerminalFn};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A problem ready to hand to the solver, plus everything the file also
/// pins down: the exact reference when one exists, the finite grid extent
/// when one was given, and whether the growth constant still needs the
/// probe (`c_v = auto`).
pub struct BuiltProblem {
    pub problem: Problem,
    pub reference: Option<ReferenceSolution>,
    pub grid_extent: Option<SpaceBox>,
    pub c_v_auto: bool,
}

impl std::fmt::Debug for BuiltProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltProblem")
            .field("dim", &self.problem.coeffs.dim())
            .field("horizon", &self.problem.horizon)
            .field("reference", &self.reference)
            .field("grid_extent", &self.grid_extent)
            .field("c_v_auto", &self.c_v_auto)
            .finish_non_exhaustive()
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Section name -> key -> (value, consumed flag); insertion-order agnostic.
struct Sections {
    map: BTreeMap<String, BTreeMap<String, (String, bool)>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Sections> {
        let mut map: BTreeMap<String, BTreeMap<String, (String, bool)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find(['#', ';']) {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        cfg_err("file", format!("line {}: unterminated section header", lineno + 1))
                    })?
                    .trim()
                    .to_ascii_lowercase();
                if map.contains_key(&name) {
                    return Err(cfg_err(&name, "duplicate section"));
                }
                map.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                cfg_err("file", format!("line {}: expected key = value", lineno + 1))
            })?;
            let section = current.as_ref().ok_or_else(|| {
                cfg_err("file", format!("line {}: key before any [section]", lineno + 1))
            })?;
            let key = key.trim().to_ascii_lowercase();
            let entry = map.get_mut(section).unwrap();
            if entry.contains_key(&key) {
                return Err(cfg_err(
                    &format!("{section}.{key}"),
                    "duplicate key",
                ));
            }
            entry.insert(key, (value.trim().to_string(), false));
        }
        Ok(Sections { map })
    }

    fn has(&self, section: &str) -> bool {
        self.map.contains_key(section)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.map.get_mut(section).and_then(|s| {
            s.get_mut(key).map(|(v, used)| {
                *used = true;
                v.clone()
            })
        })
    }

    fn require(&mut self, section: &str, key: &str) -> Result<String> {
        self.take(section, key)
            .ok_or_else(|| cfg_err(&format!("{section}.{key}"), "required field is missing"))
    }

    /// Every provided key must have been consumed; typos die here.
    fn finish(&self, allowed_sections: &[&str]) -> Result<()> {
        for (section, keys) in &self.map {
            if !allowed_sections.contains(&section.as_str()) {
                return Err(cfg_err(section, "unknown section"));
            }
            for (key, (_, used)) in keys {
                if !used {
                    return Err(cfg_err(
                        &format!("{section}.{key}"),
                        "unknown or unused key",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn parse_f64(field: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| cfg_err(field, format!("expected a number, got '{v}'")))
}

fn parse_usize(field: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| cfg_err(field, format!("expected a nonnegative integer, got '{v}'")))
}

/// Comma list broadcast to length d.
fn parse_axis_list(field: &str, v: &str, d: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| parse_f64(field, p.trim()))
        .collect::<Result<_>>()?;
    match parts.len() {
        1 => Ok(vec![parts[0]; d]),
        n if n == d => Ok(parts),
        n => Err(cfg_err(
            field,
            format!("expected 1 or {d} comma-separated values, got {n}"),
        )),
    }
}

fn build_coefficients(s: &mut Sections) -> Result<Arc<dyn CoefficientSet>> {
    let kind = s.require("coefficients", "kind")?.to_ascii_lowercase();
    let d = parse_usize("coefficients.d", &s.require("coefficients", "d")?)?;
    if d == 0 || d > 16 {
        return Err(cfg_err("coefficients.d", "dimension must lie in 1..=16"));
    }
    let coeffs: Arc<dyn CoefficientSet> = match kind.as_str() {
        "brownian" => Arc::new(Brownian { d }),
        "ornstein-uhlenbeck" => {
            let rate = parse_f64("coefficients.rate", &s.require("coefficients", "rate")?)?;
            if !(rate > 0.0) {
                return Err(cfg_err("coefficients.rate", "rate must be positive"));
            }
            Arc::new(OrnsteinUhlenbeck { d, rate })
        }
        "scaled-brownian" => {
            let scale = parse_f64("coefficients.scale", &s.require("coefficients", "scale")?)?;
            if !(scale > 0.0) {
                return Err(cfg_err("coefficients.scale", "scale must be positive"));
            }
            Arc::new(ScaledBrownian { d, scale })
        }
        "geometric" => {
            let drift = parse_f64("coefficients.drift", &s.require("coefficients", "drift")?)?;
            let vol = parse_f64("coefficients.vol", &s.require("coefficients", "vol")?)?;
            let floor = parse_f64("coefficients.floor", &s.require("coefficients", "floor")?)?;
            Arc::new(GeometricDiffusion::new(d, drift, vol, floor)?)
        }
        "cubic-drift" => {
            if d != 1 {
                return Err(cfg_err("coefficients.d", "cubic-drift is one-dimensional"));
            }
            Arc::new(CubicDrift)
        }
        other => {
            return Err(cfg_err(
                "coefficients.kind",
                format!(
                    "unknown kind '{other}'; available: brownian, ornstein-uhlenbeck, \
                     scaled-brownian, geometric, cubic-drift"
                ),
            ))
        }
    };
    Ok(coeffs)
}

fn build_terminal_spec(s: &mut Sections) -> Result<USpec> {
    let form = s.require("terminal", "form")?.to_ascii_lowercase();
    match form.as_str() {
        "linear-sum" => Ok(USpec::Linear),
        "quadratic" => Ok(USpec::HeatPolynomial),
        "sine-sum" => {
            let decay = match s.take("terminal", "decay") {
                Some(v) => parse_f64("terminal.decay", &v)?,
                None => 0.5,
            };
            Ok(USpec::SineWave { decay })
        }
        "gaussian" => {
            let gamma = match s.take("terminal", "gamma") {
                Some(v) => parse_f64("terminal.gamma", &v)?,
                None => 0.5,
            };
            let beta = match s.take("terminal", "beta") {
                Some(v) => parse_f64("terminal.beta", &v)?,
                None => 0.0,
            };
            Ok(USpec::GaussianBump { gamma, beta })
        }
        other => Err(cfg_err(
            "terminal.form",
            format!(
                "unknown form '{other}'; available: linear-sum, quadratic, sine-sum, gaussian"
            ),
        )),
    }
}

fn parse_coupling(s: &mut Sections, field_prefix: &str, form: &str) -> Result<GradientCoupling> {
    match form {
        "zero" => Ok(GradientCoupling::Zero),
        "value-scale" => {
            let kappa = parse_f64(
                &format!("{field_prefix}.kappa"),
                &s.require("nonlinearity", "kappa")?,
            )?;
            Ok(GradientCoupling::ValueScale(kappa))
        }
        "grad-scale" => {
            let kappa = parse_f64(
                &format!("{field_prefix}.kappa"),
                &s.require("nonlinearity", "kappa")?,
            )?;
            Ok(GradientCoupling::GradScale(kappa))
        }
        other => Err(cfg_err(
            &format!("{field_prefix}"),
            format!("unknown coupling '{other}'; available: zero, value-scale, grad-scale"),
        )),
    }
}

fn build_lyapunov(s: &mut Sections) -> Result<(LyapunovV, f64, bool)> {
    if !s.has("lyapunov") {
        return Ok((LyapunovV::Constant(1.0), 1.0, true));
    }
    let form = match s.take("lyapunov", "form") {
        Some(v) => v.to_ascii_lowercase(),
        None => "constant".into(),
    };
    let v = match form.as_str() {
        "constant" => {
            let value = match s.take("lyapunov", "value") {
                Some(v) => parse_f64("lyapunov.value", &v)?,
                None => 1.0,
            };
            LyapunovV::Constant(value)
        }
        "norm-power" => {
            let scale = match s.take("lyapunov", "scale") {
                Some(v) => parse_f64("lyapunov.scale", &v)?,
                None => 1.0,
            };
            let power = parse_f64("lyapunov.power", &s.require("lyapunov", "power")?)?;
            LyapunovV::NormPower { scale, power }
        }
        other => {
            return Err(cfg_err(
                "lyapunov.form",
                format!("unknown form '{other}'; available: constant, norm-power"),
            ))
        }
    };
    v.validate()
        .map_err(|e| cfg_err("lyapunov", format!("{e}")))?;
    match s.take("lyapunov", "c_v") {
        None => Ok((v, 1.0, true)),
        Some(raw) if raw.eq_ignore_ascii_case("auto") => Ok((v, 1.0, true)),
        Some(raw) => {
            let c_v = parse_f64("lyapunov.c_v", &raw)?;
            if !(c_v > 0.0) {
                return Err(cfg_err("lyapunov.c_v", "growth constant must be positive"));
            }
            Ok((v, c_v, false))
        }
    }
}

/// Parses and validates a problem file into a solver-ready problem.
pub fn parse_problem_file(text: &str) -> Result<BuiltProblem> {
    let mut s = Sections::parse(text)?;
    if s.has("benchmark") {
        let name = s.require("benchmark", "name")?;
        s.finish(&["benchmark"]).map_err(|_| {
            cfg_err(
                "benchmark",
                "a benchmark file selects a packaged problem; no other sections or keys apply",
            )
        })?;
        let b = benchmark_by_name(&name)
            .map_err(|e| cfg_err("benchmark.name", format!("{e}")))?;
        return Ok(BuiltProblem {
            problem: b.problem,
            reference: Some(b.reference),
            grid_extent: Some(b.extent),
            c_v_auto: false,
        });
    }

    let coeffs = build_coefficients(&mut s)?;
    let d = coeffs.dim();

    let horizon = parse_f64("domain.horizon", &s.require("domain", "horizon")?)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(cfg_err("domain.horizon", "horizon must be finite and positive"));
    }
    let lo = s.take("domain", "lo");
    let hi = s.take("domain", "hi");
    let domain = match (lo, hi) {
        (None, None) => SpaceBox::unbounded(d),
        (Some(l), Some(h)) => SpaceBox::new(
            parse_axis_list("domain.lo", &l, d)?,
            parse_axis_list("domain.hi", &h, d)?,
        )
        .map_err(|e| cfg_err("domain", format!("{e}")))?,
        _ => {
            return Err(cfg_err(
                "domain.lo",
                "lo and hi must be given together or both omitted",
            ))
        }
    };
    let grid_lo = s.take("domain", "grid_lo");
    let grid_hi = s.take("domain", "grid_hi");
    let grid_extent = match (grid_lo, grid_hi) {
        (None, None) => {
            if domain.is_unbounded() {
                None
            } else {
                Some(domain.clone())
            }
        }
        (Some(l), Some(h)) => Some(
            SpaceBox::new(
                parse_axis_list("domain.grid_lo", &l, d)?,
                parse_axis_list("domain.grid_hi", &h, d)?,
            )
            .map_err(|e| cfg_err("domain", format!("{e}")))?,
        ),
        _ => {
            return Err(cfg_err(
                "domain.grid_lo",
                "grid_lo and grid_hi must be given together or both omitted",
            ))
        }
    };

    let u_spec = build_terminal_spec(&mut s)?;
    let (v, c_v, c_v_auto) = build_lyapunov(&mut s)?;

    let form = s.require("nonlinearity", "form")?.to_ascii_lowercase();
    let (mut problem, reference) = match form.as_str() {
        "manufactured" => {
            let coupling_form = match s.take("nonlinearity", "coupling") {
                Some(v) => v.to_ascii_lowercase(),
                None => "zero".into(),
            };
            let coupling = parse_coupling(&mut s, "nonlinearity.coupling", &coupling_form)?;
            let (mut p, r) = manufactured_problem(u_spec, coeffs, coupling, horizon, c_v)?;
            p.domain = domain;
            p.v = v;
            (p, Some(r))
        }
        "zero" | "constant" | "value-scale" | "grad-scale" => {
            let (nonlinearity, lipschitz): (NonlinearFn, f64) = match form.as_str() {
                "zero" => (Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0), 0.0),
                "constant" => {
                    let value =
                        parse_f64("nonlinearity.value", &s.require("nonlinearity", "value")?)?;
                    (Arc::new(move |_t: f64, _x: &[f64], _v: &[f64]| value), 0.0)
                }
                _ => {
                    let coupling = parse_coupling(&mut s, "nonlinearity", &form)?;
                    (
                        Arc::new(move |_t: f64, _x: &[f64], v: &[f64]| coupling.eval(v)),
                        coupling.lipschitz(d),
                    )
                }
            };
            let terminal: TerminalFn = {
                let t1 = horizon;
                Arc::new(move |x: &[f64]| u_spec.value(t1, t1, x))
            };
            let p = Problem {
                coeffs,
                horizon,
                domain,
                terminal,
                nonlinearity,
                lipschitz,
                v,
                c_v,
            };
            (p, None)
        }
        other => {
            return Err(cfg_err(
                "nonlinearity.form",
                format!(
                    "unknown form '{other}'; available: zero, constant, value-scale, \
                     grad-scale, manufactured"
                ),
            ))
        }
    };

    if let Some(l) = s.take("nonlinearity", "lipschitz") {
        let l = parse_f64("nonlinearity.lipschitz", &l)?;
        if !(l >= 0.0) || !l.is_finite() {
            return Err(cfg_err(
                "nonlinearity.lipschitz",
                "override must be finite and nonnegative",
            ));
        }
        problem.lipschitz = l;
    }
    s.finish(&["coefficients", "domain", "terminal", "nonlinearity", "lyapunov"])?;
    problem.validate()?;
    Ok(BuiltProblem {
        problem,
        reference,
        grid_extent,
        c_v_auto,
    })
}
