//! Scenario files: one JSON document describing the world, the walk and
//! every engine setting. All sections except `walk` have defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::{EngineConfig, FrontEndConfig};
use crate::ranging::{ApKind, ApRegistry};
use crate::simulator::{Walk, WorldConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub walk: Walk,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub front_end: FrontEndConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    /// Gate thresholds swept when the command line gives none, meters.
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    /// Ranging mode used when the command line gives none.
    #[serde(default)]
    pub mode: Option<ApKind>,
    /// Ground-truth sampling interval for error alignment, seconds.
    #[serde(default = "default_truth_dt")]
    pub truth_dt: f64,
}

fn default_name() -> String {
    "scenario".to_owned()
}

fn default_rho() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.8]
}

fn default_truth_dt() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Dotted path of the offending field.
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        }
    }

    fn warning(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

/// Parses a scenario. Errors carry the line, column and field path.
pub fn parse(text: &str, name: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            source_name: name.to_owned(),
            location: format!("line {} column {}, field `{path}`", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse(&text, &path.display().to_string())
}

fn push_err(out: &mut Vec<Diagnostic>, field: &str, r: Result<()>) {
    if let Err(e) = r {
        out.push(Diagnostic::error(field, e.to_string()));
    }
}

impl Scenario {
    /// Schema-level invariants. `mode` overrides the scenario's own mode;
    /// with neither set, every AP kind present is checked.
    pub fn validate(&self, mode: Option<ApKind>) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        push_err(&mut out, "walk", self.walk.validate());
        push_err(&mut out, "world.aps", ApRegistry::new(self.world.aps.clone()).map(|_| ()));
        for (i, ap) in self.world.aps.iter().enumerate() {
            if !(ap.position.x.is_finite() && ap.position.y.is_finite()) {
                out.push(Diagnostic::error(format!("world.aps[{i}].position"), "must be finite"));
            }
        }
        push_err(&mut out, "world.rss", self.world.rss.params().validate());
        if !(self.world.rss.sigma >= 0.0) {
            out.push(Diagnostic::error("world.rss.sigma", "must be >= 0"));
        }
        push_err(&mut out, "world.rtt", self.world.rtt.params().validate());
        if !(self.world.rtt.sigma >= 0.0) {
            out.push(Diagnostic::error("world.rtt.sigma", "must be >= 0"));
        }
        if !(self.world.alpha > 0.0) {
            out.push(Diagnostic::error("world.alpha", "must be positive"));
        }
        push_err(&mut out, "engine", self.engine.validate());
        if self.rho.is_empty() {
            out.push(Diagnostic::error("rho", "at least one threshold is required"));
        }
        for (i, r) in self.rho.iter().enumerate() {
            if !(r.is_finite() && *r >= 0.0) {
                out.push(Diagnostic::error(format!("rho[{i}]"), format!("{r} must be a finite value >= 0")));
            }
        }
        if !(self.truth_dt > 0.0) {
            out.push(Diagnostic::error("truth_dt", "must be positive"));
        }

        let kinds: Vec<ApKind> = match mode.or(self.mode) {
            Some(k) => vec![k],
            None => [ApKind::Rss, ApKind::Rtt]
                .into_iter()
                .filter(|k| self.world.aps.iter().any(|a| a.kind == *k))
                .collect(),
        };
        if self.world.aps.is_empty() {
            out.push(Diagnostic::error("world.aps", "no access points"));
        }
        for kind in kinds {
            push_err(
                &mut out,
                &format!("engine.initial_guess ({kind})"),
                self.engine.initial_guess.ranging(kind).validate(),
            );
            let n = self.world.aps.iter().filter(|a| a.kind == kind).count();
            if n == 0 {
                out.push(Diagnostic::error("world.aps", format!("no {kind} access points")));
            } else if n < 3 {
                out.push(Diagnostic::warning(
                    "world.aps",
                    format!("only {n} {kind} access points; least-squares fixes need at least 3, so self-calibration cannot run"),
                ));
            }
        }
        out
    }

    /// Fails with every error-level diagnostic.
    pub fn check(&self, mode: Option<ApKind>) -> Result<()> {
        let errors: Vec<String> = self
            .validate(mode)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| format!("{}: {}", d.field, d.message))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}
