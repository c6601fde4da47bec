//! Layered configuration: command-line flags over the `[subcommand]` table
//! of the config file, over its top level, over built-in defaults. Every
//! resolved value is echoed into the output headers.

use std::f64::consts::PI;
use std::path::Path;

use bell_lab::models::{Chvm, DiscreteJoint, SourceDistribution};
use bell_lab::{Design, ModelSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(FileConfig { table })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&toml::Value> {
        self.table
            .get(section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| self.table.get(key))
    }

    pub fn get<T: DeserializeOwned>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        self.raw(section, key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .map_err(|e| CliError::Usage(format!("config key {key:?}: {e}")))
            })
            .transpose()
    }

    pub fn section(&self, name: &str) -> Option<&toml::Table> {
        self.table.get(name).and_then(|v| v.as_table())
    }
}

/// Resolves the parameters of one subcommand and records them.
pub struct Resolver<'a> {
    file: &'a FileConfig,
    section: &'static str,
    echo: Map<String, Value>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a FileConfig, section: &'static str) -> Self {
        Resolver {
            file,
            section,
            echo: Map::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        self.echo
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: DeserializeOwned + Serialize,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file.get(self.section, key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: DeserializeOwned + Serialize,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(self.section, key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    fn raw_text(&self, key: &str, flag: Option<String>) -> Result<Option<String>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(self.file.raw(self.section, key).map(|v| match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        }))
    }

    /// A comma-separated list of numbers, from a flag, a TOML array, a TOML
    /// number or a string.
    pub fn numbers(&mut self, key: &str, flag: Option<String>, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let v = match self.raw_text(key, flag)? {
            Some(text) => text
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {t:?} as a number")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => default.to_vec(),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn design(&mut self, flag: Option<String>) -> Result<Design, CliError> {
        let design = match self.raw_text("angles", flag)? {
            Some(text) => parse_angles(&text)?,
            None => Design::standard(),
        };
        self.record("angles", design.as_array());
        Ok(design)
    }

    pub fn model(&mut self, flag: Option<String>, default: &str) -> Result<ModelSpec, CliError> {
        let name = self.value("model", flag, default.to_string())?;
        let spec = match name.as_str() {
            "quantum" | "singlet" => ModelSpec::quantum_singlet(),
            "lrhvm" => ModelSpec::Lrhvm,
            "shvm" => ModelSpec::Shvm,
            "rot-chvm" | "rot_chvm" => ModelSpec::rot_chvm(),
            "chvm" => {
                let table = self.file.section("chvm");
                let chvm = match table {
                    Some(t) => {
                        let cfg: ChvmConfig = toml::Value::Table(t.clone())
                            .try_into()
                            .map_err(|e| CliError::Usage(format!("[chvm]: {e}")))?;
                        self.record("chvm", &cfg);
                        cfg.build()?
                    }
                    None => Chvm::degenerate(),
                };
                ModelSpec::Chvm(chvm)
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown model {other:?} (expected quantum, lrhvm, shvm, chvm or rot-chvm)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn finish(self) -> Value {
        Value::Object(self.echo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointConfig {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl JointConfig {
    fn build(&self) -> DiscreteJoint {
        DiscreteJoint {
            points: self.points.iter().map(|p| (p[0], p[1])).collect(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SourceConfig {
    Named(String),
    Discrete(JointConfig),
}

/// `[chvm]` table: `source` is `"shared-uniform"`, `"independent-uniform"`
/// or `{ points, weights }`; `instruments` lists four `{ points, weights }`
/// tables in the order xy, xy', x'y, x'y'.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChvmConfig {
    source: SourceConfig,
    instruments: Vec<JointConfig>,
}

impl ChvmConfig {
    fn build(&self) -> Result<Chvm, CliError> {
        let source = match &self.source {
            SourceConfig::Named(n) => match n.as_str() {
                "shared-uniform" => SourceDistribution::SharedUniform,
                "independent-uniform" => SourceDistribution::IndependentUniform,
                other => return Err(CliError::Usage(format!("[chvm] unknown source {other:?}"))),
            },
            SourceConfig::Discrete(j) => SourceDistribution::Discrete(j.build()),
        };
        let instruments: [DiscreteJoint; 4] = self
            .instruments
            .iter()
            .map(JointConfig::build)
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|_| CliError::Usage("[chvm] needs exactly four instrument distributions".into()))?;
        Ok(Chvm { source, instruments })
    }
}

/// One angle: radians by default, degrees with a `deg` or `°` suffix.
pub fn parse_angle(token: &str) -> Result<f64, CliError> {
    let t = token.trim();
    let (number, scale) = if let Some(d) = t.strip_suffix("deg").or_else(|| t.strip_suffix('°')) {
        (d, PI / 180.0)
    } else if let Some(r) = t.strip_suffix("rad") {
        (r, 1.0)
    } else {
        (t, 1.0)
    };
    let v: f64 = number
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse angle {token:?}")))?;
    if !v.is_finite() {
        return Err(CliError::Usage(format!("angle {token:?} is not finite")));
    }
    Ok(v * scale)
}

/// `a,a',b,b'`.
pub fn parse_angles(text: &str) -> Result<Design, CliError> {
    let v: Vec<f64> = text.split(',').map(parse_angle).collect::<Result<_, _>>()?;
    let [a, ap, b, bp] = v[..] else {
        return Err(CliError::Usage(format!("expected four angles a,a',b,b', got {text:?}")));
    };
    Ok(Design::new(a, ap, b, bp)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_in_degrees_and_radians() {
        let d = parse_angles("0, 90deg, 0.7853981633974483, 135°").unwrap();
        assert_eq!(d.a, 0.0);
        assert!((d.a_prime - PI / 2.0).abs() < 1e-15);
        assert!((d.b_prime - 0.75 * PI).abs() < 1e-15);
        assert!(parse_angles("0,1,2").is_err());
        assert!(parse_angles("0,1,2,x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig {
            table: "n = 5\nmodel = \"shvm\"\n[chsh]\nn = 7\n".parse().unwrap(),
        };
        let mut r = Resolver::new(&file, "chsh");
        assert_eq!(r.value("n", None, 1usize).unwrap(), 7);
        assert_eq!(r.value("n", Some(9usize), 1).unwrap(), 9);
        assert_eq!(r.value("model", None, "quantum".to_string()).unwrap(), "shvm");
        let mut r = Resolver::new(&file, "bertrand");
        assert_eq!(r.value("n", None, 1usize).unwrap(), 5);
        assert_eq!(r.value("radius", None, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn chvm_from_table() {
        let text = r#"
            [chvm]
            source = "shared-uniform"
            instruments = [
                { points = [[0.0, 0.0]], weights = [1.0] },
                { points = [[0.0, 0.5], [0.0, -0.5]], weights = [0.5, 0.5] },
                { points = [[0.0, 0.0]], weights = [1.0] },
                { points = [[0.0, 0.0]], weights = [1.0] },
            ]
        "#;
        let file = FileConfig { table: text.parse().unwrap() };
        let mut r = Resolver::new(&file, "chsh");
        let m = r.model(Some("chvm".into()), "quantum").unwrap();
        assert!(matches!(m, ModelSpec::Chvm(_)));
        let bad = FileConfig {
            table: "[chvm]\nsource = \"shared-uniform\"\ninstruments = []\n".parse().unwrap(),
        };
        assert!(Resolver::new(&bad, "chsh").model(Some("chvm".into()), "quantum").is_err());
    }
}
