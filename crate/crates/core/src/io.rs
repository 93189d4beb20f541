//! CCF1 field snapshots, experiment configs, CSV series and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::{Field, Grid, Space};
use crate::symbols::Depth;

pub const MAGIC: &[u8; 4] = b"CCF1";
const HEADER: usize = 4 + 4 + 4 + 8 * 4;

/// CCF1 bytes of the physical samples, `x` index outermost.
pub fn encode_field(f: &Field) -> Result<Vec<u8>> {
    let p = f.physical();
    let scale = p.data.iter().fold(0.0f64, |a, c| a.max(c.re.abs()));
    if p.data.iter().any(|c| c.im.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Format("CCF1 stores real fields; imaginary part is not negligible".into()));
    }
    let g = &f.grid;
    let mut out = Vec::with_capacity(HEADER + 8 * g.nx * g.ny);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny as u32).to_le_bytes());
    for v in [g.lx, g.ly, f.t, f.h.as_f64()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in p.data.iter() {
        out.extend_from_slice(&c.re.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing CCF1 magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (nx, ny) = (u32_at(4), u32_at(8));
    let (lx, ly, t, h) = (f64_at(12), f64_at(20), f64_at(28), f64_at(36));
    let need = nx.checked_mul(ny).and_then(|n| n.checked_mul(8)).and_then(|n| n.checked_add(HEADER));
    if need != Some(bytes.len()) {
        return Err(Error::Format(format!("CCF1 payload of {} bytes does not match {nx} x {ny}", bytes.len())));
    }
    let grid = Grid::new(nx, ny, lx, ly).map_err(|e| Error::Format(format!("bad CCF1 header: {e}")))?;
    let depth = if h == f64::INFINITY {
        Depth::Infinite
    } else {
        Depth::finite(h).map_err(|e| Error::Format(format!("bad CCF1 depth: {e}")))?
    };
    let mut f = Field::zeros(&grid, depth, Space::Physical);
    for (k, v) in f.data.iter_mut().enumerate() {
        v.re = f64_at(HEADER + 8 * k);
    }
    f.t = t;
    Ok(f)
}

pub fn write_field(path: &Path, f: &Field) -> Result<()> {
    fs::write(path, encode_field(f)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

/// All `*.ccf1` files in `dir`, sorted by their stored time.
pub fn read_run(dir: &Path) -> Result<Vec<(PathBuf, Field)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().and_then(|s| s.to_str()) == Some("ccf1") {
            let f = read_field(&p)?;
            out.push((p, f));
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no .ccf1 snapshots in {}", dir.display())));
    }
    out.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

pub fn snapshot_name(index: usize) -> String {
    format!("snap_{index:05}.ccf1")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        k => Error::Format(format!("csv: {k:?}")),
    }
}

/// `"inf"` or a positive number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DepthSpec {
    Finite(f64),
    Named(String),
}

impl DepthSpec {
    pub fn depth(&self) -> Result<Depth> {
        match self {
            DepthSpec::Finite(h) => Depth::finite(*h),
            DepthSpec::Named(s) if s == "inf" => Ok(Depth::Infinite),
            DepthSpec::Named(s) => Err(Error::Config(format!("depth must be a positive number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    Gaussian,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveParams {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    pub h: DepthSpec,
    /// Defaults to `default_dt`.
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub ic: InitialCondition,
    pub ic_file: Option<String>,
    #[serde(default = "one_usize")]
    pub snapshot_every: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavepacketParams {
    pub run: String,
    pub v: Vec<f64>,
    #[serde(default)]
    pub vy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterParams {
    pub run: String,
    #[serde(default)]
    pub linear: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllposedParams {
    #[serde(deserialize_with = "exponent")]
    pub p: f64,
    #[serde(default = "two", deserialize_with = "exponent")]
    pub q: f64,
    pub eps: f64,
    #[serde(rename = "N")]
    pub big_n: Vec<f64>,
    #[serde(default = "one")]
    pub t: f64,
}

fn two() -> f64 {
    2.0
}

/// A Lebesgue exponent in `[1, inf]`, written as a number or `"inf"`.
fn exponent<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    use serde::de::Error as _;
    let p = match Value::deserialize(d)? {
        Value::String(s) if s == "inf" => f64::INFINITY,
        Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
        other => return Err(D::Error::custom(format!("expected a number or \"inf\", got {other}"))),
    };
    if p >= 1.0 {
        Ok(p)
    } else {
        Err(D::Error::custom(format!("exponent must be >= 1, got {p}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsParams {
    #[serde(rename = "in")]
    pub input: String,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolsParams {
    #[serde(default = "default_h")]
    pub h: DepthSpec,
    #[serde(default = "default_xi_max")]
    pub xi_max: f64,
    #[serde(default = "default_v_range")]
    pub v_range: [f64; 2],
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_h() -> DepthSpec {
    DepthSpec::Finite(1.0)
}

fn default_xi_max() -> f64 {
    20.0
}

fn default_v_range() -> [f64; 2] {
    [1e-3, 1e3]
}

fn default_points() -> usize {
    201
}

impl Default for SymbolsParams {
    fn default() -> Self {
        SymbolsParams { h: default_h(), xi_max: default_xi_max(), v_range: default_v_range(), points: default_points() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Experiment {
    Evolve(EvolveParams),
    LinearDecay(EvolveParams),
    Wavepacket(WavepacketParams),
    Scatter(ScatterParams),
    Illposed(IllposedParams),
    Norms(NormsParams),
    Symbols(SymbolsParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// The parsed document, used for the manifest hash.
    pub raw: Value,
}

fn params<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

impl EvolveParams {
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.nx, self.ny, self.lx, self.ly)?;
        self.h.depth()?;
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        positive("amplitude", self.amplitude)?;
        if self.ic == InitialCondition::File && self.ic_file.is_none() {
            return Err(Error::Config("ic = \"file\" needs ic_file".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be >= 1".into()));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let mut obj = match raw.clone() {
            Value::Object(m) => m,
            _ => return Err(Error::Config("config must be a JSON object".into())),
        };
        let name = match obj.remove("experiment") {
            Some(Value::String(s)) => s,
            _ => return Err(Error::Config("config needs a string \"experiment\"".into())),
        };
        let seed = match obj.remove("seed") {
            None => 0,
            Some(v) => v.as_u64().ok_or_else(|| Error::Config("seed must be a non-negative integer".into()))?,
        };
        let rest = Value::Object(obj);
        let experiment = match name.as_str() {
            "evolve" => Experiment::Evolve(params(rest)?),
            "linear_decay" => Experiment::LinearDecay(params(rest)?),
            "wavepacket" => Experiment::Wavepacket(params(rest)?),
            "scatter" => Experiment::Scatter(params(rest)?),
            "illposed" => Experiment::Illposed(params(rest)?),
            "norms" => Experiment::Norms(params(rest)?),
            "symbols" => Experiment::Symbols(params(rest)?),
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        };
        match &experiment {
            Experiment::Evolve(p) | Experiment::LinearDecay(p) => p.validate()?,
            Experiment::Wavepacket(p) => p.v.iter().try_for_each(|&v| positive("v", v))?,
            Experiment::Illposed(p) => {
                positive("eps", p.eps)?;
                positive("t", p.t)?;
            }
            Experiment::Norms(p) => positive("t", p.t)?,
            Experiment::Symbols(p) => {
                p.h.depth()?;
                positive("xi_max", p.xi_max)?;
                positive("v_range[0]", p.v_range[0])?;
                if !(p.v_range[1] > p.v_range[0]) || p.points < 2 {
                    return Err(Error::Config("symbols needs v_range[1] > v_range[0] and points >= 2".into()));
                }
            }
            Experiment::Scatter(_) => {}
        }
        Ok(ExperimentConfig { experiment, seed, raw })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Hex SHA-256 of the canonical (key-sorted) JSON text.
pub fn config_hash(v: &Value) -> String {
    let text = serde_json::to_string(v).expect("json value");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub config: Value,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<String>,
    pub constants: BTreeMap<String, f64>,
    pub status: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, Value>,
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Format(e.to_string()))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Grid;

    fn sample() -> Field {
        let g = Grid::new(8, 16, 3.0, 5.0).unwrap();
        let mut f = Field::from_fn(&g, Depth::Finite(0.7), |x, y| (x * 1.3).sin() + y * y * 1e-3 - 0.25);
        f.t = 12.5;
        f
    }

    #[test]
    fn roundtrip_is_exact() {
        let f = sample();
        let g = decode_field(&encode_field(&f).unwrap()).unwrap();
        assert_eq!(g.grid, f.grid);
        assert_eq!(g.t, f.t);
        assert_eq!(g.h, f.h);
        for (a, b) in f.data.iter().zip(g.data.iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
        }
    }

    #[test]
    fn infinite_depth_roundtrip() {
        let mut f = sample();
        f.h = Depth::Infinite;
        let b = encode_field(&f).unwrap();
        assert_eq!(&b[36..44], &f64::INFINITY.to_le_bytes());
        assert_eq!(decode_field(&b).unwrap().h, Depth::Infinite);
    }

    #[test]
    fn golden_bytes() {
        let g = Grid::new(8, 8, 2.0, 4.0).unwrap();
        let mut f = Field::from_fn(&g, Depth::Finite(1.0), |x, y| x + 10.0 * y);
        f.t = 0.5;
        let b = encode_field(&f).unwrap();
        let golden = include_bytes!("../tests/data/golden_8x8.ccf1");
        assert_eq!(b.as_slice(), golden.as_slice());
        let mut hex = String::new();
        for x in &b[..44] {
            hex.push_str(&format!("{x:02x}"));
        }
        assert_eq!(
            hex,
            concat!(
                "43434631", "08000000", "08000000", "0000000000000040", "0000000000001040",
                "000000000000e03f", "000000000000f03f"
            )
        );
    }

    #[test]
    fn bad_inputs() {
        let b = encode_field(&sample()).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_field(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_field(&b[..b.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_field(&b[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "evolve", "nx": 32, "ny": 32, "Lx": 40, "Ly": 40, "h": "inf",
                "t_end": 0, "amplitude": 0.05, "ic": "gaussian", "snapshot_every": 5, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        match c.experiment {
            Experiment::Evolve(p) => assert_eq!(p.h.depth().unwrap(), Depth::Infinite),
            e => panic!("{e:?}"),
        }
        let bad = [
            r#"{"experiment": "evolve", "nx": 32, "ny": 32, "Lx": 40, "Ly": 40, "h": 1, "t_end": 1, "ic": "gaussian", "colour": 1}"#,
            r#"{"experiment": "evolve", "nx": 32, "ny": 32, "Lx": -40, "Ly": 40, "h": 1, "t_end": 1, "ic": "gaussian"}"#,
            r#"{"experiment": "evolve", "nx": 32, "ny": 32, "Lx": 40, "Ly": 40, "h": "deep", "t_end": 1, "ic": "gaussian"}"#,
            r#"{"experiment": "warp", "nx": 32}"#,
            r#"{"experiment": "illposed", "p": 2, "eps": 0.1, "N": [16], "extra": true}"#,
            r#"[1, 2]"#,
            r#"{"experiment": "norms", "in": "a.ccf1", "t": 1"#,
        ];
        for b in bad {
            assert!(matches!(ExperimentConfig::from_json(b), Err(Error::Config(_))), "{b}");
        }
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"a": 1, "b": [1, 2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"b": [1, 2], "a": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
