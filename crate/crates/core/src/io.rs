//! JSON interchange: plant descriptions, alpha-parametric plant families,
//! builtin benchmarks and the reference-value fixtures.
//!
//! A plant is an object with any of the keys `A`, `B1`, `B2`, `C1`, `C2`,
//! `D11`, `D12`, `D21`, `D22`, each a row-major nested array. Absent keys are
//! zero blocks and dimensions are inferred. A family adds `alpha_slot`, a
//! list of `{ "matrix": name, "row": i?, "col": j? }` entries marking which
//! entries are multiplied by `alpha`; omitting `row` or `col` selects the
//! whole column or row.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};
use crate::qc::QcKind;
use crate::sysmodel::{build_lurye, gain_example, PlantMatrices, StateSpace};

pub const MATRIX_KEYS: [&str; 9] = ["A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22"];
const ALPHA_SLOT_KEY: &str = "alpha_slot";

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_object(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text).map_err(|e| parse_err(e.to_string()))? {
        Value::Object(map) => Ok(map),
        other => Err(parse_err(format!("expected a JSON object, found {}", kind_of(&other)))),
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn parse_matrix(name: &str, value: &Value) -> Result<DMatrix<f64>> {
    let rows = value
        .as_array()
        .ok_or_else(|| parse_err(format!("{name}: expected an array of rows")))?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| parse_err(format!("{name}: row {i} is not an array")))?;
        let nums = row
            .iter()
            .enumerate()
            .map(|(j, x)| {
                x.as_f64()
                    .ok_or_else(|| parse_err(format!("{name}[{i}][{j}]: expected a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        parsed.push(nums);
    }
    from_rows(&parsed, 0).ok_or_else(|| parse_err(format!("{name}: rows have unequal lengths")))
}

fn plant_from_map(map: &Map<String, Value>, extra: &[&str]) -> Result<StateSpace> {
    if let Some(key) = map
        .keys()
        .find(|k| !MATRIX_KEYS.contains(&k.as_str()) && !extra.contains(&k.as_str()))
    {
        return Err(parse_err(format!("unknown key \"{key}\"")));
    }
    let get = |key: &str| map.get(key).map(|v| parse_matrix(key, v)).transpose();
    StateSpace::new(PlantMatrices {
        a: get("A")?,
        b1: get("B1")?,
        b2: get("B2")?,
        c1: get("C1")?,
        c2: get("C2")?,
        d11: get("D11")?,
        d12: get("D12")?,
        d21: get("D21")?,
        d22: get("D22")?,
    })
}

/// Parse a plant description.
pub fn parse_system(text: &str) -> Result<StateSpace> {
    plant_from_map(&parse_object(text)?, &[])
}

// Zero-row blocks are omitted: `[]` has no column count, and the parser
// infers absent blocks from the remaining dimensions.
fn system_map(ss: &StateSpace) -> Map<String, Value> {
    ss.blocks()
        .iter()
        .filter(|(_, m)| m.nrows() > 0)
        .map(|(name, m)| ((*name).to_string(), serde_json::json!(to_rows(m))))
        .collect()
}

/// Serialize a plant with every nonempty block explicit.
pub fn system_to_json(ss: &StateSpace) -> String {
    serde_json::to_string_pretty(&Value::Object(system_map(ss))).expect("finite entries")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSlot {
    pub matrix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

/// Plant whose marked entries scale linearly with a nonnegative `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricFamily {
    base: StateSpace,
    slots: Vec<AlphaSlot>,
}

impl ParametricFamily {
    pub fn new(base: StateSpace, slots: Vec<AlphaSlot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(parse_err("alpha_slot must name at least one entry"));
        }
        for slot in &slots {
            let (_, m) = base
                .blocks()
                .into_iter()
                .find(|(name, _)| *name == slot.matrix)
                .ok_or_else(|| parse_err(format!("alpha_slot names unknown matrix \"{}\"", slot.matrix)))?;
            let in_range = slot.row.is_none_or(|r| r < m.nrows()) && slot.col.is_none_or(|c| c < m.ncols());
            if !in_range {
                return Err(parse_err(format!(
                    "alpha_slot entry {:?} is outside {} ({}x{})",
                    (slot.row, slot.col),
                    slot.matrix,
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { base, slots })
    }

    pub fn base(&self) -> &StateSpace {
        &self.base
    }

    pub fn slots(&self) -> &[AlphaSlot] {
        &self.slots
    }

    /// Plant at `alpha`. An entry named by several slots is scaled once.
    pub fn build(&self, alpha: f64) -> Result<StateSpace> {
        if !alpha.is_finite() {
            return Err(Error::NonFinite("alpha".into()));
        }
        if alpha < 0.0 {
            return Err(Error::NegativeAlpha(alpha));
        }
        let mut blocks: Vec<(&str, DMatrix<f64>, DMatrix<bool>)> = self
            .base
            .blocks()
            .into_iter()
            .map(|(name, m)| (name, m.clone(), DMatrix::from_element(m.nrows(), m.ncols(), false)))
            .collect();
        for slot in &self.slots {
            let (_, _, mask) = blocks
                .iter_mut()
                .find(|(name, _, _)| *name == slot.matrix)
                .expect("validated at construction");
            let rows = slot.row.map_or(0..mask.nrows(), |r| r..r + 1);
            for i in rows {
                let cols = slot.col.map_or(0..mask.ncols(), |c| c..c + 1);
                for j in cols {
                    mask[(i, j)] = true;
                }
            }
        }
        let mut scaled = blocks.iter_mut().map(|(_, m, mask)| {
            m.zip_apply(mask, |x, marked| {
                if marked {
                    *x *= alpha;
                }
            });
            Some(m.clone())
        });
        let mut next = || scaled.next().expect("nine blocks");
        StateSpace::new(PlantMatrices {
            a: next(),
            b1: next(),
            b2: next(),
            c1: next(),
            c2: next(),
            d11: next(),
            d12: next(),
            d21: next(),
            d22: next(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut map = system_map(&self.base);
        map.insert(ALPHA_SLOT_KEY.into(), serde_json::to_value(&self.slots).expect("plain data"));
        serde_json::to_string_pretty(&Value::Object(map)).expect("finite entries")
    }
}

/// Parse a parametric family description.
pub fn parse_family(text: &str) -> Result<ParametricFamily> {
    let map = parse_object(text)?;
    let slots = map
        .get(ALPHA_SLOT_KEY)
        .ok_or_else(|| parse_err("family is missing \"alpha_slot\""))?;
    let slots: Vec<AlphaSlot> = serde_json::from_value(slots.clone())
        .map_err(|e| parse_err(format!("alpha_slot: {e}")))?;
    let base = plant_from_map(&map, &[ALPHA_SLOT_KEY])?;
    ParametricFamily::new(base, slots)
}

/// The Lurye benchmark as a family with `C1` scaled by `alpha`.
pub fn lurye_family() -> ParametricFamily {
    let base = build_lurye(1.0).expect("benchmark data is consistent");
    ParametricFamily::new(base, vec![AlphaSlot { matrix: "C1".into(), row: None, col: None }])
        .expect("C1 exists")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Lurye,
    GainExample,
}

impl Benchmark {
    pub const ALL: [Benchmark; 2] = [Benchmark::Lurye, Benchmark::GainExample];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Lurye => "lurye",
            Benchmark::GainExample => "gain-example",
        }
    }

    /// The builtin plant; the Lurye family needs `alpha`.
    pub fn system(self, alpha: Option<f64>) -> Result<StateSpace> {
        match (self, alpha) {
            (Benchmark::Lurye, Some(alpha)) => build_lurye(alpha),
            (Benchmark::Lurye, None) => {
                Err(Error::InvalidOptions("the lurye benchmark needs alpha".into()))
            }
            (Benchmark::GainExample, _) => Ok(gain_example()),
        }
    }

    pub fn family(self) -> Option<ParametricFamily> {
        match self {
            Benchmark::Lurye => Some(lurye_family()),
            Benchmark::GainExample => None,
        }
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidOptions(format!("unknown benchmark \"{s}\" (expected lurye or gain-example)")))
    }
}

pub const REFERENCE_VERSION: u32 = 1;
const REFERENCE_JSON: &str = include_str!("../fixtures/reference_values.json");

/// Published values for one benchmark table, one column per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTable {
    pub horizons: Vec<usize>,
    pub relu: Vec<f64>,
    pub dh: Vec<f64>,
}

impl ReferenceTable {
    pub fn value(&self, kind: QcKind, horizon: usize) -> Option<f64> {
        let col = self.horizons.iter().position(|&h| h == horizon)?;
        let row = match kind {
            QcKind::ReluFull => &self.relu,
            QcKind::DoublyHyperdominant => &self.dh,
        };
        row.get(col).copied()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(parse_err(format!("{name}: horizons must be nonempty and positive")));
        }
        if self.relu.len() != self.horizons.len() || self.dh.len() != self.horizons.len() {
            return Err(parse_err(format!("{name}: one value per horizon is required")));
        }
        if self.relu.iter().chain(&self.dh).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(parse_err(format!("{name}: values must be finite and nonnegative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValues {
    pub version: u32,
    pub stability_table: ReferenceTable,
    pub gain_table: ReferenceTable,
    pub nyquist_gain: f64,
    pub circle_margin: f64,
}

pub fn parse_reference_values(text: &str) -> Result<ReferenceValues> {
    let refs: ReferenceValues = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if refs.version != REFERENCE_VERSION {
        return Err(parse_err(format!(
            "reference values version {} (supported: {REFERENCE_VERSION})",
            refs.version
        )));
    }
    refs.stability_table.validate("stability_table")?;
    refs.gain_table.validate("gain_table")?;
    Ok(refs)
}

/// The bundled reference fixtures.
pub fn reference_values() -> ReferenceValues {
    parse_reference_values(REFERENCE_JSON).expect("bundled fixtures are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lurye_from_text_with_defaulted_blocks() {
        let ss = parse_system(r#"{"A": [[0.5, 0], [1, 0]], "B1": [[1], [0]], "C1": [[2, 0.92]]}"#)
            .unwrap();
        let d = ss.dims();
        assert_eq!((d.n_x, d.n_v, d.n_w, d.n_d, d.n_e), (2, 1, 1, 0, 0));
        assert_eq!(ss.d11(), &DMatrix::zeros(1, 1));
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        for bad in [
            "[]",
            "{",
            r#"{"A": [[1, 2], [3]]}"#,
            r#"{"A": [["x"]]}"#,
            r#"{"A": [1, 2]}"#,
            r#"{"a": [[1]]}"#,
            r#"{"A": [[1]], "alpha_slot": []}"#,
        ] {
            assert!(matches!(parse_system(bad), Err(Error::Parse(_))), "{bad}");
        }
        assert!(matches!(
            parse_system(r#"{"A": [[1, 0], [0, 1]], "B1": [[1], [0], [0]]}"#),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn system_round_trip() {
        let ss = gain_example();
        assert_eq!(parse_system(&system_to_json(&ss)).unwrap(), ss);
    }

    #[test]
    fn zero_output_plant_round_trips() {
        let text = r#"{"A": [[0.9, 0.1], [0.0, 0.8]], "B1": [[1.0], [0.0]], "C1": [[0.0, 1.0]]}"#;
        let ss = parse_system(text).unwrap();
        assert_eq!(ss.c2().shape(), (0, 2));
        assert_eq!(parse_system(&system_to_json(&ss)).unwrap(), ss);
        let none = parse_system(r#"{"A": [[0.5]], "B2": [[]]}"#).unwrap();
        assert_eq!(none.b2().shape(), (1, 0));
        assert_eq!(parse_system(&system_to_json(&none)).unwrap(), none);
    }

    #[test]
    fn lurye_family_matches_builder() {
        let fam = lurye_family();
        for alpha in [0.0, 0.6516, 3.0] {
            assert_eq!(fam.build(alpha).unwrap(), build_lurye(alpha).unwrap());
        }
        let reparsed = parse_family(&fam.to_json()).unwrap();
        assert_eq!(reparsed, fam);
        assert_eq!(fam.build(-1.0), Err(Error::NegativeAlpha(-1.0)));
    }

    #[test]
    fn family_slots_select_entries() {
        let fam = parse_family(
            r#"{"A": [[1, 2], [3, 4]], "alpha_slot": [{"matrix": "A", "row": 0, "col": 1},
                                                        {"matrix": "A", "col": 1}]}"#,
        )
        .unwrap();
        let ss = fam.build(10.0).unwrap();
        assert_eq!(ss.a(), &DMatrix::from_row_slice(2, 2, &[1.0, 20.0, 3.0, 40.0]));
        for bad in [
            r#"{"A": [[1]]}"#,
            r#"{"A": [[1]], "alpha_slot": []}"#,
            r#"{"A": [[1]], "alpha_slot": [{"matrix": "Z"}]}"#,
            r#"{"A": [[1]], "alpha_slot": [{"matrix": "A", "row": 1}]}"#,
            r#"{"A": [[1]], "alpha_slot": [{"matrix": "A", "extra": 1}]}"#,
        ] {
            assert!(matches!(parse_family(bad), Err(Error::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn benchmarks_resolve_by_name() {
        assert_eq!("lurye".parse::<Benchmark>().unwrap(), Benchmark::Lurye);
        assert_eq!("gain-example".parse::<Benchmark>().unwrap(), Benchmark::GainExample);
        assert!("other".parse::<Benchmark>().is_err());
        assert!(Benchmark::Lurye.system(None).is_err());
        assert_eq!(Benchmark::GainExample.system(None).unwrap().dims().n_x, 4);
    }

    #[test]
    fn bundled_reference_values() {
        let refs = reference_values();
        assert_eq!(refs.stability_table.value(QcKind::ReluFull, 8), Some(33.472));
        assert_eq!(refs.gain_table.value(QcKind::DoublyHyperdominant, 3), Some(7.992));
        assert_eq!(refs.gain_table.value(QcKind::ReluFull, 7), None);
        let mut text = REFERENCE_JSON.replace("\"version\": 1", "\"version\": 9");
        assert!(parse_reference_values(&text).is_err());
        text = REFERENCE_JSON.replace("\"nyquist_gain\"", "\"nyquist\"");
        assert!(parse_reference_values(&text).is_err());
    }
}
