use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Column layout of a fingerprint CSV.
///
/// Coordinates are used as-is in the file's planar units. The UJIIndoorLoc
/// `LONGITUDE`/`LATITUDE` columns are already projected metres, so no
/// reprojection happens for any preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Every header starting with this prefix is an AP column, in file order.
    pub ap_prefix: String,
    pub x: String,
    pub y: String,
    pub floor: String,
    /// Absent means a single building labelled 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building: Option<String>,
    /// Absent means the 0-based data row index is the sample id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub sentinel: f64,
}

/// On-disk form: an optional preset plus any overriding keys.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    preset: Option<String>,
    ap_prefix: Option<String>,
    x: Option<String>,
    y: Option<String>,
    floor: Option<String>,
    building: Option<String>,
    id: Option<String>,
    sentinel: Option<f64>,
}

impl DatasetSchema {
    pub const PRESETS: [&'static str; 3] = ["ujiindoorloc", "utsindoorloc", "tut-generic"];

    /// UJIIndoorLoc `trainingData.csv` / `validationData.csv`.
    pub fn ujiindoorloc() -> Self {
        Self {
            ap_prefix: "WAP".into(),
            x: "LONGITUDE".into(),
            y: "LATITUDE".into(),
            floor: "FLOOR".into(),
            building: Some("BUILDINGID".into()),
            id: None,
            sentinel: 100.0,
        }
    }

    /// UTSIndoorLoc CSV export. Some redistributions encode non-detection as
    /// -110 instead of 100; override `sentinel` for those.
    pub fn utsindoorloc() -> Self {
        Self {
            ap_prefix: "WAP".into(),
            x: "Pos_x".into(),
            y: "Pos_y".into(),
            floor: "Floor_ID".into(),
            building: Some("Building_ID".into()),
            id: None,
            sentinel: 100.0,
        }
    }

    /// TUT-style data merged into one CSV: `AP*` readings, `X`, `Y`,
    /// integer `FLOOR`, single building.
    pub fn tut_generic() -> Self {
        Self {
            ap_prefix: "AP".into(),
            x: "X".into(),
            y: "Y".into(),
            floor: "FLOOR".into(),
            building: None,
            id: None,
            sentinel: 100.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self, IngestError> {
        match name.to_ascii_lowercase().as_str() {
            "ujiindoorloc" | "uji" => Ok(Self::ujiindoorloc()),
            "utsindoorloc" | "uts" => Ok(Self::utsindoorloc()),
            "tut-generic" | "tut" => Ok(Self::tut_generic()),
            _ => Err(IngestError::UnknownPreset(name.to_string())),
        }
    }

    /// Parses a TOML schema file. `preset = "..."` supplies defaults for
    /// every key not given explicitly.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| IngestError::Schema(e.message().to_string()))?;
        let base = file.preset.as_deref().map(Self::preset).transpose()?;
        let pick = |v: Option<String>, b: Option<&String>, key: &str| {
            v.or_else(|| b.cloned())
                .ok_or_else(|| IngestError::Schema(format!("missing key `{key}`")))
        };
        Ok(Self {
            ap_prefix: pick(file.ap_prefix, base.as_ref().map(|b| &b.ap_prefix), "ap_prefix")?,
            x: pick(file.x, base.as_ref().map(|b| &b.x), "x")?,
            y: pick(file.y, base.as_ref().map(|b| &b.y), "y")?,
            floor: pick(file.floor, base.as_ref().map(|b| &b.floor), "floor")?,
            building: file
                .building
                .or_else(|| base.as_ref().and_then(|b| b.building.clone())),
            id: file.id.or_else(|| base.as_ref().and_then(|b| b.id.clone())),
            sentinel: file
                .sentinel
                .or(base.as_ref().map(|b| b.sentinel))
                .ok_or_else(|| IngestError::Schema("missing key `sentinel`".into()))?,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// A preset name, or else a path to a schema file.
    pub fn resolve(name_or_path: &str) -> Result<Self, IngestError> {
        match Self::preset(name_or_path) {
            Ok(s) => Ok(s),
            Err(IngestError::UnknownPreset(_)) if Path::new(name_or_path).exists() => {
                Self::from_file(Path::new(name_or_path))
            }
            Err(e) => Err(e),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in DatasetSchema::PRESETS {
            DatasetSchema::preset(name).unwrap();
        }
        assert_eq!(DatasetSchema::resolve("UJI").unwrap(), DatasetSchema::ujiindoorloc());
        assert!(matches!(
            DatasetSchema::resolve("nope"),
            Err(IngestError::UnknownPreset(_))
        ));
    }

    #[test]
    fn file_overrides_preset() {
        let s = DatasetSchema::parse("preset = \"utsindoorloc\"\nsentinel = -110.0\n").unwrap();
        assert_eq!(s.sentinel, -110.0);
        assert_eq!(s.x, "Pos_x");
    }

    #[test]
    fn file_without_preset_needs_all_keys() {
        let err = DatasetSchema::parse("ap_prefix = \"AP\"\nx = \"X\"\ny = \"Y\"\nsentinel = 100.0")
            .unwrap_err();
        assert!(err.to_string().contains("floor"), "{err}");
        assert!(DatasetSchema::parse("bogus = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = DatasetSchema::ujiindoorloc();
        assert_eq!(DatasetSchema::parse(&s.to_toml()).unwrap(), s);
    }
}
