//! Editable rule tables driving QA generation: semantic class catalog, room
//! classification scores, affordance suitability, and the color-name palette.
//!
//! Built-in defaults are embedded; each table can be replaced via the global
//! config by pointing at a file with the same format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::decode_scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u16,
    pub name: String,
    #[serde(default)]
    pub structural: bool,
    #[serde(default)]
    pub flat: bool,
}

/// Semantic class catalog keyed by raster id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    by_id: BTreeMap<u16, ClassInfo>,
}

#[derive(Deserialize)]
struct ClassFile {
    class: Vec<ClassInfo>,
}

pub const DEFAULT_CLASSES_TOML: &str = include_str!("../../data/classes.toml");

impl ClassTable {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CLASSES_TOML).expect("built-in class table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("class table {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ClassFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("class table: {e}")))?;
        let mut by_id = BTreeMap::new();
        let mut names = BTreeMap::new();
        for info in file.class {
            if info.id == 0 {
                return Err(Error::Config("class id 0 is reserved for unlabeled".into()));
            }
            if let Some(prev) = names.insert(info.name.clone(), info.id) {
                return Err(Error::Config(format!(
                    "class name {:?} used by ids {prev} and {}",
                    info.name, info.id
                )));
            }
            if by_id.insert(info.id, info).is_some() {
                return Err(Error::Config("duplicate class id".into()));
            }
        }
        if by_id.is_empty() {
            return Err(Error::Config("class table is empty".into()));
        }
        Ok(ClassTable { by_id })
    }

    pub fn get(&self, id: u16) -> Option<&ClassInfo> {
        self.by_id.get(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassInfo> {
        self.by_id.values().find(|c| c.name == name)
    }

    /// All non-structural classes, in id order: the corpus vocabulary for
    /// object-recognition questions.
    pub fn object_vocabulary(&self) -> impl Iterator<Item = &ClassInfo> {
        self.by_id.values().filter(|c| !c.structural)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomRule {
    pub name: String,
    /// Class name -> presence score.
    pub scores: BTreeMap<String, f64>,
}

/// Room classification table; file order is both the tie-break priority and
/// the fixed room-category choice list.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomRules {
    pub rooms: Vec<RoomRule>,
}

#[derive(Deserialize)]
struct RoomFile {
    room: Vec<RoomRule>,
}

pub const DEFAULT_ROOMS_TOML: &str = include_str!("../../data/rooms.toml");

impl RoomRules {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ROOMS_TOML).expect("built-in room table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("room table {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: RoomFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("room table: {e}")))?;
        if file.room.is_empty() {
            return Err(Error::Config("room table is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for room in &file.room {
            if !seen.insert(&room.name) {
                return Err(Error::Config(format!("duplicate room {:?}", room.name)));
            }
        }
        Ok(RoomRules { rooms: file.room })
    }

    pub fn names(&self) -> Vec<String> {
        self.rooms.iter().map(|r| r.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affordance {
    pub activity: String,
    /// Rooms where the activity is suitable.
    pub rooms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceTable {
    pub entries: Vec<Affordance>,
}

#[derive(Deserialize)]
struct AffordanceFile {
    affordance: Vec<Affordance>,
}

pub const DEFAULT_AFFORDANCES_TOML: &str = include_str!("../../data/affordances.toml");

impl AffordanceTable {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_AFFORDANCES_TOML).expect("built-in affordance table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("affordance table {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: AffordanceFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("affordance table: {e}")))?;
        if file.affordance.is_empty() {
            return Err(Error::Config("affordance table is empty".into()));
        }
        Ok(AffordanceTable {
            entries: file.affordance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct PaletteEntryFile {
    name: String,
    srgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaletteEntry {
    pub name: String,
    pub srgb: [u8; 3],
    /// Decoded linear-RGB coordinates used for nearest-name lookup.
    pub linear: [f64; 3],
}

/// Fixed color-name palette.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub entries: Vec<PaletteEntry>,
}

#[derive(Deserialize)]
struct PaletteFile {
    color: Vec<PaletteEntryFile>,
}

pub const DEFAULT_PALETTE_TOML: &str = include_str!("../../data/palette.toml");

impl Palette {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PALETTE_TOML).expect("built-in palette parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("palette {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: PaletteFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("palette: {e}")))?;
        if file.color.len() < 2 {
            return Err(Error::Config("palette needs at least two names".into()));
        }
        let entries = file
            .color
            .into_iter()
            .map(|e| {
                let linear = std::array::from_fn(|i| decode_scalar(e.srgb[i] as f64 / 255.0));
                PaletteEntry {
                    name: e.name,
                    srgb: e.srgb,
                    linear,
                }
            })
            .collect();
        Ok(Palette { entries })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn srgb_of(&self, name: &str) -> Option<[u8; 3]> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.srgb)
    }

    /// Nearest color name by Euclidean distance in linear RGB. Returns `None`
    /// when the two nearest names are within the ambiguity ratio of each
    /// other (`d1 > ratio * d2`).
    pub fn name_color(&self, linear_rgb: [f64; 3], ambiguity_ratio: f64) -> Option<&str> {
        let mut dists: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d = (0..3)
                    .map(|c| (linear_rgb[c] - e.linear[c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (d, i)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (d1, best) = dists[0];
        let (d2, _) = dists[1];
        if d1 > ambiguity_ratio * d2 {
            return None;
        }
        Some(&self.entries[best].name)
    }
}

/// All four tables bundled, with cross-references checked.
#[derive(Debug, Clone, PartialEq)]
pub struct QaTables {
    pub classes: ClassTable,
    pub rooms: RoomRules,
    pub affordances: AffordanceTable,
    pub palette: Palette,
}

impl QaTables {
    pub fn builtin() -> Self {
        let tables = QaTables {
            classes: ClassTable::builtin(),
            rooms: RoomRules::builtin(),
            affordances: AffordanceTable::builtin(),
            palette: Palette::builtin(),
        };
        tables.validate().expect("built-in tables are consistent");
        tables
    }

    pub fn validate(&self) -> Result<()> {
        let room_names: Vec<&str> = self.rooms.rooms.iter().map(|r| r.name.as_str()).collect();
        for room in &self.rooms.rooms {
            for class in room.scores.keys() {
                if self.classes.by_name(class).is_none() {
                    return Err(Error::Config(format!(
                        "room {:?} scores unknown class {class:?}",
                        room.name
                    )));
                }
            }
        }
        for entry in &self.affordances.entries {
            for room in &entry.rooms {
                if !room_names.contains(&room.as_str()) {
                    return Err(Error::Config(format!(
                        "affordance {:?} references unknown room {room:?}",
                        entry.activity
                    )));
                }
            }
        }
        // Room-type questions list every room as a choice; the multiple-choice
        // contract allows at most 6.
        if self.rooms.rooms.len() > 6 {
            return Err(Error::Config(
                "room table exceeds the 6-choice limit for room-type questions".into(),
            ));
        }
        Ok(())
    }
}
