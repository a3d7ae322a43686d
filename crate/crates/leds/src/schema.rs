//! JSON schema manifests: extendible type descriptors declared as data.
//!
//! ```json
//! { "types": [ {
//!     "name": "map_entry",
//!     "fields": [ { "name": "key", "offset": 0, "size": 4, "kind": "scalar" },
//!                 { "name": "value", "offset": 4, "size": 16, "kind": "object_id" } ],
//!     "extensions": [ {
//!         "fields": [ { "name": "key64", "offset": 0, "size": 8, "kind": "scalar" } ],
//!         "init": [ { "copy": { "from": "key", "conversion": "zero_extend" } } ]
//!     } ]
//! } ] }
//! ```
//!
//! Fingerprints are recomputed from the base fields on load, never read
//! from the file.

use std::path::Path;

use leds_core::kernels::{entry_descriptor, LayoutChange};
use leds_core::leds::{Conversion, FieldInit, FieldKind, FieldLayout, InitRule, TypeDescriptor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scalar,
    ObjectId,
    Bytes,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub offset: u64,
    pub size: u64,
    pub kind: Kind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convert {
    Raw,
    ZeroExtend,
    SignExtend,
    IntToFloat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Copy { from: String, conversion: Convert },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extension {
    pub fields: Vec<Field>,
    pub init: Vec<Init>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSchema {
    pub name: String,
    pub fields: Vec<Field>,
    #[serde(default)]
    pub extensions: Vec<Extension>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub types: Vec<TypeSchema>,
}

fn field_out(f: &FieldLayout) -> Field {
    let kind = match f.kind {
        FieldKind::Scalar => Kind::Scalar,
        FieldKind::ObjectId => Kind::ObjectId,
        FieldKind::Bytes => Kind::Bytes,
    };
    Field { name: f.name.clone(), offset: f.offset, size: f.size, kind }
}

fn field_in(f: &Field) -> FieldLayout {
    let kind = match f.kind {
        Kind::Scalar => FieldKind::Scalar,
        Kind::ObjectId => FieldKind::ObjectId,
        Kind::Bytes => FieldKind::Bytes,
    };
    FieldLayout::new(&f.name, f.offset, f.size, kind)
}

fn init_out(i: &FieldInit) -> Init {
    match i {
        FieldInit::Zero => Init::Zero,
        FieldInit::Copy { from, conversion } => Init::Copy {
            from: from.clone(),
            conversion: match conversion {
                Conversion::Raw => Convert::Raw,
                Conversion::ZeroExtend => Convert::ZeroExtend,
                Conversion::SignExtend => Convert::SignExtend,
                Conversion::IntToFloat => Convert::IntToFloat,
            },
        },
    }
}

fn init_in(i: &Init) -> FieldInit {
    match i {
        Init::Zero => FieldInit::Zero,
        Init::Copy { from, conversion } => FieldInit::Copy {
            from: from.clone(),
            conversion: match conversion {
                Convert::Raw => Conversion::Raw,
                Convert::ZeroExtend => Conversion::ZeroExtend,
                Convert::SignExtend => Conversion::SignExtend,
                Convert::IntToFloat => Conversion::IntToFloat,
            },
        },
    }
}

impl TypeSchema {
    pub fn from_descriptor(desc: &TypeDescriptor) -> Result<TypeSchema> {
        let extensions = desc
            .extensions
            .iter()
            .map(|e| match &e.init {
                InitRule::Fields(inits) => Ok(Extension {
                    fields: e.payload_fields.iter().map(field_out).collect(),
                    init: inits.iter().map(init_out).collect(),
                }),
                InitRule::Custom(_) => Err(Error::Manifest(format!(
                    "{}: extension {} has a code-defined init rule",
                    desc.name, e.level
                ))),
            })
            .collect::<Result<_>>()?;
        Ok(TypeSchema { name: desc.name.clone(), fields: desc.base_fields.iter().map(field_out).collect(), extensions })
    }

    pub fn to_descriptor(&self) -> Result<TypeDescriptor> {
        let mut desc = TypeDescriptor::define(&self.name, self.fields.iter().map(field_in).collect())?;
        for ext in &self.extensions {
            let fields = ext.fields.iter().map(field_in).collect();
            desc = desc.append_extension(fields, InitRule::Fields(ext.init.iter().map(init_in).collect()))?;
        }
        Ok(desc)
    }
}

impl Manifest {
    pub fn from_descriptors<'a>(descs: impl IntoIterator<Item = &'a TypeDescriptor>) -> Result<Manifest> {
        Ok(Manifest { types: descs.into_iter().map(TypeSchema::from_descriptor).collect::<Result<_>>()? })
    }

    /// Manifest of the map entry type, original (`None`) or with `change`.
    pub fn map_entries(change: Option<LayoutChange>) -> Manifest {
        Manifest::from_descriptors([&entry_descriptor(change)]).expect("field-rule descriptor")
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn descriptors(&self) -> Result<Vec<TypeDescriptor>> {
        self.types.iter().map(TypeSchema::to_descriptor).collect()
    }

    pub fn descriptor(&self, name: &str) -> Result<TypeDescriptor> {
        self.types
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Manifest(format!("no type named {name}")))?
            .to_descriptor()
    }

    /// Combined base-layout fingerprint of every declared type, in order.
    /// Appending extensions never changes it.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for d in self.descriptors()? {
            for b in d.name.bytes().chain([0]).chain(d.fingerprint().to_le_bytes()) {
                h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        for change in [None, Some(LayoutChange::Change), Some(LayoutChange::Add)] {
            let m = Manifest::map_entries(change);
            let back = Manifest::parse(&m.to_json()).unwrap();
            assert_eq!(back, m);
            let d = back.descriptor("map_entry").unwrap();
            assert_eq!(d.fingerprint(), entry_descriptor(change).fingerprint());
            assert_eq!(d.max_level(), u32::from(change.is_some()));
        }
    }

    #[test]
    fn fingerprint_ignores_extensions_but_not_base_edits() {
        let v1 = Manifest::map_entries(None).fingerprint().unwrap();
        assert_eq!(Manifest::map_entries(Some(LayoutChange::Change)).fingerprint().unwrap(), v1);
        let mut edited = Manifest::map_entries(Some(LayoutChange::Add));
        edited.types[0].fields.pop();
        assert_ne!(edited.fingerprint().unwrap(), v1);
    }

    #[test]
    fn invalid_layouts_are_reported() {
        let mut m = Manifest::map_entries(None);
        m.types[0].fields[1].offset = 2;
        assert!(matches!(m.descriptors(), Err(Error::Pool(leds_core::Error::OverlappingFields { .. }))));
        assert!(Manifest::parse("{\"types\": 3}").is_err());
    }
}
