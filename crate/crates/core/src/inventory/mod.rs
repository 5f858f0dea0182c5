//! Region content inventory: a three-level Merkle-hashed catalog
//! (object → file type → file), integrity verification and download diffing.
//!
//! Hash layout:
//!
//! ```text
//! FHash  = H(content ∥ canonical(file properties))
//! FTHash = MerkleRoot(FHash of each file, files sorted by name)
//! PHash  = H(canonical(object properties))
//! OHash  = MerkleRoot(PHash, FTHash of each type, types sorted by name)
//! ```
//!
//! Canonical properties are `key=value` lines sorted by key and joined by `\n`.

mod diff;
mod verify;
mod wire;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{merkle_root, sha256, sha256_concat, Coord, Digest, LogicalComputerId, ObjectId, RegionCoord, RegionId};

pub use diff::{diff_objects, DownloadPlan};
pub use verify::{verify_object, Verification};
pub use wire::{parse_inventory, parse_object, serialize_inventory, serialize_object};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InventoryError {
    #[error("file type `{0}` has no files")]
    EmptyFileType(String),
    #[error("duplicate file type `{0}`")]
    DuplicateFileType(String),
    #[error("duplicate file `{file}` in type `{type_name}`")]
    DuplicateFile { type_name: String, file: String },
    #[error("file `{file}` in type `{type_name}` carries no content")]
    MissingContent { type_name: String, file: String },
    #[error("object has no components")]
    NoComponents,
    #[error("reserved property key `{0}` used as an extension key")]
    ReservedKey(String),
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate object `{oid}` at {path}")]
    DuplicateObject { oid: String, path: String },
}

const RESERVED_KEYS: [&str; 5] = ["Name", "Author", "Version", "PHash", "FHash"];

fn canonical_lines(name: &str, author: &str, version: &str, extra: &BTreeMap<String, String>) -> String {
    let mut all: BTreeMap<&str, &str> = extra.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    all.insert("Name", name);
    all.insert("Author", author);
    all.insert("Version", version);
    all.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("\n")
}

fn check_extra(extra: &BTreeMap<String, String>) -> Result<(), InventoryError> {
    match extra.keys().find(|k| RESERVED_KEYS.contains(&k.as_str())) {
        Some(k) => Err(InventoryError::ReservedKey(k.clone())),
        None => Ok(()),
    }
}

/// Descriptive properties of a file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileProperties {
    #[serde(rename = "Name")]
    pub name: String,
    #[serde(rename = "Author", default, skip_serializing_if = "String::is_empty")]
    pub author: String,
    #[serde(rename = "Version", default, skip_serializing_if = "String::is_empty")]
    pub version: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, String>,
}

impl FileProperties {
    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn canonical(&self) -> String {
        canonical_lines(&self.name, &self.author, &self.version, &self.extra)
    }
}

/// Object properties plus their hash.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectProperties {
    #[serde(rename = "PHash")]
    pub phash: Digest,
    #[serde(rename = "Name")]
    pub name: String,
    #[serde(rename = "Author", default, skip_serializing_if = "String::is_empty")]
    pub author: String,
    #[serde(rename = "Version", default, skip_serializing_if = "String::is_empty")]
    pub version: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, String>,
}

impl ObjectProperties {
    pub fn new(name: impl Into<String>, author: impl Into<String>, version: impl Into<String>) -> Self {
        let mut props = Self {
            phash: Digest::default(),
            name: name.into(),
            author: author.into(),
            version: version.into(),
            extra: BTreeMap::new(),
        };
        props.phash = props.compute_hash();
        props
    }

    pub fn canonical(&self) -> String {
        canonical_lines(&self.name, &self.author, &self.version, &self.extra)
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(self.canonical().as_bytes())
    }
}

/// One resource file. `content` is the simulated payload and never appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    #[serde(rename = "FHash")]
    pub fhash: Digest,
    #[serde(rename = "FProperties")]
    pub properties: FileProperties,
    #[serde(skip)]
    pub content: Option<Vec<u8>>,
}

impl FileEntry {
    pub fn new(properties: FileProperties, content: Vec<u8>) -> Self {
        let fhash = file_hash(&content, &properties);
        Self { fhash, properties, content: Some(content) }
    }

    pub fn name(&self) -> &str {
        &self.properties.name
    }

    /// Catalog copy: same hashes, no payload.
    pub fn without_content(&self) -> Self {
        Self { content: None, ..self.clone() }
    }
}

/// Files of one class (texture, sound, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTypeGroup {
    #[serde(rename = "Type")]
    pub type_name: String,
    #[serde(rename = "FTHash")]
    pub fthash: Digest,
    #[serde(rename = "Files")]
    pub files: Vec<FileEntry>,
}

impl FileTypeGroup {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name() == name)
    }
}

/// An object description as listed in a region inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    #[serde(rename = "OID")]
    pub oid: ObjectId,
    #[serde(rename = "OHash")]
    pub ohash: Digest,
    #[serde(rename = "OCoord", with = "wire::coord_text")]
    pub ocoord: Coord,
    #[serde(rename = "LCID")]
    pub lcid: LogicalComputerId,
    #[serde(rename = "OProperties")]
    pub properties: ObjectProperties,
    #[serde(rename = "FileType", default)]
    pub file_types: Vec<FileTypeGroup>,
}

/// `H(content ∥ canonical(props))`.
pub fn file_hash(content: &[u8], props: &FileProperties) -> Digest {
    sha256_concat(&[content, props.canonical().as_bytes()])
}

impl ObjectEntry {
    /// Builds an object from property values and `(type, files)` groups;
    /// orders everything canonically and computes every hash.
    pub fn build(
        oid: ObjectId,
        ocoord: Coord,
        lcid: LogicalComputerId,
        properties: ObjectProperties,
        groups: Vec<(String, Vec<(FileProperties, Vec<u8>)>)>,
    ) -> Result<Self, InventoryError> {
        let file_types = groups
            .into_iter()
            .map(|(type_name, files)| FileTypeGroup {
                type_name,
                fthash: Digest::default(),
                files: files.into_iter().map(|(p, c)| FileEntry::new(p, c)).collect(),
            })
            .collect();
        let obj = ObjectEntry {
            oid,
            ohash: Digest::default(),
            ocoord,
            lcid,
            properties,
            file_types,
        };
        recompute_hashes(&obj)
    }

    pub fn file_type(&self, type_name: &str) -> Option<&FileTypeGroup> {
        self.file_types.iter().find(|g| g.type_name == type_name)
    }

    pub fn file_count(&self) -> usize {
        self.file_types.iter().map(|g| g.files.len()).sum()
    }

    /// Total simulated payload bytes carried by this entry.
    pub fn payload_bytes(&self) -> u64 {
        self.file_types
            .iter()
            .flat_map(|g| &g.files)
            .map(|f| f.content.as_ref().map_or(0, |c| c.len() as u64))
            .sum()
    }

    /// The catalog form of this object: hashes and properties only.
    pub fn catalog(&self) -> Self {
        let mut out = self.clone();
        for group in &mut out.file_types {
            for file in &mut group.files {
                file.content = None;
            }
        }
        out
    }

    /// `[PHash, FTHash...]`, the leaves of the object-level tree.
    pub fn component_hashes(&self) -> Vec<Digest> {
        std::iter::once(self.properties.phash)
            .chain(self.file_types.iter().map(|g| g.fthash))
            .collect()
    }

    /// Sorts types by name and files by name.
    pub fn canonicalize(&mut self) {
        self.file_types.sort_by(|a, b| a.type_name.cmp(&b.type_name));
        for group in &mut self.file_types {
            group.files.sort_by(|a, b| a.properties.name.cmp(&b.properties.name));
        }
    }

    fn check_structure(&self) -> Result<(), InventoryError> {
        check_extra(&self.properties.extra)?;
        let mut types = BTreeSet::new();
        for group in &self.file_types {
            if !types.insert(group.type_name.as_str()) {
                return Err(InventoryError::DuplicateFileType(group.type_name.clone()));
            }
            if group.files.is_empty() {
                return Err(InventoryError::EmptyFileType(group.type_name.clone()));
            }
            let mut names = BTreeSet::new();
            for file in &group.files {
                check_extra(&file.properties.extra)?;
                if !names.insert(file.name()) {
                    return Err(InventoryError::DuplicateFile {
                        type_name: group.type_name.clone(),
                        file: file.name().to_owned(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Recomputes FHash, FTHash, PHash and OHash bottom-up from file content and
/// property values. Every file must carry content.
pub fn recompute_hashes(obj: &ObjectEntry) -> Result<ObjectEntry, InventoryError> {
    obj.check_structure()?;
    let mut out = obj.clone();
    out.canonicalize();
    for group in &mut out.file_types {
        for file in &mut group.files {
            let content = file.content.as_ref().ok_or_else(|| InventoryError::MissingContent {
                type_name: group.type_name.clone(),
                file: file.properties.name.clone(),
            })?;
            file.fhash = file_hash(content, &file.properties);
        }
        let leaves: Vec<Digest> = group.files.iter().map(|f| f.fhash).collect();
        group.fthash = merkle_root(&leaves).map_err(|_| InventoryError::EmptyFileType(group.type_name.clone()))?;
    }
    out.properties.phash = out.properties.compute_hash();
    out.ohash = merkle_root(&out.component_hashes()).map_err(|_| InventoryError::NoComponents)?;
    Ok(out)
}

/// A region's content inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    #[serde(rename = "RID")]
    pub rid: RegionId,
    #[serde(rename = "RCoord", with = "wire::region_text")]
    pub rcoord: RegionCoord,
    #[serde(rename = "Object", default)]
    pub objects: Vec<ObjectEntry>,
}

impl Inventory {
    pub fn new(rid: RegionId, rcoord: RegionCoord) -> Self {
        Self { rid, rcoord, objects: Vec::new() }
    }

    pub fn object(&self, oid: &ObjectId) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| &o.oid == oid)
    }

    /// Inserts or replaces an object (catalog form) keyed by OID.
    pub fn upsert(&mut self, obj: ObjectEntry) {
        let obj = obj.catalog();
        match self.objects.iter_mut().find(|o| o.oid == obj.oid) {
            Some(slot) => *slot = obj,
            None => self.objects.push(obj),
        }
    }

    pub fn remove(&mut self, oid: &ObjectId) -> Option<ObjectEntry> {
        let pos = self.objects.iter().position(|o| &o.oid == oid)?;
        Some(self.objects.remove(pos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Digest;

    pub(crate) fn sample_object(types: usize, files: usize, seed: u8) -> ObjectEntry {
        let groups = (0..types)
            .map(|t| {
                let fs = (0..files)
                    .map(|f| (FileProperties::named(format!("file{f:02}")), vec![seed, t as u8, f as u8, 7]))
                    .collect();
                (format!("type{t:02}"), fs)
            })
            .collect();
        ObjectEntry::build(
            ObjectId::new(format!("obj-{seed}")),
            Coord::new(10.0, 20.0),
            LogicalComputerId::new("LC-1"),
            ObjectProperties::new("Object", "Author", "1"),
            groups,
        )
        .unwrap()
    }

    fn h2(a: &Digest, b: &Digest) -> Digest {
        let mut buf = a.0.to_vec();
        buf.extend_from_slice(&b.0);
        sha256(&buf)
    }

    #[test]
    fn file_hash_examples() {
        let empty = FileProperties::default();
        // empty content, empty props: canonical text is the three fixed keys
        assert_eq!(file_hash(b"", &empty), sha256(b"Author=\nName=\nVersion="));
        assert_eq!(file_hash(b"abc", &empty), file_hash(b"abc", &empty));
        let mut reference = b"abd".to_vec();
        reference.extend_from_slice(empty.canonical().as_bytes());
        assert_eq!(file_hash(b"abd", &empty), sha256(&reference));
        assert_ne!(file_hash(b"abc", &empty), file_hash(b"abd", &empty));
    }

    #[test]
    fn properties_only_object_hash_is_phash() {
        let obj = sample_object(0, 0, 1);
        assert_eq!(obj.ohash, obj.properties.phash);
    }

    #[test]
    fn one_type_two_files() {
        let obj = sample_object(1, 2, 1);
        let f1 = obj.file_types[0].files[0].fhash;
        let f2 = obj.file_types[0].files[1].fhash;
        assert_eq!(obj.file_types[0].fthash, h2(&f1, &f2));
        assert_eq!(obj.ohash, h2(&obj.properties.phash, &h2(&f1, &f2)));
    }

    #[test]
    fn flipping_a_byte_changes_only_its_branch() {
        let obj = sample_object(3, 2, 1);
        let mut mutated = obj.clone();
        mutated.file_types[1].files[0].content.as_mut().unwrap()[0] ^= 1;
        let mutated = recompute_hashes(&mutated).unwrap();
        assert_ne!(mutated.file_types[1].files[0].fhash, obj.file_types[1].files[0].fhash);
        assert_ne!(mutated.file_types[1].fthash, obj.file_types[1].fthash);
        assert_ne!(mutated.ohash, obj.ohash);
        assert_eq!(mutated.file_types[0].fthash, obj.file_types[0].fthash);
        assert_eq!(mutated.file_types[2].fthash, obj.file_types[2].fthash);
        assert_eq!(mutated.file_types[1].files[1].fhash, obj.file_types[1].files[1].fhash);
    }

    #[test]
    fn recompute_rejects_bad_structure() {
        let mut obj = sample_object(1, 1, 1);
        obj.file_types[0].files.clear();
        assert!(matches!(recompute_hashes(&obj), Err(InventoryError::EmptyFileType(_))));
        let catalog = sample_object(1, 1, 1).catalog();
        assert!(matches!(recompute_hashes(&catalog), Err(InventoryError::MissingContent { .. })));
    }

    #[test]
    fn canonical_order_is_applied() {
        let obj = ObjectEntry::build(
            ObjectId::new("o"),
            Coord::default(),
            LogicalComputerId::new("lc"),
            ObjectProperties::new("n", "a", "v"),
            vec![
                ("texture".into(), vec![(FileProperties::named("b"), vec![1]), (FileProperties::named("a"), vec![2])]),
                ("animation".into(), vec![(FileProperties::named("z"), vec![3])]),
            ],
        )
        .unwrap();
        assert_eq!(obj.file_types[0].type_name, "animation");
        assert_eq!(obj.file_types[1].files[0].name(), "a");
    }
}
