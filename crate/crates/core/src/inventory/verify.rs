use crate::model::{merkle_root, Digest};

use super::{file_hash, ObjectEntry};

/// Outcome of an integrity check.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verification {
    /// Paths of inconsistent nodes: `properties`, `object`,
    /// `FileType[t]` or `FileType[t]/Files[name]`.
    pub violations: Vec<String>,
    /// Tree nodes whose stored hash was compared during the descent.
    pub visited: usize,
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares stored hashes with values recomputed from content and
/// properties, descending only into branches whose hashes disagree.
///
/// Files without content are taken at their stored hash, so a catalog entry
/// is checked for internal consistency only. The property leaf is checked as
/// part of the object node, which has no other way to fail independently.
pub fn verify_object(obj: &ObjectEntry) -> Verification {
    let mut out = Verification::default();

    let fresh_phash = obj.properties.compute_hash();
    let fresh_types: Vec<(Vec<Digest>, Option<Digest>)> = obj
        .file_types
        .iter()
        .map(|g| {
            let fhashes: Vec<Digest> = g
                .files
                .iter()
                .map(|f| f.content.as_ref().map_or(f.fhash, |c| file_hash(c, &f.properties)))
                .collect();
            let root = merkle_root(&fhashes).ok();
            (fhashes, root)
        })
        .collect();
    let mut leaves = vec![fresh_phash];
    leaves.extend(fresh_types.iter().map(|(_, root)| root.unwrap_or_default()));
    let fresh_ohash = merkle_root(&leaves).expect("at least the property leaf");

    out.visited += 1;
    if obj.properties.phash != fresh_phash {
        out.violations.push("properties".to_owned());
    }
    let stored_root = merkle_root(&obj.component_hashes()).expect("at least the property leaf");
    if obj.ohash == fresh_ohash && stored_root == obj.ohash {
        return out;
    }

    for (group, (fhashes, fresh_root)) in obj.file_types.iter().zip(&fresh_types) {
        out.visited += 1;
        if Some(group.fthash) == *fresh_root {
            continue;
        }
        let mut file_bad = false;
        for (file, fresh) in group.files.iter().zip(fhashes) {
            out.visited += 1;
            if file.fhash != *fresh {
                file_bad = true;
                out.violations.push(format!("FileType[{}]/Files[{}]", group.type_name, file.name()));
            }
        }
        if !file_bad {
            out.violations.push(format!("FileType[{}]", group.type_name));
        }
    }
    if out.violations.is_empty() {
        out.violations.push("object".to_owned());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::tests::sample_object;

    #[test]
    fn fresh_object_is_clean() {
        let obj = sample_object(3, 3, 4);
        let v = verify_object(&obj);
        assert!(v.is_ok());
        assert_eq!(v.visited, 1);
        assert!(verify_object(&obj.catalog()).is_ok());
    }

    #[test]
    fn single_corrupted_file_in_eight_by_eight() {
        let mut obj = sample_object(8, 8, 2);
        obj.file_types[5].files[3].content.as_mut().unwrap()[1] ^= 0x80;
        let v = verify_object(&obj);
        assert_eq!(v.violations, vec!["FileType[type05]/Files[file03]".to_owned()]);
        assert_eq!(v.visited, 1 + 8 + 8);
    }

    #[test]
    fn corrupted_phash_only() {
        let mut obj = sample_object(2, 2, 3);
        obj.properties.phash.0[0] ^= 1;
        assert_eq!(verify_object(&obj).violations, vec!["properties".to_owned()]);
    }

    #[test]
    fn corrupted_ohash_and_fthash() {
        let mut obj = sample_object(2, 2, 3);
        obj.ohash.0[5] ^= 1;
        assert_eq!(verify_object(&obj).violations, vec!["object".to_owned()]);

        let mut obj = sample_object(2, 2, 3);
        obj.file_types[1].fthash.0[0] ^= 1;
        let v = verify_object(&obj);
        assert!(v.violations.contains(&"FileType[type01]".to_owned()), "{:?}", v.violations);
    }
}
