use std::collections::BTreeSet;

use super::ObjectEntry;

/// What must be fetched to bring a local copy up to date with a remote entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DownloadPlan {
    pub object_needed: bool,
    pub stale_property_block: bool,
    /// `(type name, file name)` pairs whose payload must be transferred.
    pub stale_files: BTreeSet<(String, String)>,
}

impl DownloadPlan {
    pub fn is_empty(&self) -> bool {
        !self.object_needed && !self.stale_property_block && self.stale_files.is_empty()
    }

    pub fn file_transfers(&self) -> usize {
        self.stale_files.len()
    }
}

/// Hash-cascade comparison: OHash, then PHash, then FTHash per type, then
/// FHash per file of a mismatching type.
pub fn diff_objects(local: Option<&ObjectEntry>, remote: &ObjectEntry) -> DownloadPlan {
    let all_files = || {
        remote
            .file_types
            .iter()
            .flat_map(|g| g.files.iter().map(move |f| (g.type_name.clone(), f.name().to_owned())))
            .collect()
    };
    let Some(local) = local else {
        return DownloadPlan { object_needed: true, stale_property_block: true, stale_files: all_files() };
    };
    if local.ohash == remote.ohash {
        return DownloadPlan::default();
    }
    let mut plan = DownloadPlan {
        stale_property_block: local.properties.phash != remote.properties.phash,
        ..DownloadPlan::default()
    };
    for group in &remote.file_types {
        let local_group = local.file_type(&group.type_name);
        if local_group.is_some_and(|lg| lg.fthash == group.fthash) {
            continue;
        }
        for file in &group.files {
            let same = local_group.and_then(|lg| lg.file(file.name())).is_some_and(|lf| lf.fhash == file.fhash);
            if !same {
                plan.stale_files.insert((group.type_name.clone(), file.name().to_owned()));
            }
        }
    }
    if plan.is_empty() {
        // Hashes differ but no component does: the local record itself is damaged.
        plan.object_needed = true;
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::recompute_hashes;
    use crate::inventory::tests::sample_object;

    #[test]
    fn identical_and_absent() {
        let obj = sample_object(2, 2, 1);
        assert!(diff_objects(Some(&obj), &obj).is_empty());
        let plan = diff_objects(None, &obj);
        assert!(plan.object_needed);
        assert_eq!(plan.file_transfers(), 4);
    }

    #[test]
    fn one_texture_file_differs() {
        let local = sample_object(3, 4, 1);
        let mut remote = local.clone();
        remote.file_types[2].files[1].content = Some(b"new texture".to_vec());
        let remote = recompute_hashes(&remote).unwrap();
        let plan = diff_objects(Some(&local), &remote);
        assert!(!plan.object_needed && !plan.stale_property_block);
        assert_eq!(
            plan.stale_files.into_iter().collect::<Vec<_>>(),
            vec![("type02".to_owned(), "file01".to_owned())]
        );
    }

    #[test]
    fn property_change_only() {
        let local = sample_object(1, 1, 1);
        let mut remote = local.clone();
        remote.properties.version = "2".into();
        let remote = recompute_hashes(&remote).unwrap();
        let plan = diff_objects(Some(&local), &remote);
        assert!(plan.stale_property_block);
        assert!(plan.stale_files.is_empty());
    }
}
