//! Unified channel schema: one global electrode vocabulary shared by every
//! dataset, so a single channel-identity embedding table can serve them all.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized electrode label: surrounding whitespace stripped, uppercased.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelName(String);

impl ChannelName {
    pub fn new(raw: &str) -> Result<Self> {
        let norm = raw.trim().to_ascii_uppercase();
        if norm.is_empty() {
            return Err(Error::InvalidArgument(format!("empty channel name {raw:?}")));
        }
        Ok(Self(norm))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ChannelName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        ChannelName::new(&s)
    }
}

impl From<ChannelName> for String {
    fn from(c: ChannelName) -> String {
        c.0
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Optional electrode renaming applied before vocabulary construction
/// (e.g. `T3 -> T7`). Nothing is merged unless listed here.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable(BTreeMap<String, String>);

impl AliasTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (from, to) in pairs {
            map.insert(ChannelName::new(from)?.0, ChannelName::new(to)?.0);
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, String> = serde_json::from_str(&text)?;
        Self::from_pairs(raw.iter().map(|(a, b)| (a.as_str(), b.as_str())))
    }

    pub fn apply(&self, name: ChannelName) -> ChannelName {
        match self.0.get(name.as_str()) {
            Some(to) => ChannelName(to.clone()),
            None => name,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    Union,
    Intersection,
}

/// Local channel order of one dataset and where each lands globally.
/// `None` marks a channel dropped by the intersection strategy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetChannelMap {
    pub dataset_id: String,
    pub local: Vec<ChannelName>,
    pub local_to_global: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelVocabulary {
    entries: Vec<ChannelName>,
    ids: HashMap<ChannelName, usize>,
    datasets: Vec<DatasetChannelMap>,
}

/// One dataset's declared channel list, as given to the builders.
pub type DatasetChannels = (String, Vec<ChannelName>);

fn check_unique(datasets: &[DatasetChannels]) -> Result<()> {
    for (id, chans) in datasets {
        let mut seen = BTreeSet::new();
        for c in chans {
            if !seen.insert(c) {
                return Err(Error::DuplicateChannel {
                    dataset: id.clone(),
                    name: c.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Declaration order of datasets, lexicographic within each dataset.
fn ordered_candidates(datasets: &[DatasetChannels]) -> Vec<ChannelName> {
    let mut out: Vec<ChannelName> = Vec::new();
    let mut seen = BTreeSet::new();
    for (_, chans) in datasets {
        let mut sorted: Vec<&ChannelName> = chans.iter().collect();
        sorted.sort();
        for c in sorted {
            if seen.insert(c.clone()) {
                out.push(c.clone());
            }
        }
    }
    out
}

impl ChannelVocabulary {
    fn assemble(entries: Vec<ChannelName>, datasets: &[DatasetChannels]) -> Self {
        let ids: HashMap<ChannelName, usize> = entries.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let maps = datasets
            .iter()
            .map(|(id, chans)| DatasetChannelMap {
                dataset_id: id.clone(),
                local: chans.clone(),
                local_to_global: chans.iter().map(|c| ids.get(c).copied()).collect(),
            })
            .collect();
        Self {
            entries,
            ids,
            datasets: maps,
        }
    }

    /// Vocabulary over the union of all datasets' channels.
    pub fn build_union(datasets: &[DatasetChannels]) -> Result<Self> {
        check_unique(datasets)?;
        Ok(Self::assemble(ordered_candidates(datasets), datasets))
    }

    /// Vocabulary restricted to channels present in every dataset.
    pub fn build_intersection(datasets: &[DatasetChannels]) -> Result<Self> {
        check_unique(datasets)?;
        let sets: Vec<BTreeSet<&ChannelName>> = datasets.iter().map(|(_, c)| c.iter().collect()).collect();
        let entries: Vec<ChannelName> = ordered_candidates(datasets)
            .into_iter()
            .filter(|c| sets.iter().all(|s| s.contains(c)))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyIntersection);
        }
        Ok(Self::assemble(entries, datasets))
    }

    pub fn build(mode: VocabMode, datasets: &[DatasetChannels]) -> Result<Self> {
        match mode {
            VocabMode::Union => Self::build_union(datasets),
            VocabMode::Intersection => Self::build_intersection(datasets),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ChannelName] {
        &self.entries
    }

    pub fn datasets(&self) -> &[DatasetChannelMap] {
        &self.datasets
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetChannelMap> {
        self.datasets.iter().find(|d| d.dataset_id == id)
    }

    pub fn contains(&self, name: &ChannelName) -> bool {
        self.ids.contains_key(name)
    }

    pub fn resolve(&self, name: &ChannelName) -> Result<usize> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Normalizes a raw label, then resolves it.
    pub fn resolve_str(&self, raw: &str) -> Result<usize> {
        self.resolve(&ChannelName::new(raw)?)
    }

    pub fn name(&self, id: usize) -> Option<&ChannelName> {
        self.entries.get(id)
    }

    pub fn to_file(&self) -> VocabularyFile {
        VocabularyFile {
            version: 1,
            entries: self.entries.iter().map(|c| c.to_string()).collect(),
            datasets: self
                .datasets
                .iter()
                .map(|d| {
                    (
                        d.dataset_id.clone(),
                        DatasetEntry {
                            local: d.local.iter().map(|c| c.to_string()).collect(),
                            global: d.local_to_global.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_file(file: &VocabularyFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::Data(format!("vocabulary version {} unsupported", file.version)));
        }
        let entries = file
            .entries
            .iter()
            .map(|e| ChannelName::new(e))
            .collect::<Result<Vec<_>>>()?;
        let ids: HashMap<ChannelName, usize> = entries.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        if ids.len() != entries.len() {
            return Err(Error::Data("vocabulary has repeated entries".into()));
        }
        let mut datasets = Vec::new();
        for (id, d) in &file.datasets {
            let local = d
                .local
                .iter()
                .map(|e| ChannelName::new(e))
                .collect::<Result<Vec<_>>>()?;
            if local.len() != d.global.len() {
                return Err(Error::Data(format!("dataset {id}: local/global length mismatch")));
            }
            for (c, g) in local.iter().zip(&d.global) {
                if *g != ids.get(c).copied() {
                    return Err(Error::Data(format!("dataset {id}: channel {c} maps inconsistently")));
                }
            }
            datasets.push(DatasetChannelMap {
                dataset_id: id.clone(),
                local,
                local_to_global: d.global.clone(),
            });
        }
        Ok(Self { entries, ids, datasets })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

/// On-disk JSON layout of a vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub version: u32,
    pub entries: Vec<String>,
    pub datasets: BTreeMap<String, DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub local: Vec<String>,
    pub global: Vec<Option<usize>>,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn names(xs: &[&str]) -> Vec<ChannelName> {
        xs.iter().map(|x| ChannelName::new(x).unwrap()).collect()
    }

    fn ds(id: &str, xs: &[&str]) -> DatasetChannels {
        (id.to_string(), names(xs))
    }

    const SEED_62: [&str; 62] = [
        "FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8", "FT7", "FC5", "FC3",
        "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8", "TP7", "CP5",
        "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8", "P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8", "PO7",
        "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2",
    ];

    // The 32-channel 10-20 montage, expressed in the 62-channel naming.
    const DEAP_32: [&str; 32] = [
        "FP1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1", "OZ", "PZ", "FP2",
        "AF4", "FZ", "F4", "F8", "FC6", "FC2", "CZ", "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
    ];

    #[test]
    fn normalization_is_idempotent() {
        let a = ChannelName::new(" fp1 ").unwrap();
        assert_eq!(a.as_str(), "FP1");
        assert_eq!(ChannelName::new(a.as_str()).unwrap(), a);
        assert!(ChannelName::new("   ").is_err());
    }

    #[test]
    fn union_of_overlapping_sets() {
        let v = ChannelVocabulary::build_union(&[ds("A", &["X", "Y"]), ds("B", &["Y", "Z"])]).unwrap();
        assert_eq!(v.entries(), &names(&["X", "Y", "Z"])[..]);
        assert_eq!(v.dataset("B").unwrap().local_to_global, vec![Some(1), Some(2)]);
    }

    #[test]
    fn single_dataset_gets_dense_ids() {
        let v = ChannelVocabulary::build_union(&[ds("A", &["C3", "C4", "CZ"])]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.resolve_str("c3").unwrap(), 0);
        assert_eq!(v.dataset("A").unwrap().local_to_global, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn montage_sized_union_and_intersection() {
        let sets = [ds("SEED", &SEED_62), ds("DEAP", &DEAP_32)];
        assert_eq!(ChannelVocabulary::build_union(&sets).unwrap().len(), 62);
        let inter = ChannelVocabulary::build_intersection(&sets).unwrap();
        assert_eq!(inter.len(), 32);
        let seed_map = inter.dataset("SEED").unwrap();
        assert_eq!(seed_map.local_to_global.iter().filter(|g| g.is_none()).count(), 30);
    }

    #[test]
    fn intersection_of_identical_sets_equals_union() {
        let sets = [ds("A", &["A1", "B2"]), ds("B", &["B2", "A1"])];
        assert_eq!(
            ChannelVocabulary::build_intersection(&sets).unwrap().entries(),
            ChannelVocabulary::build_union(&sets).unwrap().entries()
        );
    }

    #[test]
    fn disjoint_intersection_errors() {
        let r = ChannelVocabulary::build_intersection(&[ds("A", &["X"]), ds("B", &["Y"])]);
        assert!(matches!(r, Err(Error::EmptyIntersection)));
    }

    #[test]
    fn duplicates_are_rejected_with_context() {
        let r = ChannelVocabulary::build_union(&[ds("A", &["fp1", "FP1 "])]);
        match r {
            Err(Error::DuplicateChannel { dataset, name }) => {
                assert_eq!(dataset, "A");
                assert_eq!(name, "FP1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolve_normalizes_and_reports_unknown() {
        let v = ChannelVocabulary::build_union(&[ds("A", &["FP1", "O2"])]).unwrap();
        assert_eq!(v.resolve_str("fp1 ").unwrap(), v.resolve_str("FP1").unwrap());
        assert_eq!(v.resolve_str("FP1").unwrap(), 0);
        match v.resolve_str("XX9") {
            Err(Error::UnknownChannel(n)) => assert_eq!(n, "XX9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aliases_rename_before_lookup() {
        let t = AliasTable::from_pairs([("t3", "T7")]).unwrap();
        assert_eq!(t.apply(ChannelName::new("T3").unwrap()).as_str(), "T7");
        assert_eq!(t.apply(ChannelName::new("T4").unwrap()).as_str(), "T4");
    }

    #[test]
    fn json_round_trip() {
        let v = ChannelVocabulary::build_intersection(&[ds("A", &["X", "Y", "Q"]), ds("B", &["Y", "X"])]).unwrap();
        let text = serde_json::to_string(&v.to_file()).unwrap();
        assert!(text.contains("\"version\":1"));
        assert!(text.contains("null"));
        let back = ChannelVocabulary::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.entries(), v.entries());
        assert_eq!(back.dataset("A"), v.dataset("A"));
    }

    fn arb_datasets() -> impl Strategy<Value = Vec<DatasetChannels>> {
        prop::collection::vec(prop::collection::btree_set(0u8..24, 1..10), 1..5).prop_map(|sets| {
            sets.into_iter()
                .enumerate()
                .map(|(i, s)| {
                    (
                        format!("d{i}"),
                        s.into_iter()
                            .map(|c| ChannelName::new(&format!("E{c}")).unwrap())
                            .collect(),
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn union_is_order_insensitive_and_consistent(mut sets in arb_datasets()) {
            let v = ChannelVocabulary::build_union(&sets).unwrap();
            for m in v.datasets() {
                for (local, g) in m.local.iter().zip(&m.local_to_global) {
                    prop_assert_eq!(v.name(g.unwrap()).unwrap(), local);
                }
            }
            let max = sets.iter().map(|s| s.1.len()).max().unwrap();
            prop_assert!(v.len() >= max);
            sets.reverse();
            let r = ChannelVocabulary::build_union(&sets).unwrap();
            let a: BTreeSet<_> = v.entries().iter().collect();
            let b: BTreeSet<_> = r.entries().iter().collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn intersection_is_bounded_by_smallest(sets in arb_datasets()) {
            let min = sets.iter().map(|s| s.1.len()).min().unwrap();
            match ChannelVocabulary::build_intersection(&sets) {
                Ok(v) => {
                    prop_assert!(v.len() <= min);
                    for m in v.datasets() {
                        for (local, g) in m.local.iter().zip(&m.local_to_global) {
                            if let Some(g) = g {
                                prop_assert_eq!(v.name(*g).unwrap(), local);
                            }
                        }
                    }
                }
                Err(Error::EmptyIntersection) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
