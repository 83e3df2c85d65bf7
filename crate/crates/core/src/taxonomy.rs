//! Label space: anatomical regions in transit order, landmarks with their
//! valid neighbouring regions, and pathology classes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

pub const DEFAULT_REGION_WINDOW: usize = 31;
pub const DEFAULT_LANDMARK_WINDOW: usize = 15;
pub const DEFAULT_PATHOLOGY_WINDOW: usize = 7;

const DEFAULT_TAXONOMY: &str = include_str!("../data/default_taxonomy.json");

/// What part a class plays during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassRole {
    /// Ordinal in transit order.
    Region(usize),
    Landmark,
    Pathology,
}

/// On-disk form of a taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyDocument {
    pub classes: Vec<String>,
    pub regions: Vec<String>,
    #[serde(default)]
    pub landmarks: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub pathologies: Vec<String>,
    #[serde(default)]
    pub smoothing_window: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTaxonomy {
    classes: Vec<String>,
    regions: Vec<String>,
    landmarks: BTreeMap<String, Vec<String>>,
    pathologies: Vec<String>,
    windows: Vec<usize>,
    roles: Vec<ClassRole>,
    index: HashMap<String, usize>,
    region_columns: Vec<usize>,
    /// Per class index: valid region ordinals (empty for non-landmarks).
    landmark_regions: Vec<Vec<usize>>,
}

impl LabelTaxonomy {
    /// The bundled five-region taxonomy.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TaxonomyDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_document(doc: TaxonomyDocument) -> Result<Self> {
        let mut index = HashMap::with_capacity(doc.classes.len());
        for (i, name) in doc.classes.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                bail!(Validation, "duplicate class name `{name}`");
            }
        }
        if doc.regions.is_empty() {
            bail!(Validation, "taxonomy needs at least one region");
        }

        let mut roles: Vec<Option<ClassRole>> = vec![None; doc.classes.len()];
        let mut assign = |name: &str, role: ClassRole, group: &str| -> Result<()> {
            let Some(&i) = index.get(name) else {
                bail!(Partition, "{group} entry `{name}` is not listed in classes");
            };
            if roles[i].is_some() {
                bail!(Partition, "class `{name}` is assigned to more than one group");
            }
            roles[i] = Some(role);
            Ok(())
        };
        for (ordinal, name) in doc.regions.iter().enumerate() {
            assign(name, ClassRole::Region(ordinal), "region")?;
        }
        for name in doc.landmarks.keys() {
            assign(name, ClassRole::Landmark, "landmark")?;
        }
        for name in &doc.pathologies {
            assign(name, ClassRole::Pathology, "pathology")?;
        }
        let roles = roles
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    Error::Partition(format!(
                        "class `{}` is not a region, landmark or pathology",
                        doc.classes[i]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let region_ordinal: HashMap<&str, usize> = doc
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut landmark_regions = vec![Vec::new(); doc.classes.len()];
        for (landmark, valid) in &doc.landmarks {
            if valid.is_empty() {
                bail!(Validation, "landmark `{landmark}` has no valid regions");
            }
            let mut ordinals = Vec::with_capacity(valid.len());
            for region in valid {
                match region_ordinal.get(region.as_str()) {
                    Some(&o) => ordinals.push(o),
                    None => bail!(Reference, "landmark `{landmark}` references unknown region `{region}`"),
                }
            }
            ordinals.sort_unstable();
            ordinals.dedup();
            let adjacent = match ordinals.as_slice() {
                [_] => true,
                [a, b] => b - a == 1,
                _ => false,
            };
            if !adjacent {
                bail!(
                    Validation,
                    "landmark `{landmark}` must name one region or two regions adjacent in transit order"
                );
            }
            landmark_regions[index[landmark]] = ordinals;
        }

        for name in doc.smoothing_window.keys() {
            if !index.contains_key(name) {
                bail!(Reference, "smoothing window given for unknown class `{name}`");
            }
        }
        let windows = doc
            .classes
            .iter()
            .zip(&roles)
            .map(|(name, role)| {
                let w = doc.smoothing_window.get(name).copied().unwrap_or(match role {
                    ClassRole::Region(_) => DEFAULT_REGION_WINDOW,
                    ClassRole::Landmark => DEFAULT_LANDMARK_WINDOW,
                    ClassRole::Pathology => DEFAULT_PATHOLOGY_WINDOW,
                });
                if w == 0 || w % 2 == 0 {
                    bail!(Validation, "smoothing window for `{name}` must be odd and >= 1, got {w}");
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;

        let region_columns = doc.regions.iter().map(|r| index[r]).collect();
        Ok(Self {
            classes: doc.classes,
            regions: doc.regions,
            landmarks: doc.landmarks,
            pathologies: doc.pathologies,
            windows,
            roles,
            index,
            region_columns,
            landmark_regions,
        })
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            classes: self.classes.clone(),
            regions: self.regions.clone(),
            landmarks: self.landmarks.clone(),
            pathologies: self.pathologies.clone(),
            smoothing_window: self
                .classes
                .iter()
                .cloned()
                .zip(self.windows.iter().copied())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("taxonomy serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn landmarks(&self) -> &BTreeMap<String, Vec<String>> {
        &self.landmarks
    }

    pub fn pathologies(&self) -> &[String] {
        &self.pathologies
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.index
            .get(class)
            .copied()
            .ok_or_else(|| Error::Reference(format!("unknown class `{class}`")))
    }

    pub fn contains(&self, class: &str) -> bool {
        self.index.contains_key(class)
    }

    /// Transit-order ordinal of a region class; `None` for landmarks and pathologies.
    pub fn region_index(&self, class: &str) -> Result<Option<usize>> {
        let i = self.class_index(class)?;
        Ok(match self.roles[i] {
            ClassRole::Region(o) => Some(o),
            _ => None,
        })
    }

    pub fn role(&self, column: usize) -> ClassRole {
        self.roles[column]
    }

    /// Column index of each region, in transit order.
    pub fn region_columns(&self) -> &[usize] {
        &self.region_columns
    }

    /// Columns of landmark classes, in class order.
    pub fn landmark_columns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes.len()).filter(|&c| self.roles[c] == ClassRole::Landmark)
    }

    /// Region ordinals a landmark column may appear in or near.
    pub fn landmark_valid_regions(&self, column: usize) -> &[usize] {
        &self.landmark_regions[column]
    }

    pub fn smoothing_window(&self, column: usize) -> usize {
        self.windows[column]
    }

    pub fn smoothing_windows(&self) -> &[usize] {
        &self.windows
    }

    /// Checks that `names` lists exactly this taxonomy's classes in order.
    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names != self.classes.as_slice() {
            let known: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
            if let Some(bad) = names.iter().find(|n| !known.contains(n.as_str())) {
                bail!(Taxonomy, "class `{bad}` is not in the taxonomy");
            }
            bail!(
                Taxonomy,
                "class columns {:?} do not match taxonomy order {:?}",
                names,
                self.classes
            );
        }
        Ok(())
    }
}
