//! Benchmark fixtures.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vista_core::taxonomy::TaxonomyDocument;
use vista_core::{EventSet, LabelTaxonomy, ProbabilityMatrix, SynthParams};

/// `regions` ordered regions, a landmark between each neighbouring pair and
/// `pathologies` pathology classes, all smoothed with `window`.
pub fn chain_taxonomy(regions: usize, pathologies: usize, window: usize) -> LabelTaxonomy {
    let region_names: Vec<String> = (0..regions).map(|r| format!("region{r}")).collect();
    let landmarks: BTreeMap<String, Vec<String>> = (1..regions)
        .map(|r| (format!("landmark{r}"), vec![region_names[r - 1].clone(), region_names[r].clone()]))
        .collect();
    let pathology_names: Vec<String> = (0..pathologies).map(|p| format!("pathology{p}")).collect();
    let classes: Vec<String> = region_names
        .iter()
        .chain(landmarks.keys())
        .chain(&pathology_names)
        .cloned()
        .collect();
    LabelTaxonomy::from_document(TaxonomyDocument {
        smoothing_window: classes.iter().map(|c| (c.clone(), window)).collect(),
        classes,
        regions: region_names,
        landmarks,
        pathologies: pathology_names,
    })
    .expect("valid taxonomy")
}

/// Uniform random probabilities: the least structured input decoding can see.
pub fn random_probs(taxonomy: &LabelTaxonomy, frames: usize, seed: u64) -> ProbabilityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..frames * taxonomy.num_classes()).map(|_| rng.random::<f64>()).collect();
    ProbabilityMatrix::new("bench", taxonomy.classes().to_vec(), values).expect("valid matrix")
}

/// One head's probabilities and the ground truth for a synthetic corpus.
pub struct SynthFixture {
    pub taxonomy: LabelTaxonomy,
    pub probs: Vec<ProbabilityMatrix>,
    pub gt: Vec<EventSet>,
}

pub fn synth_fixture(videos: usize, frames: usize) -> SynthFixture {
    let params = SynthParams {
        videos,
        frames,
        ..SynthParams::default()
    };
    let corpus = vista_core::synth_corpus(&params).expect("synthetic corpus");
    SynthFixture {
        taxonomy: corpus.taxonomy.clone(),
        probs: corpus.videos.iter().map(|v| v.head_probs[0][0].clone()).collect(),
        gt: corpus.videos.iter().map(|v| v.gt.clone()).collect(),
    }
}
