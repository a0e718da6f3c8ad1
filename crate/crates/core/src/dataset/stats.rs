use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SpeciesEntry, SpeciesVocab, Split};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesStats {
    pub species_id: usize,
    pub short_code: String,
    pub annotations: usize,
    pub files: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub recordings: usize,
    pub annotations: usize,
    pub total_duration_s: f64,
    /// Species with at least one annotation.
    pub species_present: usize,
    pub per_species: Vec<SpeciesStats>,
    pub recordings_per_split: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn species_with_annotations(&self, at_least: usize) -> usize {
        self.per_species.iter().filter(|s| s.annotations >= at_least).count()
    }

    pub fn species_in_files(&self, at_least: usize) -> usize {
        self.per_species.iter().filter(|s| s.files >= at_least).count()
    }

    pub fn total_hours(&self) -> f64 {
        self.total_duration_s / 3600.0
    }
}

pub fn compute_stats(manifest: &DatasetManifest) -> CorpusStats {
    let n = manifest.vocab.len();
    let mut counts = vec![0usize; n];
    let mut files: Vec<HashSet<&str>> = vec![HashSet::new(); n];
    for a in &manifest.annotations {
        counts[a.species_id] += 1;
        files[a.species_id].insert(a.source_file.as_str());
    }
    let per_species: Vec<SpeciesStats> = manifest
        .vocab
        .entries
        .iter()
        .map(|e| SpeciesStats {
            species_id: e.species_id,
            short_code: e.short_code.clone(),
            annotations: counts[e.species_id],
            files: files[e.species_id].len(),
        })
        .collect();
    let mut recordings_per_split = BTreeMap::new();
    for r in &manifest.recordings {
        let key = match r.split {
            Split::Train => "TRAIN",
            Split::Test => "TEST",
        };
        *recordings_per_split.entry(key.to_string()).or_insert(0) += 1;
    }
    // Sum in path order so the total does not depend on recording order.
    let mut durations: Vec<(&str, f64)> = manifest.recordings.iter().map(|r| (r.path.as_str(), r.duration)).collect();
    durations.sort_by(|a, b| a.0.cmp(b.0));
    CorpusStats {
        recordings: manifest.recordings.len(),
        annotations: manifest.annotations.len(),
        total_duration_s: durations.iter().map(|d| d.1).sum(),
        species_present: counts.iter().filter(|&&c| c > 0).count(),
        per_species,
        recordings_per_split,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScopeFilter {
    pub min_samples: usize,
    pub min_files: usize,
    pub forced_includes: Vec<usize>,
}

impl Default for ScopeFilter {
    fn default() -> Self {
        Self {
            min_samples: 100,
            min_files: 20,
            forced_includes: Vec::new(),
        }
    }
}

/// Species retained for evaluation, keeping their original ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesScope {
    pub species: Vec<SpeciesEntry>,
}

impl SpeciesScope {
    pub fn all(vocab: &SpeciesVocab) -> Self {
        Self {
            species: vocab.entries.clone(),
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.species.iter().map(|e| e.species_id).collect()
    }

    pub fn contains(&self, species_id: usize) -> bool {
        self.species.iter().any(|e| e.species_id == species_id)
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    /// The scope as a contiguous vocabulary plus the id map back.
    pub fn to_vocab(&self, full: &SpeciesVocab) -> (SpeciesVocab, Vec<usize>) {
        full.restrict(&self.ids())
    }
}

/// Keeps species meeting both thresholds, plus the forced ones, in
/// vocabulary order. Counts come from the manifest as given; pass the
/// training split to reproduce a training-data criterion.
pub fn filter_evaluation_scope(manifest: &DatasetManifest, filter: &ScopeFilter) -> Result<SpeciesScope> {
    if filter.min_samples == 0 || filter.min_files == 0 {
        return Err(Error::Config("scope thresholds must be positive".into()));
    }
    let bad: Vec<String> = filter
        .forced_includes
        .iter()
        .filter(|&&id| id >= manifest.vocab.len())
        .map(|id| format!("#{id}"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::UnknownSpecies(bad));
    }
    let stats = compute_stats(manifest);
    let species = manifest
        .vocab
        .entries
        .iter()
        .filter(|e| {
            let s = &stats.per_species[e.species_id];
            (s.annotations >= filter.min_samples && s.files >= filter.min_files)
                || filter.forced_includes.contains(&e.species_id)
        })
        .cloned()
        .collect();
    Ok(SpeciesScope { species })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AnnotationBox, Origin, RecordingMeta};
    use proptest::prelude::*;

    fn toy(spec: &[(usize, usize, usize)], n_species: usize) -> DatasetManifest {
        // spec: (species, samples, files)
        let names: Vec<String> = (0..n_species).map(|i| {
            let c = (b'a' + i as u8) as char;
            format!("A{c}nus b{c}ta")
        }).collect();
        let vocab = SpeciesVocab::from_latin_names(&names).unwrap();
        let mut recs = Vec::new();
        let mut anns = Vec::new();
        for &(s, samples, nfiles) in spec {
            for f in 0..nfiles {
                recs.push(RecordingMeta { path: format!("s{s}/f{f}.wav"), duration: 1000.0, sample_rate: 44100, origin: Origin::Synth, split: Split::Train });
            }
            for i in 0..samples {
                anns.push(AnnotationBox { t_start: i as f64, t_end: i as f64 + 0.5, f_low: 1.0, f_high: 2.0, species_id: s, source_file: format!("s{s}/f{}.wav", i % nfiles) });
            }
        }
        DatasetManifest::new("t", recs, anns, vocab).unwrap()
    }

    #[test]
    fn single_recording_stats() {
        let m = toy(&[(0, 3, 1)], 1);
        let s = compute_stats(&m);
        assert_eq!((s.annotations, s.recordings, s.species_present), (3, 1, 1));
        assert_eq!(s.per_species[0].files, 1);
    }

    #[test]
    fn threshold_application() {
        let m = toy(&[(0, 120, 25), (1, 120, 5)], 2);
        let scope = filter_evaluation_scope(&m, &ScopeFilter::default()).unwrap();
        assert_eq!(scope.ids(), vec![0]);
        let forced = ScopeFilter { forced_includes: vec![1], ..Default::default() };
        assert_eq!(filter_evaluation_scope(&m, &forced).unwrap().ids(), vec![0, 1]);
        let loose = ScopeFilter { min_samples: 1, min_files: 1, forced_includes: vec![] };
        assert_eq!(filter_evaluation_scope(&m, &loose).unwrap().ids(), vec![0, 1]);
        let unknown = ScopeFilter { forced_includes: vec![9], ..Default::default() };
        assert!(matches!(filter_evaluation_scope(&m, &unknown), Err(Error::UnknownSpecies(_))));
    }

    proptest! {
        #[test]
        fn stats_invariant_under_permutation(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut m = toy(&[(0, 7, 3), (1, 4, 2), (2, 9, 4)], 3);
            let before = compute_stats(&m);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            m.recordings.shuffle(&mut rng);
            m.annotations.shuffle(&mut rng);
            let after = compute_stats(&m);
            prop_assert_eq!(before, after);
        }

        #[test]
        fn scope_is_monotone_in_thresholds(s1 in 1usize..30, f1 in 1usize..6, ds in 0usize..10, df in 0usize..3) {
            let m = toy(&[(0, 20, 5), (1, 12, 2), (2, 5, 5), (3, 25, 1)], 4);
            let lo = filter_evaluation_scope(&m, &ScopeFilter { min_samples: s1, min_files: f1, forced_includes: vec![2] }).unwrap();
            let hi = filter_evaluation_scope(&m, &ScopeFilter { min_samples: s1 + ds, min_files: f1 + df, forced_includes: vec![2] }).unwrap();
            for id in hi.ids() {
                prop_assert!(lo.contains(id));
            }
        }
    }
}
