use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesEntry {
    pub species_id: usize,
    pub latin_name: String,
    pub short_code: String,
}

/// Ordered species list with contiguous ids `0..N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesVocab {
    pub entries: Vec<SpeciesEntry>,
}

/// Four-letter code: first two letters of the genus and of the epithet,
/// each capitalized (`"Grus grus"` -> `"GrGr"`).
pub fn short_code(latin_name: &str) -> Result<String> {
    let mut words = latin_name.split_whitespace();
    let (Some(genus), Some(epithet)) = (words.next(), words.next()) else {
        return Err(Error::Validation(format!("{latin_name:?} is not a binomial name")));
    };
    let part = |w: &str| -> Result<String> {
        let letters: Vec<char> = w.chars().filter(|c| c.is_alphabetic()).take(2).collect();
        if letters.len() < 2 {
            return Err(Error::Validation(format!("{w:?} is too short for a species code")));
        }
        Ok(letters[0].to_uppercase().chain(letters[1].to_lowercase()).collect())
    };
    Ok(format!("{}{}", part(genus)?, part(epithet)?))
}

/// Whether `s` has the shape of a species code (`GrGr`).
pub(crate) fn looks_like_code(s: &str) -> bool {
    let c: Vec<char> = s.chars().collect();
    c.len() == 4
        && c[0].is_ascii_uppercase()
        && c[1].is_ascii_lowercase()
        && c[2].is_ascii_uppercase()
        && c[3].is_ascii_lowercase()
}

/// The 45 evaluation species, in report-table order.
pub const NBM_EVAL_SPECIES: [&str; 45] = [
    "Grus grus", "Erithacus rubecula", "Fringilla coelebs", "Melanitta nigra",
    "Haematopus ostralegus", "Turdus philomelos", "Anthus trivialis", "Burhinus oedicnemus",
    "Charadrius hiaticula", "Motacilla flava", "Turdus iliacus", "Rallus aquaticus",
    "Parus major", "Vanellus vanellus", "Strix aluco", "Gallinula chloropus", "Anas crecca",
    "Actitis hypoleucos", "Ficedula hypoleuca", "Emberiza hortulana", "Pluvialis squatarola",
    "Coturnix coturnix", "Athene noctua", "Fulica atra", "Alauda arvensis",
    "Clamator glandarius", "Cyanistes caeruleus", "Emberiza citrinella", "Tringa totanus",
    "Numenius arquata", "Muscicapa striata", "Tyto alba", "Calidris alpina", "Tringa ochropus",
    "Ardea cinerea", "Turdus merula", "Charadrius dubius", "Tachybaptus ruficollis",
    "Pica pica", "Pluvialis apricaria", "Numenius phaeopus", "Turdus torquatus",
    "Anthus pratensis", "Ixobrychus minutus", "Nycticorax nycticorax",
];

impl SpeciesVocab {
    pub fn from_latin_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let entries = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                Ok(SpeciesEntry {
                    species_id: i,
                    latin_name: n.as_ref().to_string(),
                    short_code: short_code(n.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let v = Self { entries };
        v.validate()?;
        Ok(v)
    }

    pub fn nbm_eval_species() -> Self {
        Self::from_latin_names(&NBM_EVAL_SPECIES).expect("built-in table is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let mut codes = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.species_id != i {
                return Err(Error::Validation(format!(
                    "species ids not contiguous: position {i} has id {}",
                    e.species_id
                )));
            }
            if !names.insert(e.latin_name.as_str()) {
                return Err(Error::Validation(format!("duplicate latin name {}", e.latin_name)));
            }
            if !codes.insert(e.short_code.as_str()) {
                return Err(Error::Validation(format!("duplicate short code {}", e.short_code)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn code(&self, species_id: usize) -> &str {
        &self.entries[species_id].short_code
    }

    pub fn id_of_code(&self, code: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.short_code == code)
    }

    pub fn id_of_latin(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.latin_name == name)
    }

    /// A contiguous vocabulary holding `ids` (in the given order) and the map
    /// from new ids back to the original ones.
    pub fn restrict(&self, ids: &[usize]) -> (SpeciesVocab, Vec<usize>) {
        let entries = ids
            .iter()
            .enumerate()
            .map(|(new, &old)| SpeciesEntry {
                species_id: new,
                ..self.entries[old].clone()
            })
            .collect();
        (SpeciesVocab { entries }, ids.to_vec())
    }
}
