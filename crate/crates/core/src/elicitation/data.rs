//! Shipped persona data: trait-infusion descriptions, the historical-figure
//! list, and TIPI adjective pairs. Parsed once on first use.

use std::sync::OnceLock;

use serde::Deserialize;

use super::{Keyed, TraitDimension, TraitScores};

const BIG5_DESCRIPTIONS: &str = include_str!("../../data/personas/big5_descriptions.json");
const FIGURES: &str = include_str!("../../data/personas/figures.tsv");
const TIPI_ADJECTIVES: &str = include_str!("../../data/tipi/adjectives.json");

#[derive(Debug, Clone, Deserialize)]
pub struct TraitDescription {
    pub dimension: TraitDimension,
    pub keyed: Keyed,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TipiItem {
    pub dimension: TraitDimension,
    pub keyed: Keyed,
    pub adjectives: String,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub name: String,
    /// Reference perceived-trait ratings shipped with the list.
    pub reference: TraitScores,
    pub excluded_from_analysis: bool,
}

#[derive(Deserialize)]
struct DescriptionFile {
    version: u32,
    descriptions: Vec<TraitDescription>,
}

#[derive(Deserialize)]
struct TipiFile {
    version: u32,
    items: Vec<TipiItem>,
}

pub fn trait_descriptions() -> &'static [TraitDescription] {
    static CELL: OnceLock<Vec<TraitDescription>> = OnceLock::new();
    CELL.get_or_init(|| {
        let f: DescriptionFile =
            serde_json::from_str(BIG5_DESCRIPTIONS).expect("shipped big5_descriptions.json is valid");
        assert_eq!(f.version, 1);
        f.descriptions
    })
}

pub fn trait_description(dimension: TraitDimension, keyed: Keyed) -> &'static str {
    trait_descriptions()
        .iter()
        .find(|d| d.dimension == dimension && d.keyed == keyed)
        .map(|d| d.text.as_str())
        .expect("all ten descriptions are shipped")
}

pub fn tipi_items() -> &'static [TipiItem] {
    static CELL: OnceLock<Vec<TipiItem>> = OnceLock::new();
    CELL.get_or_init(|| {
        let f: TipiFile = serde_json::from_str(TIPI_ADJECTIVES).expect("shipped adjectives.json is valid");
        assert_eq!(f.version, 1);
        f.items
    })
}

pub fn tipi_adjectives(dimension: TraitDimension, keyed: Keyed) -> &'static str {
    tipi_items()
        .iter()
        .find(|d| d.dimension == dimension && d.keyed == keyed)
        .map(|d| d.adjectives.as_str())
        .expect("all ten TIPI items are shipped")
}

pub fn figures() -> &'static [Figure] {
    static CELL: OnceLock<Vec<Figure>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for line in FIGURES.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let num = |i: usize| cols[i].parse::<f64>().expect("numeric rating");
            out.push(Figure {
                name: cols[0].to_string(),
                reference: TraitScores {
                    agreeableness: num(1),
                    conscientiousness: num(2),
                    emotional_stability: num(3),
                    extraversion: num(4),
                    openness: num(5),
                },
                excluded_from_analysis: cols[6] == "excluded",
            });
        }
        out
    })
}

pub fn figure(name: &str) -> Option<&'static Figure> {
    figures().iter().find(|f| f.name == name)
}
