//! Template-based synthetic corpora.
//!
//! A [`Schema`] lists slot types in table order. Each slot fills one or more
//! rows; a row may carry sub-slots that share it (a team with its matches
//! and goals). Every row is described by one sentence built from the slot's
//! template, so each value appears verbatim exactly once.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Example, KnowledgeBase};
use crate::error::{KbError, Result};

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ValueSource {
    /// One item drawn uniformly from the list.
    Pool(Vec<String>),
    /// One item from each list, joined by spaces.
    Combo(Vec<Vec<String>>),
    /// "D Month YYYY" with the year in the inclusive range.
    Date { from_year: u32, to_year: u32 },
    Integer { min: u32, max: u32 },
}

impl ValueSource {
    fn draw(&self, rng: &mut impl Rng) -> String {
        match self {
            ValueSource::Pool(items) => items.choose(rng).cloned().unwrap_or_default(),
            ValueSource::Combo(parts) => parts
                .iter()
                .filter_map(|p| p.choose(rng).cloned())
                .collect::<Vec<_>>()
                .join(" "),
            ValueSource::Date { from_year, to_year } => format!(
                "{} {} {}",
                rng.gen_range(1..=28),
                MONTHS[rng.gen_range(0..12)],
                rng.gen_range(*from_year..=*to_year)
            ),
            ValueSource::Integer { min, max } => rng.gen_range(*min..=*max).to_string(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            ValueSource::Pool(items) => items.is_empty(),
            ValueSource::Combo(parts) => parts.is_empty() || parts.iter().any(Vec::is_empty),
            ValueSource::Date { from_year, to_year } => from_year > to_year,
            ValueSource::Integer { min, max } => min > max,
        }
    }
}

/// A slot that shares its parent's row. The template fragment is appended to
/// the parent sentence and must contain `{value}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSlotSpec {
    pub slot_type: String,
    pub source: ValueSource,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSpec {
    pub slot_type: String,
    pub source: ValueSource,
    /// Probability that the slot is present at all.
    pub probability: f64,
    pub min_rows: usize,
    pub max_rows: usize,
    /// Sentence with `{value}` and optionally `{subject}` and `{subslots}`.
    pub template: String,
    pub subslots: Vec<SubSlotSpec>,
    /// Probability that a row carries its sub-slots (all or none).
    pub subslot_probability: f64,
    /// Describe this slot's rows in random order rather than table order.
    pub shuffle_rows: bool,
}

impl SlotSpec {
    pub fn simple(slot_type: &str, source: ValueSource, template: &str) -> Self {
        Self {
            slot_type: slot_type.into(),
            source,
            probability: 1.0,
            min_rows: 1,
            max_rows: 1,
            template: template.into(),
            subslots: Vec::new(),
            subslot_probability: 0.0,
            shuffle_rows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub slots: Vec<SlotSpec>,
    /// Pronouns used as `{subject}`; one is picked per entity.
    pub pronouns: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Schema {
    /// Footballer biographies: name, 1-3 team rows (each optionally with
    /// matches and goals on the same row), birth date, optional birthplace,
    /// citizenship and playing position.
    pub fn person() -> Self {
        let first = strings(&[
            "Ada", "Maya", "Noa", "Lina", "Sara", "Yael", "Dana", "Ella", "Mira", "Tamar", "Rina", "Gali", "Omri",
            "Eitan", "Yoav", "Ariel", "Ilan", "Nadav", "Ronen", "Tomer", "Avi", "Guy", "Lior", "Shai", "Amit",
            "Karin", "Hila", "Inbar", "Keren", "Liat",
        ]);
        let last = strings(&[
            "Jan", "Levi", "Cohen", "Mizrahi", "Peretz", "Biton", "Dahan", "Avraham", "Friedman", "Azulay", "Katz",
            "Yosef", "David", "Amar", "Ohana", "Hadad", "Gabay", "Ben", "Shapiro", "Malka", "Segal", "Golan", "Tal",
            "Vaknin", "Halevi", "Sasson", "Baruch", "Elbaz", "Zur", "Naim", "Ashkenazi", "Carmi", "Doron", "Efrat",
            "Galili", "Harel", "Idan", "Kedem", "Lavie", "Meron",
        ]);
        let cities = strings(&[
            "Haifa", "Holon", "Ashdod", "Netanya", "Rehovot", "Herzliya", "Nazareth", "Eilat", "Tiberias", "Afula",
            "Ramla", "Lod", "Acre", "Sderot", "Arad", "Dimona", "Modiin", "Yavne", "Kiryat Gat", "Bat Yam",
            "Raanana", "Kfar Saba", "Hadera", "Nahariya", "Karmiel", "Safed", "Beersheba", "Ashkelon", "Petah Tikva",
            "Rishon LeZion",
        ]);
        let suffixes = strings(&["United", "Rovers", "Athletic", "City", "Wanderers", "Albion"]);
        let countries = strings(&[
            "Israel", "Spain", "France", "Brazil", "Germany", "Italy", "Norway", "Japan", "Canada", "Ghana",
            "Mexico", "Sweden",
        ]);
        let positions = strings(&["forward", "midfielder", "defender", "goalkeeper", "winger"]);
        Self {
            slots: vec![
                SlotSpec::simple(
                    "Name",
                    ValueSource::Combo(vec![first, last]),
                    "{value} is a professional footballer .",
                ),
                SlotSpec {
                    slot_type: "Member of sports team".into(),
                    source: ValueSource::Combo(vec![cities.clone(), suffixes]),
                    probability: 1.0,
                    min_rows: 1,
                    max_rows: 3,
                    template: "{subject} played for {value}{subslots} .".into(),
                    subslots: vec![
                        SubSlotSpec {
                            slot_type: "Matches".into(),
                            source: ValueSource::Integer { min: 1, max: 40 },
                            template: " , making {value} appearances".into(),
                        },
                        SubSlotSpec {
                            slot_type: "Goals".into(),
                            source: ValueSource::Integer { min: 41, max: 80 },
                            template: " and scoring {value} goals".into(),
                        },
                    ],
                    subslot_probability: 0.5,
                    shuffle_rows: true,
                },
                SlotSpec::simple(
                    "Date of birth",
                    ValueSource::Date { from_year: 1960, to_year: 2000 },
                    "{subject} was born on {value} .",
                ),
                SlotSpec {
                    probability: 0.6,
                    ..SlotSpec::simple("Place of birth", ValueSource::Pool(cities), "{subject} grew up in {value} .")
                },
                SlotSpec::simple(
                    "Country of citizenship",
                    ValueSource::Pool(countries),
                    "{subject} is a citizen of {value} .",
                ),
                SlotSpec::simple("Position", ValueSource::Pool(positions), "{subject} plays as a {value} ."),
            ],
            pronouns: strings(&["she", "he"]),
        }
    }

    /// A schema with a single one-row slot.
    pub fn single_slot(slot_type: &str, values: &[&str]) -> Self {
        Self {
            slots: vec![SlotSpec::simple(slot_type, ValueSource::Pool(strings(values)), "the value is {value} .")],
            pronouns: strings(&["it"]),
        }
    }

    /// Smallest and largest possible number of triples per KB.
    pub fn slots_per_table_range(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for s in &self.slots {
            if s.probability >= 1.0 {
                lo += s.min_rows * if s.subslot_probability >= 1.0 { 1 + s.subslots.len() } else { 1 };
            }
            hi += s.max_rows * (1 + if s.subslot_probability > 0.0 { s.subslots.len() } else { 0 });
        }
        (lo, hi)
    }

    fn validate(&self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(KbError::Corpus("schema has no slot types".into()));
        }
        for s in &self.slots {
            if s.source.is_empty() || s.subslots.iter().any(|sub| sub.source.is_empty()) {
                return Err(KbError::Corpus(format!("slot {:?} has an empty value source", s.slot_type)));
            }
            if s.min_rows == 0 || s.min_rows > s.max_rows {
                return Err(KbError::Corpus(format!("slot {:?} has an invalid row range", s.slot_type)));
            }
            if !s.template.contains("{value}") {
                return Err(KbError::Corpus(format!("template for {:?} lacks {{value}}", s.slot_type)));
            }
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Generate `n_entities` examples. Output depends only on `seed` and the
/// schema.
pub fn synth_corpus(n_entities: usize, seed: u64, schema: &Schema) -> Result<Vec<Example>> {
    if n_entities == 0 {
        return Err(KbError::Corpus("n_entities must be at least 1".into()));
    }
    schema.validate()?;
    let mut rng = numkit::rng::seeded(seed);
    let mut out = Vec::with_capacity(n_entities);
    let width = n_entities.to_string().len().max(4);
    for e in 0..n_entities {
        let subject = schema.pronouns.choose(&mut rng).cloned().unwrap_or_else(|| "it".into());
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        let mut sentences: Vec<String> = Vec::new();
        for slot in &schema.slots {
            if slot.probability < 1.0 && !rng.gen_bool(slot.probability) {
                continue;
            }
            let n_rows = rng.gen_range(slot.min_rows..=slot.max_rows);
            let mut used = Vec::new();
            // (value, sub-slot text) per row, rendered after optional shuffling
            let mut described: Vec<(String, String)> = Vec::new();
            for _ in 0..n_rows {
                // Repeated draws within one slot would make rows ambiguous.
                let mut value = slot.source.draw(&mut rng);
                for _ in 0..20 {
                    if !used.contains(&value) {
                        break;
                    }
                    value = slot.source.draw(&mut rng);
                }
                if used.contains(&value) {
                    continue;
                }
                used.push(value.clone());
                let row = entries.last().map_or(1, |t| t.2 + 1);
                entries.push((slot.slot_type.clone(), value.clone(), row));
                let mut tail = String::new();
                if !slot.subslots.is_empty() && slot.subslot_probability > 0.0 && rng.gen_bool(slot.subslot_probability.min(1.0)) {
                    for sub in &slot.subslots {
                        let v = sub.source.draw(&mut rng);
                        tail.push_str(&sub.template.replace("{value}", &v));
                        entries.push((sub.slot_type.clone(), v, row));
                    }
                }
                described.push((value, tail));
            }
            if slot.shuffle_rows {
                described.shuffle(&mut rng);
            }
            for (value, tail) in described {
                let subj = if sentences.is_empty() { capitalize(&subject) } else { subject.clone() };
                let sentence = slot
                    .template
                    .replace("{subslots}", &tail)
                    .replace("{subject}", &subj)
                    .replace("{value}", &value);
                sentences.push(capitalize(&sentence));
            }
        }
        let kb = KnowledgeBase::new(format!("e{e:0width$}"), entries)?;
        out.push(Example::new(kb, sentences.join(" "))?);
    }
    Ok(out)
}
