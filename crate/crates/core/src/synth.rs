//! Synthetic German-style reports whose sentences encode every label state.
//!
//! Each finding sits on its own line in one of a few fixed frames, so the
//! three-state truth can be read back from the text exactly.

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::repair_hierarchy;
use crate::model::{LabelSheet, LabelState, Provenance, Region, ReportDocument};
use crate::template::{normalize_label, LabelTemplate};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthError {
    #[error("profile names unknown label {0:?}")]
    UnknownLabel(String),
    #[error("rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("label {label:?} needs {needed} reports but the corpus has {n}")]
    CountExceedsCorpus { label: String, needed: usize, n: usize },
    #[error("label {label:?} needs {needed} {state} cells but only {eligible} reports have consistent parents")]
    Infeasible {
        label: String,
        state: LabelState,
        needed: usize,
        eligible: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCount {
    #[serde(rename = "true", default)]
    pub true_count: usize,
    #[serde(rename = "uncertain", default)]
    pub uncertain_count: usize,
}

/// How often each label is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevalenceProfile {
    /// Every label positive with this probability.
    Uniform(f64),
    /// Per-label probabilities; unlisted labels are never positive.
    Rates(IndexMap<String, f64>),
    /// Exact per-label True and Uncertain counts.
    Counts(IndexMap<String, LabelCount>),
}

/// Whether generated truth must satisfy the template hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyMode {
    /// Rate profiles are repaired upward; count profiles place parents first and
    /// only put children under parents of at least equal severity.
    #[default]
    Consistent,
    /// Labels are drawn independently.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub region: Region,
    pub n: usize,
    pub profile: PrevalenceProfile,
    /// Probability that a positive cell of a rate profile is hedged.
    #[serde(default)]
    pub uncertainty_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub hierarchy: HierarchyMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub reports: Vec<ReportDocument>,
    pub truth: Vec<LabelSheet>,
}

const FIRST_NAMES: [&str; 10] = ["Hans", "Anna", "Peter", "Maria", "Klaus", "Petra", "Jürgen", "Ursula", "Stefan", "Monika"];
const SURNAMES: [&str; 10] = [
    "Müller", "Schmidt", "Schneider", "Fischer", "Meyer", "Wagner", "Becker", "Schulz", "Hoffmann", "Koch",
];
const PHYSICIANS: [&str; 8] = ["Keller", "Wolf", "Neumann", "Braun", "Zimmermann", "Krüger", "Hartmann", "Lange"];
const INDICATIONS: [&str; 5] = [
    "Klinische Angaben: Sturz auf die Schulter.",
    "Klinische Angaben: Schmerzen nach Trauma.",
    "Klinische Angaben: Verlaufskontrolle.",
    "Klinische Angaben: Schwellung seit einer Woche.",
    "Klinische Angaben: Bewegungseinschränkung.",
];
const FILLERS: [&str; 4] = [
    "Regelrechte Darstellung der abgebildeten Skelettabschnitte.",
    "Altersentsprechender Mineralsalzgehalt.",
    "Voraufnahmen liegen nicht vor.",
    "Keine weiteren Auffälligkeiten.",
];

const TRUE_PREFIX: &str = "Befund: ";
const FALSE_PREFIX: &str = "Kein Anhalt für ";
const HEDGE_PREFIXES: [&str; 5] = ["Verdacht auf ", "Möglicherweise ", "Am ehesten ", "DD ", "Als DD käme in Frage "];
const HEDGE_SUFFIXES: [&str; 2] = [" nicht ausgeschlossen.", " nicht sicher abgrenzbar."];

/// The sentence stating `label` as present.
pub fn true_sentence(label: &str) -> String {
    format!("{TRUE_PREFIX}{label}.")
}

/// The sentence stating `label` as absent.
pub fn false_sentence(label: &str) -> String {
    format!("{FALSE_PREFIX}{label}.")
}

/// The hedged sentence for `label`; `variant` picks one of the frames.
pub fn hedged_sentence(label: &str, variant: usize) -> String {
    let n = HEDGE_PREFIXES.len() + HEDGE_SUFFIXES.len();
    let v = variant % n;
    if v < HEDGE_PREFIXES.len() {
        format!("{}{label}.", HEDGE_PREFIXES[v])
    } else {
        format!("{label}{}", HEDGE_SUFFIXES[v - HEDGE_PREFIXES.len()])
    }
}

/// Number of hedged sentence frames.
pub fn hedge_variants() -> usize {
    HEDGE_PREFIXES.len() + HEDGE_SUFFIXES.len()
}

fn decode_line(line: &str) -> Option<(&str, LabelState)> {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(TRUE_PREFIX) {
        return Some((rest.strip_suffix('.')?, LabelState::True));
    }
    if let Some(rest) = line.strip_prefix(FALSE_PREFIX) {
        return Some((rest.strip_suffix('.')?, LabelState::False));
    }
    for p in HEDGE_PREFIXES {
        if let Some(rest) = line.strip_prefix(p) {
            return Some((rest.strip_suffix('.')?, LabelState::Uncertain));
        }
    }
    for s in HEDGE_SUFFIXES {
        if let Some(rest) = line.strip_suffix(s) {
            return Some((rest, LabelState::Uncertain));
        }
    }
    None
}

/// Explicitly stated findings of a synthetic report; unmentioned labels are absent.
pub fn decode_findings(text: &str, template: &LabelTemplate) -> IndexMap<String, LabelState> {
    let mut out = IndexMap::new();
    for line in text.lines() {
        if let Some((label, state)) = decode_line(line) {
            let label = normalize_label(label);
            if template.contains(&label) {
                let merged = out.get(&label).map_or(state, |s: &LabelState| s.max_severity(state));
                out.insert(label, merged);
            }
        }
    }
    out
}

fn region_name_de(region: &Region) -> String {
    match region.as_str() {
        "clavicle" => "Klavikula".into(),
        "elbow" => "Ellenbogen".into(),
        "thumb" => "Daumen".into(),
        other => other.to_owned(),
    }
}

fn check_rate(rate: f64) -> Result<f64, SynthError> {
    if (0.0..=1.0).contains(&rate) {
        Ok(rate)
    } else {
        Err(SynthError::BadRate(rate))
    }
}

fn sample_rates(
    rates: &[f64],
    spec: &CorpusSpec,
    template: &LabelTemplate,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<LabelState>> {
    (0..spec.n)
        .map(|_| {
            let mut row: Vec<LabelState> = rates
                .iter()
                .map(|&p| {
                    if rng.random::<f64>() < p {
                        if rng.random::<f64>() < spec.uncertainty_rate {
                            LabelState::Uncertain
                        } else {
                            LabelState::True
                        }
                    } else {
                        LabelState::False
                    }
                })
                .collect();
            if spec.hierarchy == HierarchyMode::Consistent {
                let mut sheet = LabelSheet::filled("tmp", template, LabelState::False);
                for (l, s) in template.labels().iter().zip(&row) {
                    sheet.set(l, *s);
                }
                let repaired = repair_hierarchy(&sheet, template);
                row = template.labels().iter().map(|l| repaired.get(l).expect("label")).collect();
            }
            row
        })
        .collect()
}

fn place_counts(
    counts: &[LabelCount],
    spec: &CorpusSpec,
    template: &LabelTemplate,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<LabelState>>, SynthError> {
    let n = spec.n;
    let mut grid = vec![vec![LabelState::False; template.len()]; n];
    let order: Vec<usize> = match spec.hierarchy {
        HierarchyMode::Consistent => template.children_first().iter().rev().copied().collect(),
        HierarchyMode::Independent => (0..template.len()).collect(),
    };
    for label in order {
        let c = counts[label];
        let name = &template.labels()[label];
        if c.true_count + c.uncertain_count > n {
            return Err(SynthError::CountExceedsCorpus {
                label: name.clone(),
                needed: c.true_count + c.uncertain_count,
                n,
            });
        }
        let parents: Vec<usize> = match spec.hierarchy {
            HierarchyMode::Consistent => template.parents_of(label).collect(),
            HierarchyMode::Independent => Vec::new(),
        };
        let floor = |row: &Vec<LabelState>, min: u8| parents.iter().all(|&p| row[p].severity() >= min);

        let mut eligible: Vec<usize> = (0..n).filter(|&r| floor(&grid[r], 2)).collect();
        if eligible.len() < c.true_count {
            return Err(SynthError::Infeasible {
                label: name.clone(),
                state: LabelState::True,
                needed: c.true_count,
                eligible: eligible.len(),
            });
        }
        eligible.shuffle(rng);
        for &r in &eligible[..c.true_count] {
            grid[r][label] = LabelState::True;
        }
        let mut eligible: Vec<usize> = (0..n)
            .filter(|&r| grid[r][label] == LabelState::False && floor(&grid[r], 1))
            .collect();
        if eligible.len() < c.uncertain_count {
            return Err(SynthError::Infeasible {
                label: name.clone(),
                state: LabelState::Uncertain,
                needed: c.uncertain_count,
                eligible: eligible.len(),
            });
        }
        eligible.shuffle(rng);
        for &r in &eligible[..c.uncertain_count] {
            grid[r][label] = LabelState::Uncertain;
        }
    }
    Ok(grid)
}

fn date(rng: &mut ChaCha8Rng, years: std::ops::RangeInclusive<u32>) -> String {
    format!("{:02}.{:02}.{}", rng.random_range(1..=28), rng.random_range(1..=12), rng.random_range(years))
}

fn render_report(id: String, region: &Region, template: &LabelTemplate, row: &[LabelState], rng: &mut ChaCha8Rng) -> ReportDocument {
    let first = *FIRST_NAMES.choose(rng).expect("non-empty");
    let last = *SURNAMES.choose(rng).expect("non-empty");
    let physician = *PHYSICIANS.choose(rng).expect("non-empty");
    let birth = date(rng, 1935..=2005);
    let exam = date(rng, 2015..=2023);
    let patient_id = rng.random_range(1_000_000u32..10_000_000).to_string();

    let mut findings: Vec<String> = Vec::new();
    for (label, state) in template.labels().iter().zip(row) {
        match state {
            LabelState::True => findings.push(true_sentence(label)),
            LabelState::Uncertain => findings.push(hedged_sentence(label, rng.random_range(0..hedge_variants()))),
            LabelState::False => {
                if rng.random::<f64>() < 0.3 {
                    findings.push(false_sentence(label));
                }
            }
        }
    }
    if rng.random::<f64>() < 0.5 {
        findings.push(FILLERS.choose(rng).expect("non-empty").to_string());
    }
    findings.shuffle(rng);

    let mut lines = vec![
        format!("Patient: {first} {last}"),
        format!("Geburtsdatum: {birth}"),
        format!("Patienten-ID: {patient_id}"),
        format!("Röntgen {} vom {exam}.", region_name_de(region)),
        INDICATIONS.choose(rng).expect("non-empty").to_string(),
    ];
    lines.extend(findings);
    lines.push(format!("Befundet von Dr. med. {physician}."));

    ReportDocument::new(id, region.clone(), lines.join("\n"))
        .with_metadata("patient_name", format!("{first} {last}"))
        .with_metadata("birth_date", birth)
        .with_metadata("patient_id", patient_id)
        .with_metadata("exam_date", exam)
        .with_metadata("physician", physician)
}

/// Reports plus their three-state truth, deterministic in `spec.seed`.
pub fn generate_corpus(spec: &CorpusSpec, template: &LabelTemplate) -> Result<SyntheticCorpus, SynthError> {
    check_rate(spec.uncertainty_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = match &spec.profile {
        PrevalenceProfile::Uniform(p) => {
            let p = check_rate(*p)?;
            sample_rates(&vec![p; template.len()], spec, template, &mut rng)
        }
        PrevalenceProfile::Rates(map) => {
            let mut rates = vec![0.0; template.len()];
            for (label, &p) in map {
                let i = template
                    .index_of(&normalize_label(label))
                    .ok_or_else(|| SynthError::UnknownLabel(label.clone()))?;
                rates[i] = check_rate(p)?;
            }
            sample_rates(&rates, spec, template, &mut rng)
        }
        PrevalenceProfile::Counts(map) => {
            let mut counts = vec![LabelCount::default(); template.len()];
            for (label, &c) in map {
                let i = template
                    .index_of(&normalize_label(label))
                    .ok_or_else(|| SynthError::UnknownLabel(label.clone()))?;
                counts[i] = c;
            }
            place_counts(&counts, spec, template, &mut rng)?
        }
    };

    let width = spec.n.max(1).to_string().len().max(4);
    let mut reports = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    for (i, row) in grid.iter().enumerate() {
        let id = format!("{}-{:0width$}", spec.region, i + 1);
        reports.push(render_report(id.clone(), &spec.region, template, row, &mut rng));
        let mut sheet = LabelSheet::filled(id, template, LabelState::False);
        sheet.provenance = Provenance::Adjudicated;
        for (label, state) in template.labels().iter().zip(row) {
            sheet.set(label, *state);
        }
        truth.push(sheet);
    }
    Ok(SyntheticCorpus { reports, truth })
}

/// Per-label state counts of the clavicle development pool (training plus
/// validation, 937 reports): True counts are the exclusive positives and
/// Uncertain counts the inclusive-minus-exclusive excess; labels without a
/// published row carry the small remainder needed to reach the pool totals.
pub fn clavicle_development_counts() -> IndexMap<String, LabelCount> {
    const ROWS: [(&str, usize, usize); 26] = [
        ("Fracture (All Locations)", 474, 0),
        ("Medial Third Fracture", 28, 6),
        ("Middle Third Fracture", 258, 5),
        ("Lateral Third Fracture", 182, 3),
        ("Comminuted or Fragmented Fracture (All Locations)", 182, 0),
        ("Displacement", 412, 2),
        ("Sclerotic Lesion", 8, 1),
        ("Lytic Lesion", 2, 3),
        ("Joint Dislocation (All Locations)", 19, 0),
        ("Joint Subluxation (All Locations)", 8, 0),
        ("Joint Degeneration (All Locations)", 60, 0),
        ("Acromioclavicular Joint - Joint Space widened", 48, 1),
        ("Acromioclavicular Joint - Joint Space narrowed", 2, 3),
        ("Acromioclavicular Joint - Subluxation", 22, 0),
        ("Acromioclavicular Joint - Dislocation", 37, 2),
        ("Acromioclavicular Joint Degeneration", 73, 0),
        ("Sternoclavicular Joint - Joint Space widened", 2, 2),
        ("Sternoclavicular Joint - Joint Space narrowed", 2, 2),
        ("Sternoclavicular Joint - Subluxation", 2, 2),
        ("Sternoclavicular Joint - Dislocation", 1, 2),
        ("Sternoclavicular Joint Degeneration", 1, 2),
        ("Swelling or Hematoma", 37, 1),
        ("Soft Tissue Calcifications", 51, 2),
        ("Soft Tissues Masses or Mass-like lesions", 1, 2),
        ("Foreign Bodies", 21, 0),
        ("Ossicles", 9, 1),
    ];
    ROWS.iter()
        .map(|&(l, t, u)| {
            (
                l.to_owned(),
                LabelCount {
                    true_count: t,
                    uncertain_count: u,
                },
            )
        })
        .collect()
}
