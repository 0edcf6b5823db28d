//! Template generator for discharge-summary-like documents with gold
//! annotations, a matching prescription table and tokenized notes.

use std::fs;
use std::path::Path;

use medslot_core::corpus::{
    align_events_to_sentences, parse_annotation_file, segment_sentences, ClinicalDocument,
    SentencePair, SlotLabel,
};
use medslot_core::distmatch::PrescriptionRecord;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{write_atomic, write_jsonl, write_records, NoteLine};

const WRAP_WIDTH: usize = 72;

struct Drug {
    name: &'static str,
    doses: &'static [&'static str],
    form: &'static str,
    routes: &'static [&'static str],
    freqs: &'static [&'static str],
    reasons: &'static [&'static str],
}

const fn drug(
    name: &'static str,
    doses: &'static [&'static str],
    form: &'static str,
    routes: &'static [&'static str],
    freqs: &'static [&'static str],
    reasons: &'static [&'static str],
) -> Drug {
    Drug {
        name,
        doses,
        form,
        routes,
        freqs,
        reasons,
    }
}

/// Number of medications in the built-in lexicon.
pub const DRUG_COUNT: usize = DRUGS.len();

const DRUGS: &[Drug] = &[
    drug(
        "aspirin",
        &["81 mg", "325 mg"],
        "tablet",
        &["po"],
        &["qd"],
        &["coronary artery disease", "chest pain"],
    ),
    drug(
        "metoprolol",
        &["25 mg", "50 mg"],
        "tablet",
        &["po"],
        &["bid", "qd"],
        &["hypertension", "atrial fibrillation"],
    ),
    drug(
        "lisinopril",
        &["10 mg", "20 mg"],
        "tablet",
        &["po"],
        &["qd"],
        &["hypertension"],
    ),
    drug(
        "atorvastatin",
        &["40 mg", "80 mg"],
        "tablet",
        &["po"],
        &["qhs", "qd"],
        &["hyperlipidemia"],
    ),
    drug(
        "furosemide",
        &["20 mg", "40 mg"],
        "tablet",
        &["po", "iv"],
        &["qd", "bid"],
        &["edema", "fluid overload"],
    ),
    drug(
        "heparin",
        &["5000 units"],
        "injection",
        &["sc"],
        &["tid", "bid"],
        &["dvt prophylaxis"],
    ),
    drug(
        "insulin glargine",
        &["10 units", "20 units"],
        "injection",
        &["sc"],
        &["qhs"],
        &["diabetes"],
    ),
    drug(
        "acetaminophen",
        &["650 mg", "500 mg"],
        "tablet",
        &["po"],
        &["qid", "prn"],
        &["pain", "fever"],
    ),
    drug(
        "oxycodone",
        &["5 mg", "10 mg"],
        "tablet",
        &["po"],
        &["qid", "prn"],
        &["pain"],
    ),
    drug(
        "warfarin",
        &["5 mg", "2.5 mg"],
        "tablet",
        &["po"],
        &["qd", "qhs"],
        &["atrial fibrillation"],
    ),
    drug(
        "vancomycin",
        &["1 g", "1250 mg"],
        "injection",
        &["iv"],
        &["bid"],
        &["pneumonia", "cellulitis"],
    ),
    drug(
        "ceftriaxone",
        &["1 g", "2 g"],
        "injection",
        &["iv"],
        &["qd"],
        &["pneumonia", "urinary tract infection"],
    ),
    drug(
        "levofloxacin",
        &["500 mg", "750 mg"],
        "tablet",
        &["po"],
        &["qd"],
        &["pneumonia"],
    ),
    drug(
        "pantoprazole",
        &["40 mg"],
        "tablet",
        &["po", "iv"],
        &["qd", "bid"],
        &["gastritis", "reflux"],
    ),
    drug(
        "albuterol",
        &["2 puffs", "2.5 mg"],
        "inhaler",
        &["inh"],
        &["qid", "prn"],
        &["wheezing", "shortness of breath"],
    ),
    drug(
        "prednisone",
        &["40 mg", "20 mg"],
        "tablet",
        &["po"],
        &["qd"],
        &["copd exacerbation"],
    ),
    drug(
        "lorazepam",
        &["0.5 mg", "1 mg"],
        "tablet",
        &["po", "iv"],
        &["prn", "qhs"],
        &["anxiety", "agitation"],
    ),
    drug(
        "docusate",
        &["100 mg"],
        "capsule",
        &["po"],
        &["bid"],
        &["constipation"],
    ),
    drug(
        "nitroglycerin",
        &["0.4 mg"],
        "tablet",
        &["sl"],
        &["prn"],
        &["chest pain"],
    ),
    drug(
        "metformin",
        &["500 mg", "1000 mg"],
        "tablet",
        &["po"],
        &["bid"],
        &["diabetes"],
    ),
    drug(
        "amlodipine",
        &["5 mg", "10 mg"],
        "tablet",
        &["po"],
        &["qd"],
        &["hypertension"],
    ),
    drug(
        "gabapentin",
        &["300 mg"],
        "capsule",
        &["po"],
        &["tid"],
        &["neuropathic pain"],
    ),
    drug(
        "morphine",
        &["2 mg", "4 mg"],
        "injection",
        &["iv"],
        &["prn"],
        &["pain"],
    ),
    drug(
        "enoxaparin",
        &["40 mg"],
        "injection",
        &["sc"],
        &["qd"],
        &["dvt prophylaxis"],
    ),
];

fn route_phrases(code: &str) -> &'static [&'static str] {
    match code {
        "po" => &["po", "by mouth", "orally"],
        "iv" => &["iv", "intravenously"],
        "sc" => &["subcutaneously", "sc", "subq"],
        "inh" => &["inhaled", "nebulized"],
        "sl" => &["sublingually", "sl"],
        _ => unreachable!("unknown route code"),
    }
}

fn freq_phrases(code: &str) -> &'static [&'static str] {
    match code {
        "qd" => &["daily", "once a day", "qd"],
        "bid" => &["bid", "twice daily", "twice a day", "every 12 hours"],
        "tid" => &["tid", "three times a day", "every 8 hours"],
        "qid" => &["q6h", "four times a day", "every 6 hours"],
        "qhs" => &["at bedtime", "nightly", "qhs"],
        "prn" => &["as needed", "prn"],
        _ => unreachable!("unknown frequency code"),
    }
}

const DURATIONS: &[&str] = &[
    "3 days",
    "5 days",
    "7 days",
    "10 days",
    "14 days",
    "2 weeks",
    "3 weeks",
    "one month",
    "two weeks",
];
const DURATION_PREFIXES: &[&str] = &["for", "x", "for a total of"];
const OPENERS: &[&str] = &[
    "continue",
    "start",
    "he was started on",
    "she was discharged on",
    "patient will take",
    "give",
    "resume",
    "take",
];
const CONDITIONS: &[&str] = &[
    "hypertension",
    "diabetes",
    "coronary artery disease",
    "atrial fibrillation",
    "copd",
    "chronic kidney disease",
    "hyperlipidemia",
    "pneumonia",
];
const DOCTORS: &[&str] = &["Smith", "Patel", "Nguyen", "Garcia", "Cohen", "Okafor"];

/// One medication mention: `(label, value, start, end)` with inclusive
/// character offsets into the sentence text.
type Mention = Vec<(SlotLabel, String, usize, usize)>;

/// A sentence under construction.
#[derive(Default)]
struct Sent {
    text: String,
    events: Vec<Mention>,
}

impl Sent {
    fn word(&mut self, w: &str) -> &mut Self {
        if !self.text.is_empty() && !w.starts_with([',', '.']) {
            self.text.push(' ');
        }
        self.text.push_str(w);
        self
    }

    fn slot(&mut self, label: SlotLabel, value: &str) -> &mut Self {
        if !self.text.is_empty() {
            self.text.push(' ');
        }
        let start = self.text.len();
        self.text.push_str(value);
        let end = self.text.len() - 1;
        self.events
            .last_mut()
            .expect("slot outside an event")
            .push((label, value.to_string(), start, end));
        self
    }

    fn event(&mut self) -> &mut Self {
        self.events.push(Vec::new());
        self
    }

    fn finish(mut self) -> Self {
        self.text.push('.');
        let mut chars = self.text.chars();
        if let Some(first) = chars.next() {
            self.text = first.to_uppercase().chain(chars).collect();
        }
        self
    }
}

/// What a mention carries, used for the prescription table.
struct Given {
    drug: &'static Drug,
    dose: &'static str,
    route: &'static str,
    freq: &'static str,
}

struct Gen {
    rng: ChaCha8Rng,
    drugs: &'static [Drug],
    variants: usize,
    given: Vec<Given>,
    pronoun: &'static str,
}

impl Gen {
    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(&mut self.rng).expect("non-empty choice")
    }

    /// Picks among the first `variants` surface forms only.
    fn phrase(&mut self, items: &[&'static str]) -> &'static str {
        let n = items.len().min(self.variants);
        self.pick(&items[..n])
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn drug(&mut self) -> &'static Drug {
        &self.drugs[self.rng.random_range(0..self.drugs.len())]
    }

    /// `drug dose route freq` in one of two orders, with optional
    /// duration and reason.
    fn full_mention(&mut self, s: &mut Sent, d: &'static Drug, extras: bool) {
        let dose = self.pick(d.doses);
        let route = self.pick(d.routes);
        let freq = self.pick(d.freqs);
        let route_text = self.phrase(route_phrases(route));
        let freq_text = self.phrase(freq_phrases(freq));
        self.given.push(Given {
            drug: d,
            dose,
            route,
            freq,
        });
        s.event()
            .slot(SlotLabel::Name, d.name)
            .slot(SlotLabel::Dose, dose);
        if self.chance(0.8) {
            s.slot(SlotLabel::Mode, route_text)
                .slot(SlotLabel::Frequency, freq_text);
        } else {
            s.slot(SlotLabel::Frequency, freq_text)
                .slot(SlotLabel::Mode, route_text);
        }
        if !extras {
            return;
        }
        let duration = self
            .chance(0.35)
            .then(|| (self.phrase(DURATION_PREFIXES), self.phrase(DURATIONS)));
        let reason = self.chance(0.35).then(|| self.pick(d.reasons));
        let reason_first = self.chance(0.5);
        if let (Some(r), true) = (reason, reason_first) {
            s.word("for").slot(SlotLabel::Reason, r);
        }
        if let Some((prefix, v)) = duration {
            s.word(prefix).slot(SlotLabel::Duration, v);
        }
        if let (Some(r), false) = (reason, reason_first) {
            s.word("for").slot(SlotLabel::Reason, r);
        }
    }

    fn med_sentence(&mut self) -> Sent {
        let mut s = Sent::default();
        let d = self.drug();
        match self.rng.random_range(0..10) {
            0..=3 => {
                let opener = self.phrase(OPENERS);
                s.word(opener);
                self.full_mention(&mut s, d, true);
            }
            4..=5 => self.full_mention(&mut s, d, true),
            6 => {
                let dose = self.pick(d.doses);
                let route = self.pick(d.routes);
                let route_text = self.phrase(route_phrases(route));
                let reason = self.pick(d.reasons);
                s.word(self.phrase(&["the patient received", "she received", "he was given"]));
                s.event()
                    .slot(SlotLabel::Name, d.name)
                    .slot(SlotLabel::Dose, dose)
                    .slot(SlotLabel::Mode, route_text)
                    .word("for")
                    .slot(SlotLabel::Reason, reason);
            }
            7 => {
                if self.chance(0.5) {
                    s.event()
                        .slot(SlotLabel::Name, d.name)
                        .word("was discontinued");
                } else {
                    let reason =
                        self.phrase(&["hypotension", "bleeding", "renal failure", "nausea"]);
                    s.word("hold")
                        .event()
                        .slot(SlotLabel::Name, d.name)
                        .word("for")
                        .slot(SlotLabel::Reason, reason);
                }
            }
            8 => {
                let opener = self.phrase(OPENERS);
                s.word(opener);
                self.full_mention(&mut s, d, false);
                s.word("and");
                let other = self.drug();
                self.full_mention(&mut s, other, false);
            }
            _ => {
                let reason = self.pick(d.reasons);
                s.word("for")
                    .event()
                    .slot(SlotLabel::Reason, reason)
                    .word(",");
                s.word(self.phrase(&["give", "start", "continue"]));
                let dose = self.pick(d.doses);
                let route = self.pick(d.routes);
                let freq = self.pick(d.freqs);
                let route_text = self.phrase(route_phrases(route));
                let freq_text = self.phrase(freq_phrases(freq));
                self.given.push(Given {
                    drug: d,
                    dose,
                    route,
                    freq,
                });
                s.slot(SlotLabel::Name, d.name)
                    .slot(SlotLabel::Dose, dose)
                    .slot(SlotLabel::Mode, route_text)
                    .slot(SlotLabel::Frequency, freq_text);
            }
        }
        s.finish()
    }

    fn plain_sentence(&mut self) -> Sent {
        let pronoun = self.pronoun;
        let text = match self.rng.random_range(0..9) {
            0 => format!(
                "the patient is a {} year old {} with a history of {} and {}",
                self.rng.random_range(35..90),
                if pronoun == "he" { "man" } else { "woman" },
                self.pick(CONDITIONS),
                self.pick(CONDITIONS)
            ),
            1 => format!("{pronoun} was admitted with {}", self.pick(CONDITIONS)),
            2 => "vital signs were stable on discharge".to_string(),
            3 => format!("{pronoun} remained afebrile throughout the hospital course"),
            4 => format!(
                "labs were notable for a creatinine of {}.{} on admission",
                self.rng.random_range(0..3),
                self.rng.random_range(0..10)
            ),
            5 => format!(
                "follow up with Dr. {} in {} weeks",
                self.pick(DOCTORS),
                self.rng.random_range(1..5)
            ),
            6 => "chest x-ray showed no acute process".to_string(),
            7 => format!("{pronoun} tolerated a regular diet"),
            _ => "physical therapy was consulted".to_string(),
        };
        let mut s = Sent::default();
        s.word(&text);
        s.finish()
    }
}

/// `(line, char)` in the document, line 1-based.
type LinePos = (usize, usize);

/// Builds document lines and annotation events with document positions.
#[derive(Default)]
struct DocBuilder {
    lines: Vec<String>,
    events: Vec<Vec<(SlotLabel, String, LinePos, LinePos)>>,
}

impl DocBuilder {
    fn header(&mut self, title: &str) {
        self.lines.push(title.to_string());
        self.lines.push(String::new());
    }

    /// Joins sentences with spaces after `prefix`, wraps at spaces and maps
    /// every mention to `(line, char)` positions.
    fn paragraph(&mut self, prefix: &str, sentences: Vec<Sent>) {
        let mut text = prefix.to_string();
        let mut mentions = Vec::new();
        for s in sentences {
            if !text.is_empty() && !text.ends_with(' ') {
                text.push(' ');
            }
            let base = text.len();
            text.push_str(&s.text);
            for ev in s.events {
                mentions.push(
                    ev.into_iter()
                        .map(|(l, v, a, b)| (l, v, a + base, b + base))
                        .collect::<Vec<_>>(),
                );
            }
        }
        let mut starts = vec![0];
        let mut line_start = 0;
        let mut last_space = None;
        for (i, c) in text.char_indices() {
            if c == ' ' {
                last_space = Some(i);
            }
            if i - line_start >= WRAP_WIDTH {
                if let Some(sp) = last_space.filter(|&sp| sp > line_start) {
                    line_start = sp + 1;
                    starts.push(line_start);
                    last_space = None;
                }
            }
        }
        let first_line = self.lines.len() + 1;
        for (k, &st) in starts.iter().enumerate() {
            let end = starts.get(k + 1).map_or(text.len(), |&n| n - 1);
            self.lines.push(text[st..end].to_string());
        }
        let locate = |o: usize| {
            let k = starts.iter().rposition(|&st| st <= o).unwrap_or(0);
            (first_line + k, o - starts[k])
        };
        for ev in mentions {
            self.events.push(
                ev.into_iter()
                    .map(|(l, v, a, b)| (l, v, locate(a), locate(b)))
                    .collect(),
            );
        }
    }

    fn annotations(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            let entries: Vec<String> = SlotLabel::ALL
                .into_iter()
                .map(|label| match ev.iter().find(|e| e.0 == label) {
                    Some((_, v, (l1, c1), (l2, c2))) => {
                        format!("{}=\"{v}\" {l1}:{c1} {l2}:{c2}", label.code())
                    }
                    None => format!("{}=\"nm\"", label.code()),
                })
                .collect();
            out.push_str(&entries.join("||"));
            out.push('\n');
        }
        out
    }
}

/// Lexical diversity of the generated text. Small corpora whose training
/// split has to cover the vocabulary use a narrower lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    /// Medications drawn from the first `drugs` lexicon entries
    /// (clamped to `1..=DRUG_COUNT`).
    pub drugs: usize,
    /// Surface forms per route, frequency, duration and opener list.
    pub variants: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            drugs: DRUG_COUNT,
            variants: usize::MAX,
        }
    }
}

/// A generated document with its annotation file text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDoc {
    pub doc_id: String,
    pub text: String,
    pub annotations: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub docs: Vec<SynthDoc>,
    /// One row per fully specified mention plus decoys for drugs the
    /// patient's notes never mention; the patient id is the document id.
    pub records: Vec<PrescriptionRecord>,
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn record(patient: &str, drug: &Drug, dose: &str, route: &str, freq: &str) -> PrescriptionRecord {
    let (value, unit) = dose.split_once(' ').unwrap_or((dose, ""));
    PrescriptionRecord {
        patient_id: patient.to_string(),
        drug: title_case(drug.name),
        dose_value: value.to_string(),
        dose_unit: unit.to_string(),
        form: title_case(drug.form),
        route: route.to_uppercase(),
        frequency: freq.to_uppercase(),
    }
}

impl SynthCorpus {
    /// Deterministic for a given `(num_docs, seed)`.
    pub fn generate(num_docs: usize, seed: u64) -> Self {
        Self::generate_with(num_docs, seed, SynthOptions::default())
    }

    /// Deterministic for a given `(num_docs, seed, options)`.
    pub fn generate_with(num_docs: usize, seed: u64, options: SynthOptions) -> Self {
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            drugs: &DRUGS[..options.drugs.clamp(1, DRUGS.len())],
            variants: options.variants.max(1),
            given: Vec::new(),
            pronoun: "he",
        };
        let mut docs = Vec::with_capacity(num_docs);
        let mut records = Vec::new();
        for i in 0..num_docs {
            let doc_id = format!("doc{i:05}");
            g.given.clear();
            g.pronoun = g.pick(&["he", "she"]);
            let mut b = DocBuilder::default();
            b.header("DISCHARGE SUMMARY");
            b.header("HOSPITAL COURSE:");
            let n = g.rng.random_range(2..5);
            let course: Vec<Sent> = (0..n)
                .map(|_| {
                    if g.chance(0.4) {
                        g.med_sentence()
                    } else {
                        g.plain_sentence()
                    }
                })
                .collect();
            b.paragraph("", course);
            b.lines.push(String::new());
            b.header("DISCHARGE MEDICATIONS:");
            for k in 0..g.rng.random_range(2..6) {
                let s = g.med_sentence();
                b.paragraph(&format!("{}.", k + 1), vec![s]);
            }
            b.lines.push(String::new());
            b.header("FOLLOW UP:");
            let n = g.rng.random_range(1..3);
            let follow: Vec<Sent> = (0..n).map(|_| g.plain_sentence()).collect();
            b.paragraph("", follow);

            for given in &g.given {
                records.push(record(
                    &doc_id,
                    given.drug,
                    given.dose,
                    given.route,
                    given.freq,
                ));
            }
            if g.chance(0.5) {
                let decoy = g.drug();
                let text = b.lines.join(" ").to_lowercase();
                if !text.contains(decoy.name) {
                    let dose = g.pick(decoy.doses);
                    let route = g.pick(decoy.routes);
                    let freq = g.pick(decoy.freqs);
                    records.push(record(&doc_id, decoy, dose, route, freq));
                }
            }
            let mut text = b.lines.join("\n");
            text.push('\n');
            docs.push(SynthDoc {
                doc_id,
                text,
                annotations: b.annotations(),
            });
        }
        Self { docs, records }
    }

    /// Gold sentence/frame pairs of every document, in document order.
    pub fn pairs(&self) -> Vec<SentencePair> {
        self.docs
            .iter()
            .flat_map(|d| {
                let doc = ClinicalDocument::from_text(&d.doc_id, &d.text);
                let events =
                    parse_annotation_file(&d.annotations).expect("generated annotations parse");
                align_events_to_sentences(&doc, &events).expect("generated offsets are in range")
            })
            .collect()
    }

    /// Each document's sentences, tokenized, as note lines.
    pub fn notes(&self) -> Vec<NoteLine> {
        self.docs
            .iter()
            .flat_map(|d| {
                let doc = ClinicalDocument::from_text(&d.doc_id, &d.text);
                segment_sentences(&doc).into_iter().map(move |s| NoteLine {
                    patient_id: d.doc_id.clone(),
                    sentence: s.token_texts(),
                })
            })
            .collect()
    }

    /// Writes `docs/<id>.txt`, `annotations/<id>.ann`, `prescriptions.csv`
    /// and `notes.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let docs = dir.join("docs");
        let anns = dir.join("annotations");
        for d in [&docs, &anns] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for d in &self.docs {
            write_atomic(&docs.join(format!("{}.txt", d.doc_id)), |w| {
                w.write_all(d.text.as_bytes())
            })?;
            write_atomic(&anns.join(format!("{}.ann", d.doc_id)), |w| {
                w.write_all(d.annotations.as_bytes())
            })?;
        }
        write_records(&dir.join("prescriptions.csv"), &self.records)?;
        write_jsonl(&dir.join("notes.jsonl"), &self.notes())
    }
}
