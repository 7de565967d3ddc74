//! Deterministic synthetic EHR corpus: table files with an ingest manifest,
//! a concept lexicon, a knowledge graph, code maps, a task registry and a
//! ready-to-run pipeline config.
//!
//! Every patient follows one of eight disease profiles. Each profile has its
//! own complaint, labs, cultures, imaging and drugs, so profile entities and
//! profile diagnoses co-occur far above chance. The heart-failure marker
//! `NT-proBNP` appears only in heart-failure stays and is the planted pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thinkgraph::ehr::ingest::{IngestManifest, TableSpec};
use thinkgraph::task::DEFAULT_REGISTRY;

use crate::manifest::substream;

/// The planted association: context entity and diagnosis label.
pub const PLANTED_CONTEXT: &str = "NT-proBNP";
pub const PLANTED_LABEL: &str = "Heart failure, unspecified";

struct Drug {
    name: &'static str,
    ndc: &'static str,
    atc: &'static str,
}

struct Coded {
    code: &'static str,
    title: &'static str,
    ccs: &'static str,
}

struct Profile {
    complaint: &'static str,
    diagnosis: Coded,
    labs: &'static [&'static str],
    cultures: &'static [&'static str],
    exams: &'static [&'static str],
    drugs: &'static [Drug],
    procedure: Option<Coded>,
    service: &'static str,
    ward: &'static str,
    icu_rate: f64,
}

const PROFILES: &[Profile] = &[
    Profile {
        complaint: "Dyspnea",
        diagnosis: Coded {
            code: "I509",
            title: PLANTED_LABEL,
            ccs: "Congestive heart failure; nonhypertensive",
        },
        labs: &["NT-proBNP", "Creatinine", "Urea Nitrogen"],
        cultures: &[],
        exams: &["CHEST (PA AND LAT)"],
        drugs: &[
            Drug {
                name: "Furosemide",
                ndc: "00054429731",
                atc: "HIGH-CEILING DIURETICS",
            },
            Drug {
                name: "Metoprolol Succinate XL",
                ndc: "00186109205",
                atc: "BETA BLOCKING AGENTS",
            },
        ],
        procedure: Some(Coded {
            code: "B246ZZZ",
            title: "Ultrasonography of Right and Left Heart",
            ccs: "Diagnostic ultrasound of heart",
        }),
        service: "CMED",
        ward: "Cardiology",
        icu_rate: 0.1,
    },
    Profile {
        complaint: "Productive cough",
        diagnosis: Coded {
            code: "J189",
            title: "Pneumonia, unspecified organism",
            ccs: "Pneumonia",
        },
        labs: &["White Blood Cells", "C-Reactive Protein", "Lactate"],
        cultures: &["SPUTUM CULTURE", "BLOOD CULTURE"],
        exams: &["CHEST (PORTABLE AP)"],
        drugs: &[
            Drug {
                name: "CefTRIAXone",
                ndc: "00409732703",
                atc: "OTHER BETA-LACTAM ANTIBACTERIALS",
            },
            Drug {
                name: "Azithromycin",
                ndc: "00069312083",
                atc: "MACROLIDES",
            },
        ],
        procedure: None,
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.15,
    },
    Profile {
        complaint: "Fever",
        diagnosis: Coded {
            code: "A419",
            title: "Sepsis, unspecified organism",
            ccs: "Septicemia",
        },
        labs: &["Lactate", "Procalcitonin", "White Blood Cells"],
        cultures: &["BLOOD CULTURE", "URINE CULTURE"],
        exams: &["CHEST (PORTABLE AP)"],
        drugs: &[
            Drug {
                name: "Vancomycin",
                ndc: "00338355248",
                atc: "GLYCOPEPTIDE ANTIBACTERIALS",
            },
            Drug {
                name: "Piperacillin-Tazobactam",
                ndc: "60505075200",
                atc: "PENICILLIN COMBINATIONS",
            },
        ],
        procedure: Some(Coded {
            code: "02HV33Z",
            title: "Insertion of Infusion Device into Superior Vena Cava",
            ccs: "Central venous catheterization",
        }),
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.7,
    },
    Profile {
        complaint: "Decreased urine output",
        diagnosis: Coded {
            code: "N179",
            title: "Acute kidney failure, unspecified",
            ccs: "Acute renal failure",
        },
        labs: &["Creatinine", "Urea Nitrogen", "Phosphate"],
        cultures: &["URINE CULTURE"],
        exams: &["RENAL ULTRASOUND"],
        drugs: &[Drug {
            name: "Sodium Bicarbonate",
            ndc: "00409662510",
            atc: "ELECTROLYTE SOLUTIONS",
        }],
        procedure: None,
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.1,
    },
    Profile {
        complaint: "Hyperglycemia",
        diagnosis: Coded {
            code: "E1010",
            title: "Type 1 diabetes mellitus with ketoacidosis without coma",
            ccs: "Diabetes mellitus with complications",
        },
        labs: &["Glucose", "Anion Gap", "Bicarbonate", "Beta-Hydroxybutyrate"],
        cultures: &[],
        exams: &[],
        drugs: &[
            Drug {
                name: "Insulin Regular",
                ndc: "00169183311",
                atc: "INSULINS AND ANALOGUES",
            },
            Drug {
                name: "Potassium Chloride",
                ndc: "00338070341",
                atc: "POTASSIUM SUPPLEMENTS",
            },
        ],
        procedure: None,
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.4,
    },
    Profile {
        complaint: "Melena",
        diagnosis: Coded {
            code: "K922",
            title: "Gastrointestinal hemorrhage, unspecified",
            ccs: "Gastrointestinal hemorrhage",
        },
        labs: &["Hemoglobin", "Hematocrit", "INR(PT)"],
        cultures: &[],
        exams: &["CT ABDOMEN W/CONTRAST"],
        drugs: &[Drug {
            name: "Pantoprazole",
            ndc: "00008092355",
            atc: "PROTON PUMP INHIBITORS",
        }],
        procedure: Some(Coded {
            code: "0DJ08ZZ",
            title: "Inspection of Upper Intestinal Tract, Endoscopic",
            ccs: "Upper gastrointestinal endoscopy",
        }),
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.2,
    },
    Profile {
        complaint: "Slurred speech",
        diagnosis: Coded {
            code: "I639",
            title: "Cerebral infarction, unspecified",
            ccs: "Acute cerebrovascular disease",
        },
        labs: &["LDL Cholesterol", "Hemoglobin A1c"],
        cultures: &[],
        exams: &["CT HEAD W/O CONTRAST", "MR HEAD W/O CONTRAST"],
        drugs: &[
            Drug {
                name: "Clopidogrel",
                ndc: "63304062690",
                atc: "PLATELET AGGREGATION INHIBITORS",
            },
            Drug {
                name: "Atorvastatin 80 mg",
                ndc: "00378395277",
                atc: "STATINS",
            },
        ],
        procedure: None,
        service: "NMED",
        ward: "Neurology",
        icu_rate: 0.15,
    },
    Profile {
        complaint: "Wheezing",
        diagnosis: Coded {
            code: "J441",
            title: "Chronic obstructive pulmonary disease with acute exacerbation",
            ccs: "Chronic obstructive pulmonary disease",
        },
        labs: &["pCO2", "pH", "Eosinophils"],
        cultures: &["SPUTUM CULTURE"],
        exams: &["CHEST (PA AND LAT)"],
        drugs: &[
            Drug {
                name: "Albuterol Neb Soln",
                ndc: "00487950101",
                atc: "ADRENERGIC INHALANTS",
            },
            Drug {
                name: "PredniSONE",
                ndc: "00054474125",
                atc: "CORTICOSTEROIDS FOR SYSTEMIC USE",
            },
        ],
        procedure: None,
        service: "MED",
        ward: "Medicine",
        icu_rate: 0.1,
    },
];

const COMMON_LABS: &[&str] = &["Sodium", "Potassium", "Chloride", "Platelet Count"];

const COMORBIDITIES: &[Coded] = &[
    Coded {
        code: "I10",
        title: "Essential (primary) hypertension",
        ccs: "Essential hypertension",
    },
    Coded {
        code: "E785",
        title: "Hyperlipidemia, unspecified",
        ccs: "Disorders of lipid metabolism",
    },
    Coded {
        code: "E119",
        title: "Type 2 diabetes mellitus without complications",
        ccs: "Diabetes mellitus without complication",
    },
];

const HOME_MEDS: &[Drug] = &[
    Drug {
        name: "Lisinopril",
        ndc: "00172375810",
        atc: "ACE INHIBITORS",
    },
    Drug {
        name: "Metformin",
        ndc: "00093104801",
        atc: "BIGUANIDES",
    },
    Drug {
        name: "Simvastatin",
        ndc: "00093715310",
        atc: "STATINS",
    },
    Drug {
        name: "Omeprazole",
        ndc: "62175011837",
        atc: "PROTON PUMP INHIBITORS",
    },
];

/// Relation names by entity role, forward and inverse.
const RELATIONS: &[(&str, &str, &str)] = &[
    ("complaint", "has_manifestation", "manifestation_of"),
    ("lab", "has_lab_marker", "lab_marker_of"),
    ("culture", "diagnosed_by", "diagnoses"),
    ("exam", "evaluated_by", "evaluates"),
    ("drug", "may_be_treated_by", "may_treat"),
    ("class", "treated_by_class", "class_treats"),
    ("category", "classified_as", "classifies"),
    ("procedure", "has_procedure", "procedure_for"),
];

/// One in this many profile entities has no edge to its diagnosis.
const UNLINKED_ONE_IN: u8 = 5;

fn stable_byte(text: &str) -> u8 {
    Sha256::digest(text.as_bytes())[0]
}

/// Whether the generator wires `entity` to the diagnosis hub of its profile.
/// The planted context is always wired.
pub fn is_connectable(entity: &str) -> bool {
    entity == PLANTED_CONTEXT || !stable_byte(entity).is_multiple_of(UNLINKED_ONE_IN)
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub config: PathBuf,
    pub patients: usize,
    pub events: usize,
    /// Share of profile (entity, diagnosis) pairs joined by a graph edge.
    pub connectable_fraction: f64,
}

type Row = Map<String, Value>;

struct Tables {
    rows: BTreeMap<&'static str, Vec<Row>>,
}

impl Tables {
    fn push(&mut self, table: &'static str, subject: &str, fields: &[(&str, Value)]) {
        let mut row = Map::new();
        row.insert("subject_id".into(), Value::String(subject.to_string()));
        for (k, v) in fields {
            row.insert((*k).to_string(), v.clone());
        }
        self.rows.entry(table).or_default().push(row);
    }
}

fn ts(t: NaiveDateTime) -> Value {
    Value::String(t.format("%Y-%m-%d %H:%M:%S").to_string())
}

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

fn table_specs() -> Vec<TableSpec> {
    let spec = |category: &str, ts: Option<&str>, columns: &[&str], links: &[&str]| TableSpec {
        category: category.to_string(),
        file: format!("{category}.jsonl"),
        subject_column: "subject_id".into(),
        timestamp_column: ts.map(str::to_string),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        link_columns: links.iter().map(|c| c.to_string()).collect(),
    };
    vec![
        spec("patients", None, &["gender", "anchor_age"], &[]),
        spec(
            "edstays",
            Some("charttime"),
            &["eventtype", "arrival_transport", "disposition"],
            &["stay_id"],
        ),
        spec(
            "triage",
            Some("charttime"),
            &["chiefcomplaint", "acuity", "pain"],
            &["stay_id"],
        ),
        spec("medrecon", Some("charttime"), &["name", "ndc"], &["stay_id"]),
        spec(
            "vitalsign",
            Some("charttime"),
            &["temperature", "heartrate", "resprate", "o2sat", "sbp", "dbp"],
            &["stay_id"],
        ),
        spec("diagnosis", None, &["icd_code", "icd_title"], &["stay_id"]),
        spec(
            "admissions",
            Some("admittime"),
            &["admission_type", "admission_location", "insurance"],
            &["hadm_id"],
        ),
        spec("transfers", Some("intime"), &["eventtype", "careunit"], &["hadm_id"]),
        spec("services", Some("transfertime"), &["curr_service"], &["hadm_id"]),
        spec("icustays", Some("intime"), &["first_careunit", "los"], &["hadm_id"]),
        spec("omr", Some("charttime"), &["result_name", "result_value"], &[]),
        spec("poe", Some("ordertime"), &["order_type", "order_subtype"], &["hadm_id"]),
        spec(
            "labevents",
            Some("charttime"),
            &["item_name", "value", "valueuom", "flag"],
            &["hadm_id"],
        ),
        spec(
            "microbiologyevents",
            Some("charttime"),
            &["test_name", "spec_type_desc", "org_name"],
            &["hadm_id"],
        ),
        spec("radiology", Some("charttime"), &["exam_name"], &["hadm_id"]),
        spec("pharmacy", Some("starttime"), &["medication", "route"], &["hadm_id"]),
        spec(
            "prescriptions",
            Some("starttime"),
            &["drug", "ndc", "dose_val_rx", "dose_unit_rx"],
            &["hadm_id"],
        ),
        spec("emar", Some("charttime"), &["medication", "event_txt"], &["hadm_id"]),
        spec(
            "procedures_icd",
            Some("chartdate"),
            &["icd_code", "long_title"],
            &["hadm_id"],
        ),
        spec("diagnoses_icd", None, &["icd_code", "long_title"], &["hadm_id"]),
        spec(
            "discharge",
            Some("charttime"),
            &[
                "chief complaint",
                "past medical history",
                "social history",
                "physical examination",
                "brief hospital course",
            ],
            &["hadm_id"],
        ),
    ]
}

fn lab_value(rng: &mut ChaCha8Rng, name: &str, abnormal: bool) -> (String, &'static str) {
    let (lo, hi, unit) = match name {
        "NT-proBNP" => (50.0, 300.0, "pg/mL"),
        "Creatinine" => (0.6, 1.2, "mg/dL"),
        "Urea Nitrogen" => (7.0, 20.0, "mg/dL"),
        "Lactate" => (0.5, 2.0, "mmol/L"),
        "Glucose" => (70.0, 110.0, "mg/dL"),
        "pH" => (7.35, 7.45, "units"),
        "pCO2" => (35.0, 45.0, "mm Hg"),
        "Hemoglobin" => (12.0, 16.0, "g/dL"),
        "Sodium" => (135.0, 145.0, "mEq/L"),
        "Potassium" => (3.5, 5.0, "mEq/L"),
        _ => (1.0, 10.0, "units"),
    };
    let span = hi - lo;
    let v = if abnormal {
        hi + span * rng.gen_range(0.3..3.0)
    } else {
        lo + span * rng.gen::<f64>()
    };
    let text = if v < 10.0 { format!("{v:.2}") } else { format!("{v:.0}") };
    (text, unit)
}

struct Visit<'a> {
    profile: &'a Profile,
    start: NaiveDateTime,
    hadm: String,
    stay: String,
    icu: bool,
}

fn add_visit(tables: &mut Tables, rng: &mut ChaCha8Rng, subject: &str, v: &Visit) {
    let p = v.profile;
    let t0 = v.start;
    let at = |m: i64| t0 + Duration::minutes(m);
    let hadm = s(&v.hadm);
    let stay = s(&v.stay);
    let end = at(20 * 60);

    // emergency department
    let transport = if rng.gen_bool(0.5) { "AMBULANCE" } else { "WALK IN" };
    tables.push(
        "edstays",
        subject,
        &[
            ("charttime", ts(t0)),
            ("stay_id", stay.clone()),
            ("eventtype", s("admit")),
            ("arrival_transport", s(transport)),
            ("disposition", Value::Null),
        ],
    );
    tables.push(
        "transfers",
        subject,
        &[
            ("intime", ts(t0)),
            ("hadm_id", hadm.clone()),
            ("eventtype", s("ED")),
            ("careunit", s("Emergency Department")),
        ],
    );
    let acuity = rng.gen_range(1..=3).to_string();
    let pain = rng.gen_range(0..=8).to_string();
    tables.push(
        "triage",
        subject,
        &[
            ("charttime", ts(at(5))),
            ("stay_id", stay.clone()),
            ("chiefcomplaint", s(p.complaint)),
            ("acuity", s(&acuity)),
            ("pain", s(&pain)),
        ],
    );
    let n_home = rng.gen_range(1..=2);
    let mut home: Vec<&Drug> = Vec::new();
    while home.len() < n_home {
        let d = &HOME_MEDS[rng.gen_range(0..HOME_MEDS.len())];
        if !home.iter().any(|h| h.name == d.name) {
            home.push(d);
        }
    }
    for d in &home {
        tables.push(
            "medrecon",
            subject,
            &[
                ("charttime", ts(at(10))),
                ("stay_id", stay.clone()),
                ("name", s(d.name)),
                ("ndc", s(d.ndc)),
            ],
        );
    }
    for h in 0..5 {
        let temp = if p.complaint == "Fever" {
            rng.gen_range(38.3..39.8)
        } else {
            rng.gen_range(36.4..37.4)
        };
        tables.push(
            "vitalsign",
            subject,
            &[
                ("charttime", ts(at(15 + 60 * h))),
                ("stay_id", stay.clone()),
                ("temperature", s(&format!("{temp:.1}"))),
                ("heartrate", json!(rng.gen_range(60..120))),
                ("resprate", json!(rng.gen_range(12..28))),
                ("o2sat", json!(rng.gen_range(88..100))),
                ("sbp", json!(rng.gen_range(95..170))),
                ("dbp", json!(rng.gen_range(50..95))),
            ],
        );
    }
    tables.push(
        "poe",
        subject,
        &[
            ("ordertime", ts(at(20))),
            ("hadm_id", hadm.clone()),
            ("order_type", s("Lab")),
            ("order_subtype", s("Blood")),
        ],
    );
    if !p.exams.is_empty() {
        tables.push(
            "poe",
            subject,
            &[
                ("ordertime", ts(at(25))),
                ("hadm_id", hadm.clone()),
                ("order_type", s("Radiology")),
                ("order_subtype", s("Imaging")),
            ],
        );
    }

    let panel = |tables: &mut Tables, rng: &mut ChaCha8Rng, minute: i64, names: &[&str], abnormal: bool| {
        for name in names {
            let (value, unit) = lab_value(rng, name, abnormal);
            let flag = if abnormal { s("abnormal") } else { Value::Null };
            tables.push(
                "labevents",
                subject,
                &[
                    ("charttime", ts(at(minute))),
                    ("hadm_id", hadm.clone()),
                    ("item_name", s(name)),
                    ("value", s(&value)),
                    ("valueuom", s(unit)),
                    ("flag", flag),
                ],
            );
        }
    };
    let mut first: Vec<&str> = COMMON_LABS.to_vec();
    first.extend(p.labs.iter().copied());
    panel(tables, rng, 30, &first, false);
    panel(tables, rng, 120, p.labs, true);

    for (i, c) in p.cultures.iter().enumerate() {
        let specimen = if c.starts_with("BLOOD") {
            "BLOOD CULTURE"
        } else if c.starts_with("URINE") {
            "URINE"
        } else {
            "SPUTUM"
        };
        let org = if rng.gen_bool(0.4) {
            s("STAPH AUREUS COAG +")
        } else {
            Value::Null
        };
        tables.push(
            "microbiologyevents",
            subject,
            &[
                ("charttime", ts(at(50))),
                ("hadm_id", hadm.clone()),
                ("test_name", s(c)),
                ("spec_type_desc", s(specimen)),
                ("org_name", if i == 0 { org } else { Value::Null }),
            ],
        );
    }
    if let Some(e) = p.exams.first() {
        tables.push(
            "radiology",
            subject,
            &[
                ("charttime", ts(at(60))),
                ("hadm_id", hadm.clone()),
                ("exam_name", s(e)),
            ],
        );
    }
    tables.push(
        "diagnosis",
        subject,
        &[
            ("stay_id", stay.clone()),
            ("icd_code", s(p.diagnosis.code)),
            ("icd_title", s(p.diagnosis.title)),
        ],
    );
    tables.push(
        "edstays",
        subject,
        &[
            ("charttime", ts(at(290))),
            ("stay_id", stay.clone()),
            ("eventtype", s("discharge")),
            ("arrival_transport", s(transport)),
            ("disposition", s("ADMITTED")),
        ],
    );

    // hospital stay
    let adm_type = match rng.gen_range(0..10) {
        0 => "URGENT",
        1 => "OBSERVATION ADMIT",
        _ => "EW EMER.",
    };
    let insurance = ["Medicare", "Medicaid", "Other"][rng.gen_range(0..3)];
    tables.push(
        "admissions",
        subject,
        &[
            ("admittime", ts(at(300))),
            ("hadm_id", hadm.clone()),
            ("admission_type", s(adm_type)),
            ("admission_location", s("EMERGENCY ROOM")),
            ("insurance", s(insurance)),
        ],
    );
    tables.push(
        "transfers",
        subject,
        &[
            ("intime", ts(at(300))),
            ("hadm_id", hadm.clone()),
            ("eventtype", s("admit")),
            ("careunit", s(p.ward)),
        ],
    );
    tables.push(
        "services",
        subject,
        &[
            ("transfertime", ts(at(310))),
            ("hadm_id", hadm.clone()),
            ("curr_service", s(p.service)),
        ],
    );
    let weight = rng.gen_range(110..260).to_string();
    let bp = format!("{}/{}", rng.gen_range(100..170), rng.gen_range(55..95));
    for (name, value) in [("Blood Pressure", bp.as_str()), ("Weight (Lbs)", weight.as_str())] {
        tables.push(
            "omr",
            subject,
            &[
                ("charttime", ts(at(315))),
                ("result_name", s(name)),
                ("result_value", s(value)),
            ],
        );
    }
    tables.push(
        "poe",
        subject,
        &[
            ("ordertime", ts(at(320))),
            ("hadm_id", hadm.clone()),
            ("order_type", s("Medications")),
            ("order_subtype", s("Pharmacy")),
        ],
    );
    for d in p.drugs {
        tables.push(
            "pharmacy",
            subject,
            &[
                ("starttime", ts(at(330))),
                ("hadm_id", hadm.clone()),
                ("medication", s(d.name)),
                ("route", s("IV")),
            ],
        );
    }
    for d in p.drugs {
        let dose = rng.gen_range(1..=4) * 10;
        tables.push(
            "prescriptions",
            subject,
            &[
                ("starttime", ts(at(335))),
                ("hadm_id", hadm.clone()),
                ("drug", s(d.name)),
                ("ndc", s(d.ndc)),
                ("dose_val_rx", s(&dose.to_string())),
                ("dose_unit_rx", s("mg")),
            ],
        );
    }
    for minute in [360, 1020] {
        for d in p.drugs {
            tables.push(
                "emar",
                subject,
                &[
                    ("charttime", ts(at(minute))),
                    ("hadm_id", hadm.clone()),
                    ("medication", s(d.name)),
                    ("event_txt", s("Administered")),
                ],
            );
        }
    }
    if v.icu {
        tables.push(
            "transfers",
            subject,
            &[
                ("intime", ts(at(420))),
                ("hadm_id", hadm.clone()),
                ("eventtype", s("transfer")),
                ("careunit", s("Medical Intensive Care Unit (MICU)")),
            ],
        );
        tables.push(
            "icustays",
            subject,
            &[
                ("intime", ts(at(420))),
                ("hadm_id", hadm.clone()),
                ("first_careunit", s("Medical Intensive Care Unit (MICU)")),
                ("los", s("1.2")),
            ],
        );
    }
    panel(tables, rng, 540, COMMON_LABS, false);
    if p.exams.len() > 1 {
        tables.push(
            "radiology",
            subject,
            &[
                ("charttime", ts(at(720))),
                ("hadm_id", hadm.clone()),
                ("exam_name", s(p.exams[1])),
            ],
        );
    }
    tables.push(
        "poe",
        subject,
        &[
            ("ordertime", ts(at(840))),
            ("hadm_id", hadm.clone()),
            ("order_type", s("Lab")),
            ("order_subtype", s("Blood")),
        ],
    );
    panel(tables, rng, 960, p.labs, true);
    if let Some(proc_) = &p.procedure {
        let day = at(480).format("%Y-%m-%d").to_string();
        tables.push(
            "procedures_icd",
            subject,
            &[
                ("chartdate", s(&day)),
                ("hadm_id", hadm.clone()),
                ("icd_code", s(proc_.code)),
                ("long_title", s(proc_.title)),
            ],
        );
    }
    tables.push(
        "poe",
        subject,
        &[
            ("ordertime", ts(at(1080))),
            ("hadm_id", hadm.clone()),
            ("order_type", s("ADT orders")),
            ("order_subtype", s("Discharge")),
        ],
    );
    let mut last: Vec<&str> = COMMON_LABS.to_vec();
    last.extend(p.labs.iter().copied());
    panel(tables, rng, 1140, &last, false);

    // discharge
    tables.push(
        "diagnoses_icd",
        subject,
        &[
            ("hadm_id", hadm.clone()),
            ("icd_code", s(p.diagnosis.code)),
            ("long_title", s(p.diagnosis.title)),
        ],
    );
    for c in COMORBIDITIES {
        if rng.gen_bool(0.35) {
            tables.push(
                "diagnoses_icd",
                subject,
                &[
                    ("hadm_id", hadm.clone()),
                    ("icd_code", s(c.code)),
                    ("long_title", s(c.title)),
                ],
            );
        }
    }
    tables.push(
        "transfers",
        subject,
        &[
            ("intime", ts(end)),
            ("hadm_id", hadm.clone()),
            ("eventtype", s("discharge")),
            ("careunit", Value::Null),
        ],
    );
    let history: Vec<&str> = home.iter().map(|d| d.name).collect();
    tables.push(
        "discharge",
        subject,
        &[
            ("charttime", ts(end)),
            ("hadm_id", hadm.clone()),
            ("chief complaint", s(p.complaint)),
            (
                "past medical history",
                s(&format!("Home medications: {}", history.join(", "))),
            ),
            ("social history", s("Lives with family.")),
            ("physical examination", s("Alert and oriented.")),
            (
                "brief hospital course",
                s("Treated and discharged in stable condition."),
            ),
        ],
    );
}

/// Lexicon and graph text plus the connectable share of profile pairs.
fn knowledge_files() -> (String, String, f64) {
    // term -> (concept id assigned later, role, hubs it belongs to)
    let mut terms: BTreeMap<&str, (&str, BTreeSet<&str>)> = BTreeMap::new();
    let mut add = |term: &'static str, role: &'static str, hub: Option<&'static str>| {
        let e = terms.entry(term).or_insert((role, BTreeSet::new()));
        if let Some(h) = hub {
            e.1.insert(h);
        }
    };
    for p in PROFILES {
        let hub = p.diagnosis.title;
        add(hub, "diagnosis", None);
        add(p.complaint, "complaint", Some(hub));
        add(p.diagnosis.ccs, "category", Some(hub));
        for l in p.labs {
            add(l, "lab", Some(hub));
        }
        for c in p.cultures {
            add(c, "culture", Some(hub));
        }
        for e in p.exams {
            add(e, "exam", Some(hub));
        }
        for d in p.drugs {
            add(d.name, "drug", Some(hub));
            add(d.atc, "class", Some(hub));
        }
        if let Some(pr) = &p.procedure {
            add(pr.title, "procedure", Some(hub));
            add(pr.ccs, "category", Some(hub));
        }
    }
    for c in COMORBIDITIES {
        add(c.title, "diagnosis", None);
        add(c.ccs, "category", Some(c.title));
    }
    for d in HOME_MEDS {
        add(d.name, "drug", None);
        add(d.atc, "class", None);
    }
    for l in COMMON_LABS {
        add(l, "lab", None);
    }
    add("Sodium", "lab", Some("Essential (primary) hypertension"));
    add("Lisinopril", "drug", Some("Essential (primary) hypertension"));
    add("Simvastatin", "drug", Some("Hyperlipidemia, unspecified"));
    add(
        "Metformin",
        "drug",
        Some("Type 2 diabetes mellitus without complications"),
    );

    let ids: BTreeMap<&str, String> = terms
        .keys()
        .enumerate()
        .map(|(i, t)| (*t, format!("C{:07}", i + 1)))
        .collect();
    let mut lexicon = String::new();
    for (term, id) in &ids {
        writeln!(lexicon, "{id}\t{term}").unwrap();
    }
    // a few alternative names
    for (alt, term) in [
        ("Congestive heart failure", PLANTED_LABEL),
        ("CHF", PLANTED_LABEL),
        ("Acute kidney injury", "Acute kidney failure, unspecified"),
        (
            "Diabetic ketoacidosis",
            "Type 1 diabetes mellitus with ketoacidosis without coma",
        ),
        (
            "COPD exacerbation",
            "Chronic obstructive pulmonary disease with acute exacerbation",
        ),
        ("BNP", PLANTED_CONTEXT),
    ] {
        writeln!(lexicon, "{}\t{alt}", ids[term]).unwrap();
    }

    let mut edges = BTreeSet::new();
    let mut total = 0usize;
    let mut linked = 0usize;
    for (term, (role, hubs)) in &terms {
        let Some(&(_, fwd, inv)) = RELATIONS.iter().find(|(r, _, _)| r == role) else {
            continue;
        };
        for hub in hubs {
            total += 1;
            if !is_connectable(term) {
                continue;
            }
            linked += 1;
            edges.insert((ids[hub].clone(), fwd, ids[*term].clone()));
            edges.insert((ids[*term].clone(), inv, ids[hub].clone()));
        }
    }
    let mut graph = String::new();
    for (h, r, t) in &edges {
        writeln!(graph, "{h}\t{r}\t{t}").unwrap();
    }
    (lexicon, graph, linked as f64 / total.max(1) as f64)
}

fn code_maps() -> (String, String) {
    let mut icd: BTreeMap<&str, &str> = BTreeMap::new();
    let mut ndc: BTreeMap<&str, &str> = BTreeMap::new();
    for p in PROFILES {
        icd.insert(p.diagnosis.code, p.diagnosis.ccs);
        if let Some(pr) = &p.procedure {
            icd.insert(pr.code, pr.ccs);
        }
        for d in p.drugs {
            ndc.insert(d.ndc, d.atc);
        }
    }
    for c in COMORBIDITIES {
        icd.insert(c.code, c.ccs);
    }
    for d in HOME_MEDS {
        ndc.insert(d.ndc, d.atc);
    }
    let tsv = |m: &BTreeMap<&str, &str>| m.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect::<String>();
    (tsv(&icd), tsv(&ndc))
}

fn config_text(seed: u64) -> String {
    format!(
        r#"# Pipeline settings for the synthetic corpus. Paths are relative to this file.
seed = {seed}
jobs = 4

[paths]
data_dir = "data"
work_dir = "work"
tasks = "tasks.toml"
lexicon = "lexicon.tsv"
graph = "graph.tsv"
icd_ccs = "icd_ccs.tsv"
ndc_atc = "ndc_atc.tsv"

[build_samples]
max_span_hours = 24
min_events = 10
max_events = 100

[sample]
test_fraction = 0.2
train_per_task = 40
test_per_task = 20
pool_size = 100

[lift]
min_count = 5
min_lift = 5.0

[think_graph]
max_depth = 3

[synthesize]
backend = "stub"
retention = 0.7

[reward]
lambda_fmt = 1.0
lambda_acc = 1.0
assignment = "prose"
rl_budget_per_task = 500
"#
    )
}

fn write(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)
}

/// Writes a corpus of `n_patients` under `out_dir`. The same seed always
/// yields byte-identical files.
pub fn gen_synthetic_corpus(n_patients: usize, seed: u64, out_dir: &Path) -> std::io::Result<SyntheticCorpus> {
    if n_patients == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "n_patients must be at least 1",
        ));
    }
    let mut tables = Tables { rows: BTreeMap::new() };
    let base = NaiveDate::from_ymd_opt(2127, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    for i in 0..n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &format!("patient/{i}")));
        let subject = format!("{}", 10_000_000 + i);
        // profiles rotate so each one gets an equal share
        let profile = &PROFILES[i % PROFILES.len()];
        let gender = if rng.gen_bool(0.5) { "F" } else { "M" };
        tables.push(
            "patients",
            &subject,
            &[("gender", s(gender)), ("anchor_age", json!(rng.gen_range(25..90)))],
        );

        let start = base + Duration::days(rng.gen_range(0..1000)) + Duration::minutes(rng.gen_range(0..24 * 60));
        let mut starts = vec![start];
        match rng.gen_range(0..20) {
            0..=3 => starts.push(start + Duration::hours(rng.gen_range(30..60))),
            4..=7 => starts.push(start + Duration::days(rng.gen_range(8..50))),
            _ => {}
        }
        for (v, t0) in starts.into_iter().enumerate() {
            let visit = Visit {
                profile,
                start: t0,
                hadm: format!("{}", 20_000_000 + i * 10 + v),
                stay: format!("{}", 30_000_000 + i * 10 + v),
                icu: rng.gen_bool(profile.icu_rate),
            };
            add_visit(&mut tables, &mut rng, &subject, &visit);
        }
    }

    let data = out_dir.join("data");
    std::fs::create_dir_all(&data)?;
    let specs = table_specs();
    let mut events = 0usize;
    for spec in &specs {
        let rows = tables
            .rows
            .get(spec.category.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        events += rows.len();
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(r).expect("row serializes"));
            text.push('\n');
        }
        write(&data.join(&spec.file), &text)?;
    }
    let manifest = IngestManifest { tables: specs };
    write(
        &data.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;

    let (lexicon, graph, connectable_fraction) = knowledge_files();
    write(&out_dir.join("lexicon.tsv"), &lexicon)?;
    write(&out_dir.join("graph.tsv"), &graph)?;
    let (icd, ndc) = code_maps();
    write(&out_dir.join("icd_ccs.tsv"), &icd)?;
    write(&out_dir.join("ndc_atc.tsv"), &ndc)?;
    write(&out_dir.join("tasks.toml"), DEFAULT_REGISTRY)?;
    let config = out_dir.join("config.toml");
    write(&config, &config_text(seed))?;

    Ok(SyntheticCorpus {
        root: out_dir.to_path_buf(),
        config,
        patients: n_patients,
        events,
        connectable_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use thinkgraph::ehr::ingest::ingest_dir;
    use thinkgraph::knowledge::{ConceptLexicon, KnowledgeGraph};

    fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        crate::manifest::list_files(dir)
            .unwrap()
            .into_iter()
            .map(|p| (crate::manifest::relative(&p, dir), std::fs::read(&p).unwrap()))
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic_corpus(12, 5, a.path()).unwrap();
        gen_synthetic_corpus(12, 5, b.path()).unwrap();
        assert_eq!(read_all(a.path()), read_all(b.path()));
        let c = tempfile::tempdir().unwrap();
        gen_synthetic_corpus(12, 6, c.path()).unwrap();
        assert_ne!(read_all(a.path()), read_all(c.path()));
    }

    #[test]
    fn single_patient_has_enough_events() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_synthetic_corpus(1, 1, dir.path()).unwrap();
        assert_eq!(corpus.patients, 1);
        let manifest = IngestManifest::load(&dir.path().join("data/manifest.json")).unwrap();
        let subjects = ingest_dir(&dir.path().join("data"), &manifest).unwrap();
        assert_eq!(subjects.len(), 1);
        let events = subjects.values().next().unwrap();
        assert!(events.iter().filter(|e| e.timestamp.is_some()).count() >= 10);
    }

    #[test]
    fn zero_patients_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_synthetic_corpus(0, 1, dir.path()).is_err());
    }

    #[test]
    fn knowledge_files_parse_and_connect_the_planted_pair() {
        let (lex, graph, frac) = knowledge_files();
        let lex = ConceptLexicon::parse_tsv(&lex).unwrap();
        let graph = KnowledgeGraph::parse_tsv(&graph).unwrap();
        let a = lex.link_concept(PLANTED_CONTEXT).unwrap();
        let b = lex.link_concept(PLANTED_LABEL).unwrap();
        assert_eq!(graph.bidir_search(a, b, 1).unwrap().map(|p| p.len()), Some(1));
        assert!(frac > 0.6 && frac < 1.0, "{frac}");
        assert_eq!(lex.link_concept("CHF"), Some(b));
    }

    #[test]
    fn connectable_fraction_matches_graph() {
        let (lex_text, graph_text, frac) = knowledge_files();
        let lex = ConceptLexicon::parse_tsv(&lex_text).unwrap();
        let graph = KnowledgeGraph::parse_tsv(&graph_text).unwrap();
        let mut total = 0;
        let mut found = 0;
        for p in PROFILES {
            let hub = lex.link_concept(p.diagnosis.title).unwrap();
            let mut members: BTreeSet<&str> = p.labs.iter().copied().collect();
            members.insert(p.complaint);
            members.extend(p.exams.iter().copied());
            for m in members {
                total += 1;
                let c = lex.link_concept(m).unwrap();
                if matches!(graph.bidir_search(c, hub, 1), Ok(Some(_))) {
                    found += 1;
                    assert!(is_connectable(m));
                }
            }
        }
        assert!(found < total);
        assert!(frac > 0.0);
    }
}
