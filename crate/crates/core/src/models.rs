//! Bundled reference models and configuration files.

use crate::sha::dsl::{parse_sha, ParseError};
use crate::sha::Sha;
use crate::smc::{parse_requirements, Requirement};

pub const PHYSICIAN: &str = include_str!("../models/physician.sha");
pub const PHYSICIAN_GENERAL: &str = include_str!("../models/physician_general.sha");
pub const PATIENT: &str = include_str!("../models/patient.sha");
pub const PATIENT_DT: &str = include_str!("../models/patient_dt.sha");
pub const REQUIREMENTS: &str = include_str!("../models/requirements.kv");
pub const REALISM: &str = include_str!("../models/realism.kv");

fn parse(text: &str) -> Sha {
    parse_sha(text).unwrap_or_else(|e: ParseError| panic!("bundled model: {e}"))
}

pub fn physician() -> Sha {
    parse(PHYSICIAN)
}

pub fn physician_general() -> Sha {
    parse(PHYSICIAN_GENERAL)
}

pub fn patient() -> Sha {
    parse(PATIENT)
}

pub fn patient_dt() -> Sha {
    parse(PATIENT_DT)
}

pub fn requirements() -> Vec<Requirement> {
    parse_requirements(REQUIREMENTS).expect("bundled requirements")
}
