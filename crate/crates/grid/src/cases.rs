//! Bundled IEEE test systems.

use std::path::Path;

use crate::error::GridError;
use crate::matpower::parse_matpower_case;
use crate::model::GridCase;

const IEEE14: &str = include_str!("../data/ieee14.m");
const IEEE30: &str = include_str!("../data/ieee30.m");
const IEEE57: &str = include_str!("../data/ieee57.m");
const IEEE118: &str = include_str!("../data/ieee118.m");

pub const BUILTIN_CASES: [&str; 4] = ["ieee14", "ieee30", "ieee57", "ieee118"];

pub fn builtin_case(name: &str) -> Result<GridCase, GridError> {
    let key = name.trim().to_ascii_lowercase();
    let text = match key.as_str() {
        "ieee14" | "case14" => IEEE14,
        "ieee30" | "case30" | "case_ieee30" => IEEE30,
        "ieee57" | "case57" => IEEE57,
        "ieee118" | "case118" => IEEE118,
        _ => {
            return Err(GridError::UnknownCase {
                name: name.to_string(),
                valid: BUILTIN_CASES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    let mut case = parse_matpower_case(text)?;
    case.name = canonical_alias(&key).to_string();
    Ok(case)
}

fn canonical_alias(key: &str) -> &'static str {
    match key {
        "ieee14" | "case14" => "ieee14",
        "ieee30" | "case30" | "case_ieee30" => "ieee30",
        "ieee57" | "case57" => "ieee57",
        _ => "ieee118",
    }
}

/// Resolves a builtin alias or a path to a case file.
pub fn load_case(case_path: &str) -> Result<GridCase, GridError> {
    match builtin_case(case_path) {
        Ok(c) => Ok(c),
        Err(GridError::UnknownCase { valid, .. }) => {
            let path = Path::new(case_path);
            if !path.exists() {
                return Err(GridError::UnknownCase {
                    name: case_path.to_string(),
                    valid,
                });
            }
            let text = std::fs::read_to_string(path).map_err(|e| GridError::Io {
                path: case_path.to_string(),
                message: e.to_string(),
            })?;
            let mut case = parse_matpower_case(&text)?;
            // files without a function line take their name from the file
            if !text.contains("function") {
                if let Some(stem) = path.file_stem() {
                    case.name = stem.to_string_lossy().into_owned();
                }
            }
            Ok(case)
        }
        Err(e) => Err(e),
    }
}
