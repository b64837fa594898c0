//! xAPI-Edu-Data (`xAPI-Edu-Data.csv`).
//!
//! Label: `Class` L -> 0, M or H -> 1. Sensitive attribute: `gender`
//! (F = 0, M = 1).

use std::collections::BTreeMap;
use std::path::Path;

use super::encode::{self, binary_level, ingestion, ColumnKind, RawTable};
use super::TabularDataset;
use crate::error::Result;

const SCHEMA: &[(&str, ColumnKind)] = &[
    ("gender", ColumnKind::Binary("F", "M")),
    ("NationalITy", ColumnKind::Categorical),
    ("PlaceofBirth", ColumnKind::Categorical),
    ("StageID", ColumnKind::Categorical),
    ("GradeID", ColumnKind::Categorical),
    ("SectionID", ColumnKind::Categorical),
    ("Topic", ColumnKind::Categorical),
    ("Semester", ColumnKind::Categorical),
    ("Relation", ColumnKind::Categorical),
    ("raisedhands", ColumnKind::Numeric),
    ("VisITedResources", ColumnKind::Numeric),
    ("AnnouncementsView", ColumnKind::Numeric),
    ("Discussion", ColumnKind::Numeric),
    ("ParentAnsweringSurvey", ColumnKind::Binary("No", "Yes")),
    ("ParentschoolSatisfaction", ColumnKind::Binary("Bad", "Good")),
    ("StudentAbsenceDays", ColumnKind::Binary("Under-7", "Above-7")),
];

pub fn load_xapi_raw(file: &Path) -> Result<RawTable> {
    let mut records = encode::read_csv(file)?;
    let mut needed: Vec<&str> = SCHEMA.iter().map(|(c, _)| *c).collect();
    needed.push("Class");
    records.drop_missing(&needed)?;

    let class = records.column_index("Class")?;
    let gender = records.column_index("gender")?;
    let mut labels = Vec::with_capacity(records.rows.len());
    let mut groups = Vec::with_capacity(records.rows.len());
    for (line, fields) in &records.rows {
        labels.push(match fields[class].trim() {
            "L" => 0,
            "M" | "H" => 1,
            other => {
                return Err(ingestion(
                    &records.file,
                    Some(*line),
                    format!("column `Class`: expected L, M or H, got `{other}`"),
                ))
            }
        });
        groups.push(binary_level(&records, *line, "gender", &fields[gender], "F", "M")?);
    }
    let encoded = encode::encode(&records, SCHEMA)?;
    let mut sensitive = BTreeMap::new();
    sensitive.insert("gender".to_string(), groups);
    Ok(RawTable {
        name: "xapi".into(),
        columns: encoded.names,
        values: encoded.values,
        labels,
        num_classes: 2,
        sensitive,
    })
}

pub fn load_xapi(file: &Path) -> Result<TabularDataset> {
    load_xapi_raw(file)?.into_dataset()
}
