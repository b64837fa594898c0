//! Student Performance (Portuguese course file, `student-por.csv`).
//!
//! Label: High (1) iff G3 > 10, else Low (0). G3 itself is not a feature.
//! Sensitive attribute: `sex` (F = 0, M = 1).

use std::collections::BTreeMap;
use std::path::Path;

use super::encode::{self, binary_level, parse_number, ColumnKind, RawTable};
use super::TabularDataset;
use crate::error::Result;

const YES_NO: ColumnKind = ColumnKind::Binary("no", "yes");

const SCHEMA: &[(&str, ColumnKind)] = &[
    ("school", ColumnKind::Binary("GP", "MS")),
    ("sex", ColumnKind::Binary("F", "M")),
    ("age", ColumnKind::Numeric),
    ("address", ColumnKind::Binary("R", "U")),
    ("famsize", ColumnKind::Binary("LE3", "GT3")),
    ("Pstatus", ColumnKind::Binary("A", "T")),
    ("Medu", ColumnKind::Numeric),
    ("Fedu", ColumnKind::Numeric),
    ("Mjob", ColumnKind::Categorical),
    ("Fjob", ColumnKind::Categorical),
    ("reason", ColumnKind::Categorical),
    ("guardian", ColumnKind::Categorical),
    ("traveltime", ColumnKind::Numeric),
    ("studytime", ColumnKind::Numeric),
    ("failures", ColumnKind::Numeric),
    ("schoolsup", YES_NO),
    ("famsup", YES_NO),
    ("paid", YES_NO),
    ("activities", YES_NO),
    ("nursery", YES_NO),
    ("higher", YES_NO),
    ("internet", YES_NO),
    ("romantic", YES_NO),
    ("famrel", ColumnKind::Numeric),
    ("freetime", ColumnKind::Numeric),
    ("goout", ColumnKind::Numeric),
    ("Dalc", ColumnKind::Numeric),
    ("Walc", ColumnKind::Numeric),
    ("health", ColumnKind::Numeric),
    ("absences", ColumnKind::Numeric),
    ("G1", ColumnKind::Numeric),
    ("G2", ColumnKind::Numeric),
];

pub fn load_student_performance_raw(file: &Path) -> Result<RawTable> {
    let mut records = encode::read_csv(file)?;
    let mut needed: Vec<&str> = SCHEMA.iter().map(|(c, _)| *c).collect();
    needed.push("G3");
    records.drop_missing(&needed)?;

    let g3 = records.column_index("G3")?;
    let sex = records.column_index("sex")?;
    let mut labels = Vec::with_capacity(records.rows.len());
    let mut groups = Vec::with_capacity(records.rows.len());
    for (line, fields) in &records.rows {
        let grade = parse_number(&records, *line, "G3", &fields[g3])?;
        labels.push(usize::from(grade > 10.0));
        groups.push(binary_level(&records, *line, "sex", &fields[sex], "F", "M")?);
    }
    let encoded = encode::encode(&records, SCHEMA)?;
    let mut sensitive = BTreeMap::new();
    sensitive.insert("sex".to_string(), groups);
    Ok(RawTable {
        name: "student-performance".into(),
        columns: encoded.names,
        values: encoded.values,
        labels,
        num_classes: 2,
        sensitive,
    })
}

pub fn load_student_performance(file: &Path) -> Result<TabularDataset> {
    load_student_performance_raw(file)?.into_dataset()
}
