//! Open University Learning Analytics Dataset.
//!
//! Reads `studentInfo.csv` and `studentVle.csv` from one directory. Each
//! registration is joined with its summed VLE clicks (same module,
//! presentation and student); registrations with missing values, a
//! `Withdrawn` outcome or no VLE activity are dropped, and only the first
//! remaining registration per student is kept.
//!
//! Features: gender, age band, disability, highest education, poverty,
//! previous attempts, studied credits, sum of clicks. Label: Pass or
//! Distinction -> 1, Fail -> 0. Sensitive attributes: `gender` (F = 0,
//! M = 1), `disability` (N = 0, Y = 1) and `poverty` (1 when the IMD band
//! lies below the median band of the loaded data).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use super::encode::{self, binary_level, ingestion, parse_number, RawTable};
use super::TabularDataset;
use crate::error::Result;

pub const STUDENT_INFO: &str = "studentInfo.csv";
pub const STUDENT_VLE: &str = "studentVle.csv";

const AGE_BANDS: &[&str] = &["0-35", "35-55", "55<="];
const EDUCATION: &[&str] = &[
    "No Formal quals",
    "Lower Than A Level",
    "A Level or Equivalent",
    "HE Qualification",
    "Post Graduate Qualification",
];

const INFO_COLUMNS: &[&str] = &[
    "code_module",
    "code_presentation",
    "id_student",
    "gender",
    "highest_education",
    "imd_band",
    "age_band",
    "num_of_prev_attempts",
    "studied_credits",
    "disability",
    "final_result",
];

type RegistrationKey = (String, String, String);

/// Decile index 0..=9 from bands such as `"0-10%"`, `"10-20"`, `"90-100%"`.
fn imd_decile(band: &str) -> Option<u32> {
    let lower: u32 = band.trim().split('-').next()?.trim().parse().ok()?;
    (lower % 10 == 0 && lower <= 90).then_some(lower / 10)
}

fn level(order: &[&str], field: &str) -> Option<f64> {
    order
        .iter()
        .position(|l| l.eq_ignore_ascii_case(field.trim()))
        .map(|p| p as f64 / (order.len() - 1) as f64)
}

fn sum_clicks(path: &Path, wanted: &HashSet<RegistrationKey>) -> Result<HashMap<RegistrationKey, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion(path, None, format!("cannot read file: {e}")))?;
    let headers = reader.headers().map_err(|e| ingestion(path, Some(1), e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingestion(path, Some(1), format!("missing column `{name}`")))
    };
    let (module, presentation, student, clicks) =
        (col("code_module")?, col("code_presentation")?, col("id_student")?, col("sum_click")?);
    let mut totals: HashMap<RegistrationKey, f64> = HashMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(ingestion(path, e.position().map(|p| p.line()), e.to_string())),
        }
        let line = record.position().map(|p| p.line()).unwrap_or_default();
        let field = |i: usize| record.get(i).ok_or_else(|| ingestion(path, Some(line), "row has too few fields"));
        let key = (field(module)?.to_string(), field(presentation)?.to_string(), field(student)?.to_string());
        if !wanted.contains(&key) {
            continue;
        }
        let raw = field(clicks)?;
        let value: f64 = raw
            .parse()
            .map_err(|_| ingestion(path, Some(line), format!("column `sum_click`: cannot parse `{raw}`")))?;
        *totals.entry(key).or_default() += value;
    }
    Ok(totals)
}

pub fn load_oulad_raw(raw_dir: &Path) -> Result<RawTable> {
    let info_path = raw_dir.join(STUDENT_INFO);
    let vle_path = raw_dir.join(STUDENT_VLE);
    for p in [&info_path, &vle_path] {
        if !p.is_file() {
            return Err(ingestion(p, None, "file not found"));
        }
    }
    let mut info = encode::read_csv(&info_path)?;
    info.drop_missing(INFO_COLUMNS)?;
    let result = info.column_index("final_result")?;
    info.rows.retain(|(_, f)| !f[result].trim().eq_ignore_ascii_case("Withdrawn"));

    let idx = |c: &str| info.column_index(c);
    let (module, presentation, student) = (idx("code_module")?, idx("code_presentation")?, idx("id_student")?);
    let key_of = |f: &[String]| (f[module].clone(), f[presentation].clone(), f[student].clone());
    let wanted: HashSet<RegistrationKey> = info.rows.iter().map(|(_, f)| key_of(f)).collect();
    let clicks = sum_clicks(&vle_path, &wanted)?;

    let (gender, age, disability, education, imd, attempts, credits) = (
        idx("gender")?,
        idx("age_band")?,
        idx("disability")?,
        idx("highest_education")?,
        idx("imd_band")?,
        idx("num_of_prev_attempts")?,
        idx("studied_credits")?,
    );

    struct Row {
        gender: u8,
        age: f64,
        disability: u8,
        education: f64,
        decile: u32,
        attempts: f64,
        credits: f64,
        clicks: f64,
        label: usize,
    }

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (line, f) in &info.rows {
        let line = *line;
        let Some(&total) = clicks.get(&key_of(f)) else {
            continue;
        };
        if !seen.insert(f[student].clone()) {
            continue;
        }
        let unknown = |c: &str, v: &str| ingestion(&info.file, Some(line), format!("column `{c}`: unknown level `{v}`"));
        rows.push(Row {
            gender: binary_level(&info, line, "gender", &f[gender], "F", "M")?,
            age: level(AGE_BANDS, &f[age]).ok_or_else(|| unknown("age_band", &f[age]))?,
            disability: binary_level(&info, line, "disability", &f[disability], "N", "Y")?,
            education: level(EDUCATION, &f[education]).ok_or_else(|| unknown("highest_education", &f[education]))?,
            decile: imd_decile(&f[imd]).ok_or_else(|| unknown("imd_band", &f[imd]))?,
            attempts: parse_number(&info, line, "num_of_prev_attempts", &f[attempts])?,
            credits: parse_number(&info, line, "studied_credits", &f[credits])?,
            clicks: total,
            label: match f[result].trim() {
                "Pass" | "Distinction" => 1,
                "Fail" => 0,
                other => {
                    return Err(ingestion(
                        &info.file,
                        Some(line),
                        format!("column `final_result`: unexpected `{other}`"),
                    ))
                }
            },
        });
    }

    let mut deciles: Vec<u32> = rows.iter().map(|r| r.decile).collect();
    deciles.sort_unstable();
    let median = deciles.get(deciles.len() / 2).copied().unwrap_or_default();
    let poverty: Vec<u8> = rows.iter().map(|r| u8::from(r.decile < median)).collect();

    let columns: Vec<String> = [
        "gender",
        "age",
        "disability",
        "highest_education",
        "poverty",
        "num_of_prev_attempts",
        "studied_credits",
        "sum_click",
    ]
    .map(String::from)
    .to_vec();
    let mut values = Vec::with_capacity(rows.len() * columns.len());
    for (r, &pov) in rows.iter().zip(&poverty) {
        values.extend_from_slice(&[
            r.gender as f64,
            r.age,
            r.disability as f64,
            r.education,
            pov as f64,
            r.attempts,
            r.credits,
            r.clicks,
        ]);
    }
    let mut sensitive = BTreeMap::new();
    sensitive.insert("gender".to_string(), rows.iter().map(|r| r.gender).collect());
    sensitive.insert("disability".to_string(), rows.iter().map(|r| r.disability).collect());
    sensitive.insert("poverty".to_string(), poverty);
    Ok(RawTable {
        name: "oulad".into(),
        columns,
        values,
        labels: rows.iter().map(|r| r.label).collect(),
        num_classes: 2,
        sensitive,
    })
}

pub fn load_oulad(raw_dir: &Path) -> Result<TabularDataset> {
    load_oulad_raw(raw_dir)?.into_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deciles() {
        assert_eq!(imd_decile("0-10%"), Some(0));
        assert_eq!(imd_decile("10-20"), Some(1));
        assert_eq!(imd_decile("90-100%"), Some(9));
        assert_eq!(imd_decile("banana"), None);
    }
}
