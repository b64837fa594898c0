//! Bundled configurations reproducing each figure and table.

use super::config::{ConfigFormat, ExperimentConfig};
use crate::error::{Error, Result};

const PRESETS: [(&str, &str); 9] = [
    ("table4", include_str!("../../../../configs/table4.toml")),
    ("fig2", include_str!("../../../../configs/fig2.toml")),
    ("fig3", include_str!("../../../../configs/fig3.toml")),
    ("table1", include_str!("../../../../configs/table1.toml")),
    ("fig4a", include_str!("../../../../configs/fig4a.toml")),
    ("fig4b", include_str!("../../../../configs/fig4b.toml")),
    ("fig4c", include_str!("../../../../configs/fig4c.toml")),
    ("fig5a", include_str!("../../../../configs/fig5a.toml")),
    ("fig5b", include_str!("../../../../configs/fig5b.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| Error::Lookup {
        kind: "preset",
        name: format!("{name} (expected one of: {})", names().join(", ")),
    })?;
    ExperimentConfig::parse(text, ConfigFormat::Toml)
}

/// Presets for a figure number (`"4"` selects 4a, 4b and 4c).
pub fn for_figure(figure: &str) -> Result<Vec<ExperimentConfig>> {
    let prefix = format!("fig{}", figure.trim_start_matches("fig"));
    select(|n| n == prefix || (n.starts_with(&prefix) && n.len() == prefix.len() + 1), "figure", figure)
}

pub fn for_table(table: &str) -> Result<Vec<ExperimentConfig>> {
    let name = format!("table{}", table.trim_start_matches("table"));
    select(|n| n == name, "table", table)
}

fn select(pred: impl Fn(&str) -> bool, kind: &'static str, query: &str) -> Result<Vec<ExperimentConfig>> {
    let chosen: Vec<_> = names().into_iter().filter(|n| pred(n)).collect();
    if chosen.is_empty() {
        return Err(Error::Lookup {
            kind,
            name: format!("{query} (available presets: {})", names().join(", ")),
        });
    }
    chosen.into_iter().map(preset).collect()
}
