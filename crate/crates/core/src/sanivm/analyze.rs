//! Risk analysis of files bound for a nym.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::media::{MediaFile, MediaKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskCategory {
    Geolocation,
    DeviceIdentifier,
    Authorship,
    Timestamp,
    OtherMetadata,
    FaceRegion,
    UnrecognizedFormat,
}

impl RiskCategory {
    /// Categories that live in the tag table.
    pub fn is_metadata(self) -> bool {
        !matches!(self, RiskCategory::FaceRegion | RiskCategory::UnrecognizedFormat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskFinding {
    /// Metadata keys (comma separated) or a region reference.
    pub field: String,
    pub category: RiskCategory,
    pub severity: Severity,
    pub rationale: String,
}

/// Tag-key classification rules. A key matches a rule when it equals one
/// of the names or starts with one of the prefixes (case-insensitive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blacklist {
    pub rules: Vec<BlacklistRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistRule {
    pub category: RiskCategory,
    pub severity: Severity,
    pub names: Vec<String>,
    pub prefixes: Vec<String>,
}

impl Default for Blacklist {
    fn default() -> Self {
        let rule = |category, severity, names: &[&str], prefixes: &[&str]| BlacklistRule {
            category,
            severity,
            names: names.iter().map(|s| s.to_string()).collect(),
            prefixes: prefixes.iter().map(|s| s.to_string()).collect(),
        };
        Blacklist {
            rules: vec![
                rule(RiskCategory::Geolocation, Severity::High, &["gps", "location"], &["gps.", "gps_", "geo."]),
                rule(
                    RiskCategory::DeviceIdentifier,
                    Severity::High,
                    &["serial", "device_id", "serial_number", "imei", "camera_serial"],
                    &["serial.", "device."],
                ),
                rule(RiskCategory::Authorship, Severity::Medium, &["author", "creator", "artist", "owner", "last_modified_by"], &["author."]),
                rule(
                    RiskCategory::Timestamp,
                    Severity::Low,
                    &["timestamp", "date", "datetime", "created", "modified"],
                    &["time.", "date."],
                ),
            ],
        }
    }
}

impl Blacklist {
    pub fn classify(&self, key: &str) -> Option<&BlacklistRule> {
        let k = key.to_ascii_lowercase();
        self.rules
            .iter()
            .find(|r| r.names.iter().any(|n| *n == k) || r.prefixes.iter().any(|p| k.starts_with(p.as_str())))
    }
}

fn rationale(cat: RiskCategory) -> &'static str {
    match cat {
        RiskCategory::Geolocation => "reveals where the file was created",
        RiskCategory::DeviceIdentifier => "links the file to a specific device",
        RiskCategory::Authorship => "names the person who made the file",
        RiskCategory::Timestamp => "narrows when the owner was active",
        RiskCategory::OtherMetadata => "unclassified metadata may carry identifying data",
        RiskCategory::FaceRegion => "declared region may show a recognizable face",
        RiskCategory::UnrecognizedFormat => "format cannot be inspected or scrubbed",
    }
}

/// Findings grouped per category, ordered by category.
pub fn analyze_with(file: &MediaFile, blacklist: &Blacklist) -> Vec<RiskFinding> {
    if file.kind == MediaKind::Unknown {
        return vec![RiskFinding {
            field: "format".into(),
            category: RiskCategory::UnrecognizedFormat,
            severity: Severity::High,
            rationale: rationale(RiskCategory::UnrecognizedFormat).into(),
        }];
    }
    let mut groups: BTreeMap<RiskCategory, (Severity, Vec<&str>)> = BTreeMap::new();
    for key in file.metadata.keys() {
        let (cat, sev) = match blacklist.classify(key) {
            Some(r) => (r.category, r.severity),
            None => (RiskCategory::OtherMetadata, Severity::Low),
        };
        groups.entry(cat).or_insert((sev, Vec::new())).1.push(key);
    }
    let mut out: Vec<RiskFinding> = groups
        .into_iter()
        .map(|(category, (severity, keys))| RiskFinding {
            field: keys.join(","),
            category,
            severity,
            rationale: rationale(category).into(),
        })
        .collect();
    for (i, r) in file.regions.iter().enumerate() {
        out.push(RiskFinding {
            field: format!("region[{i}]@{},{} {}x{}", r.x, r.y, r.w, r.h),
            category: RiskCategory::FaceRegion,
            severity: Severity::High,
            rationale: rationale(RiskCategory::FaceRegion).into(),
        });
    }
    out
}

pub fn analyze(file: &MediaFile) -> Vec<RiskFinding> {
    analyze_with(file, &Blacklist::default())
}
