use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::value::RawValue;

use super::{MetricReport, MetricSummary};

/// Serializes a percentage with exactly two decimals.
struct Pct(f64);

impl Serialize for Pct {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw =
            RawValue::from_string(format!("{:.2}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

struct SummaryJson<'a>(&'a MetricSummary);

impl Serialize for SummaryJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(9))?;
        for (name, v) in MetricSummary::FIELD_NAMES.iter().zip(self.0.values()) {
            map.serialize_entry(name, &Pct(v))?;
        }
        map.serialize_entry("video_count", &self.0.video_count)?;
        map.end()
    }
}

struct ReportJson<'a>(&'a MetricReport);

impl Serialize for ReportJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        struct Subsets<'a>(&'a MetricReport);
        impl Serialize for Subsets<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.per_subset.len()))?;
                for (k, v) in &self.0.per_subset {
                    map.serialize_entry(k.name(), &SummaryJson(v))?;
                }
                map.end()
            }
        }
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry("overall", &SummaryJson(&self.0.overall))?;
        map.serialize_entry("subsets", &Subsets(self.0))?;
        map.end()
    }
}

pub fn report_json(report: &MetricReport) -> String {
    let mut s = serde_json::to_string_pretty(&ReportJson(report)).expect("report serializes");
    s.push('\n');
    s
}

/// One row for the overall summary followed by one per non-empty subset.
pub fn report_csv(report: &MetricReport) -> String {
    let mut out = String::from("subset,video_count");
    for name in MetricSummary::FIELD_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let rows = std::iter::once(("overall", &report.overall))
        .chain(report.per_subset.iter().map(|(k, v)| (k.name(), v)));
    for (name, summary) in rows {
        out.push_str(&format!("{name},{}", summary.video_count));
        for v in summary.values() {
            out.push_str(&format!(",{v:.2}"));
        }
        out.push('\n');
    }
    out
}
