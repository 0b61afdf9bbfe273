use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::biomarkers::Biomarker;
use crate::fusion::{PredictionReport, DEEP_FEATURE_NAME};

/// Biomarker families reported as subtotals, in display order. Features not
/// listed here fall into "other".
pub const GROUPS: [(&str, &[Biomarker]); 5] = [
    ("aorta shape", &[Biomarker::Amd, Biomarker::Amdstd, Biomarker::Ati]),
    ("heart morphology", &[Biomarker::Chr, Biomarker::Cld, Biomarker::Csd]),
    ("pericardial fat", &[Biomarker::Pfatv, Biomarker::Pfatm, Biomarker::Pfatstd]),
    ("calcification", &[Biomarker::Cacs, Biomarker::Cacv]),
    ("lung texture", &[Biomarker::Llr, Biomarker::Rlr, Biomarker::Lhr, Biomarker::Rhr]),
];
pub const DEEP_GROUP: &str = "deep features";
pub const OTHER_GROUP: &str = "other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTotal {
    pub group: String,
    pub members: Vec<String>,
    pub subtotal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub scan_id: String,
    pub probability: f64,
    /// Sorted by descending score.
    pub contributions: Vec<Contribution>,
    pub groups: Vec<GroupTotal>,
}

fn subtotal(report: &PredictionReport, members: &[String]) -> f64 {
    members.iter().map(|m| report.contributions[m.as_str()]).sum()
}

pub fn group_members() -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = GROUPS
        .iter()
        .map(|(g, ms)| (g.to_string(), ms.iter().map(|b| b.name().to_string()).collect()))
        .collect();
    out.push((DEEP_GROUP.to_string(), vec![DEEP_FEATURE_NAME.to_string()]));
    let grouped: Vec<Biomarker> = GROUPS.iter().flat_map(|(_, ms)| ms.iter().copied()).collect();
    let other = Biomarker::ALL
        .iter()
        .filter(|b| !grouped.contains(b))
        .map(|b| b.name().to_string())
        .collect();
    out.push((OTHER_GROUP.to_string(), other));
    out
}

pub fn explain(report: &PredictionReport) -> Explanation {
    let mut contributions: Vec<Contribution> = report
        .contributions
        .iter()
        .map(|(f, &s)| Contribution {
            feature: f.clone(),
            score: s,
        })
        .collect();
    contributions.sort_by(|a, b| b.score.total_cmp(&a.score));
    let groups = group_members()
        .into_iter()
        .map(|(group, members)| GroupTotal {
            subtotal: subtotal(report, &members),
            group,
            members,
        })
        .collect();
    Explanation {
        scan_id: report.scan_id.clone(),
        probability: report.probability,
        contributions,
        groups,
    }
}

impl Explanation {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scan {}  probability {:.6}", self.scan_id, self.probability);
        let _ = writeln!(s, "{:<16} {:>10}", "feature", "score");
        for c in &self.contributions {
            let _ = writeln!(s, "{:<16} {:>10.6}", c.feature, c.score);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>10}", "group", "subtotal");
        for g in &self.groups {
            let _ = writeln!(s, "{:<16} {:>10.6}  {}", g.group, g.subtotal, g.members.join("+"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,score\n");
        for c in &self.contributions {
            let _ = writeln!(s, "feature,{},{}", c.feature, c.score);
        }
        for g in &self.groups {
            let _ = writeln!(s, "group,{},{}", g.group, g.subtotal);
        }
        s
    }
}
