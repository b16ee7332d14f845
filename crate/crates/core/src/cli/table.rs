use std::fmt::Write;

use pgnet::pipeline::FamilyRow;

/// Per-variant summary rows (families then `average`).
pub struct VariantRows {
    pub variant: String,
    pub rows: Vec<FamilyRow>,
}

impl VariantRows {
    pub fn average(&self) -> Option<&FamilyRow> {
        self.rows.iter().find(|r| r.family == "average")
    }
}

pub const CSV_HEADER: &str = "variant,family,cd_e3,fscore,n_samples";

pub fn to_csv(variants: &[VariantRows]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for v in variants {
        for r in &v.rows {
            let _ = writeln!(s, "{},{},{},{},{}", v.variant, r.family, r.cd_e3, r.fscore, r.n_samples);
        }
    }
    s
}

fn families(variants: &[VariantRows]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in variants {
        for r in &v.rows {
            if r.family != "average" && !out.contains(&r.family) {
                out.push(r.family.clone());
            }
        }
    }
    out
}

/// Methods as rows, `Avg` then one column per family.
pub fn wide(variants: &[VariantRows], title: &str, metric: fn(&FamilyRow) -> f64, digits: usize) -> String {
    let fams = families(variants);
    let name_w = variants.iter().map(|v| v.variant.len()).max().unwrap_or(0).max(7);
    let col_w = fams.iter().map(String::len).max().unwrap_or(0).max(digits + 6);
    let mut s = format!("{title}\n");
    let _ = write!(s, "{:<name_w$} | {:>col_w$} |", "variant", "avg");
    for f in &fams {
        let _ = write!(s, " {f:>col_w$}");
    }
    s.push('\n');
    s.push_str(&"-".repeat(name_w + 6 + (col_w + 1) * (fams.len() + 1)));
    s.push('\n');
    for v in variants {
        let avg = v.average().map_or(f64::NAN, metric);
        let _ = write!(s, "{:<name_w$} | {avg:>col_w$.digits$} |", v.variant);
        for f in &fams {
            let val = v.rows.iter().find(|r| &r.family == f).map_or(f64::NAN, metric);
            let _ = write!(s, " {val:>col_w$.digits$}");
        }
        s.push('\n');
    }
    s
}

/// Ablation layout: one row per variant with average CD and F-score, the
/// full model last.
pub fn ablation(variants: &[VariantRows]) -> String {
    let name_w = variants.iter().map(|v| v.variant.len()).max().unwrap_or(0).max(13);
    let mut s = format!("{:<name_w$} | {:>10} | {:>8}\n", "model variant", "CD x1e-3", "F-score");
    s.push_str(&"-".repeat(name_w + 26));
    s.push('\n');
    let ordered = variants
        .iter()
        .filter(|v| v.variant != "full")
        .chain(variants.iter().filter(|v| v.variant == "full"));
    for v in ordered {
        let (cd, f) = v.average().map_or((f64::NAN, f64::NAN), |r| (r.cd_e3, r.fscore));
        let _ = writeln!(s, "{:<name_w$} | {cd:>10.3} | {f:>8.3}", v.variant);
    }
    s
}
