//! Small formatting helpers shared by the subcommands.

/// Fixed six-decimal rendering used for every score.
pub fn score(v: f64) -> String {
    format!("{v:.6}")
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Shortest text that reads back as the same f64.
pub fn exact(v: f64) -> String {
    format!("{v}")
}
