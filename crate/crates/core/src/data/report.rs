use std::fmt::Write;

/// A plain-text table followed by a machine-readable `key=value` block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub values: Vec<(String, String)>,
}

pub const VALUES_MARKER: &str = "[values]";

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn value(&mut self, key: impl Into<String>, v: impl ToString) -> &mut Self {
        self.values.push((key.into(), v.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        if !self.header.is_empty() {
            let cols = self.header.len();
            let widths: Vec<usize> = (0..cols)
                .map(|c| {
                    self.rows
                        .iter()
                        .filter_map(|r| r.get(c))
                        .chain(std::iter::once(&self.header[c]))
                        .map(|s| s.chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            writeln!(out, "{}", line(&self.header)).unwrap();
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            writeln!(out, "{}", line(&rule)).unwrap();
            for r in &self.rows {
                writeln!(out, "{}", line(r)).unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "{VALUES_MARKER}").unwrap();
        for (k, v) in &self.values {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }
}

/// The `key=value` pairs after the values marker of a rendered report.
pub fn parse_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .skip_while(|l| l.trim() != VALUES_MARKER)
        .skip(1)
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
