//! Plain-text regression tables: coefficient with stars, standard error in
//! parentheses beneath, summary rows at the bottom.

use std::fmt::Write;

use super::RegressionResult;

/// `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Side-by-side table of `columns` showing `terms` (all terms of the first
/// column when empty). `scale` multiplies coefficients and errors, e.g. 100
/// for log points.
pub fn render_table(columns: &[(&str, &RegressionResult)], terms: &[&str], scale: f64, decimals: usize) -> String {
    let owned: Vec<String>;
    let terms: Vec<&str> = if terms.is_empty() {
        owned = columns.first().map(|c| c.1.terms.iter().map(|t| t.name.clone()).collect()).unwrap_or_default();
        owned.iter().map(String::as_str).collect()
    } else {
        terms.to_vec()
    };
    let label_w = terms.iter().map(|t| t.len()).chain(["Fixed effects".len(), "Mean of outcome".len()]).max().unwrap_or(0);
    let mut grid: Vec<Vec<String>> = Vec::new();
    grid.push(std::iter::once(String::new()).chain(columns.iter().map(|c| format!("({})", c.0))).collect());
    for term in &terms {
        let mut coef_row = vec![term.to_string()];
        let mut se_row = vec![String::new()];
        for (_, r) in columns {
            match r.term(term) {
                Some(t) => {
                    coef_row.push(format!("{:.*}{}", decimals, t.coef * scale, stars(t.p)));
                    se_row.push(format!("({:.*})", decimals, t.se * scale));
                }
                None => {
                    coef_row.push(String::new());
                    se_row.push(String::new());
                }
            }
        }
        grid.push(coef_row);
        grid.push(se_row);
    }
    let summary: [(&str, Box<dyn Fn(&RegressionResult) -> String>); 4] = [
        ("Observations", Box::new(|r| r.n_effective.to_string())),
        ("R-squared", Box::new(|r| format!("{:.3}", r.r_squared))),
        ("Mean of outcome", Box::new(move |r| format!("{:.*}", decimals, r.outcome_mean))),
        (
            "Fixed effects",
            Box::new(|r| {
                if r.spec.fixed_effects.is_empty() {
                    "none".into()
                } else {
                    r.spec.fixed_effects.iter().map(|d| d.join("x")).collect::<Vec<_>>().join(", ")
                }
            }),
        ),
    ];
    let rule_at = grid.len();
    for (label, f) in &summary {
        grid.push(std::iter::once(label.to_string()).chain(columns.iter().map(|c| f(c.1))).collect());
    }
    let ncol = columns.len() + 1;
    let widths: Vec<usize> = (0..ncol)
        .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0).max(if j == 0 { label_w } else { 0 }))
        .collect();
    let total = widths.iter().sum::<usize>() + 2 * (ncol - 1);
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        if i == 1 || i == rule_at {
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (cell, w) in row.iter().zip(&widths).skip(1) {
            let _ = write!(line, "  {:>w$}", cell, w = w);
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    let _ = writeln!(out, "{}", "-".repeat(total));
    out.push_str("Standard errors in parentheses. *** p<0.01, ** p<0.05, * p<0.1\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econometrics::{ols_fit, DataTable, RegressionSpec};

    #[test]
    fn star_cutoffs() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }

    #[test]
    fn table_layout() {
        let mut t = DataTable::new(8);
        t.push_numeric("y", vec![1.0, 2.1, 2.9, 4.2, 5.0, 5.8, 7.1, 8.0]).unwrap();
        t.push_numeric("female", vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        t.push_numeric("x", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let a = ols_fit(&t, &RegressionSpec::new("y", &["female"])).unwrap();
        let b = ols_fit(&t, &RegressionSpec::new("y", &["female", "x"])).unwrap();
        let s = render_table(&[("1", &a), ("2", &b)], &["female", "x"], 100.0, 2);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].contains("(1)") && lines[0].contains("(2)"));
        assert!(lines[2].starts_with("female"));
        assert!(lines[3].trim_start().starts_with('('));
        assert!(s.contains("Observations"));
        assert!(s.contains("***"));
    }
}
