//! MATPOWER case-file parsing.
//!
//! Reads the standard `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and
//! `mpc.gencost` tables from `.m` case text. Comments, blank lines, unknown
//! assignments and table ordering are all tolerated; only polynomial
//! (model = 2) cost rows with up to three coefficients are supported.

use thiserror::Error;

/// Minimum column counts for each table, per the MATPOWER case format.
const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;
const GENCOST_COLS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("missing table mpc.{0}")]
    MissingTable(&'static str),
    #[error("line {line}: malformed row in mpc.{table}: {reason}")]
    MalformedRow {
        table: &'static str,
        line: usize,
        reason: String,
    },
    #[error("line {line}: unsupported cost model {model} (only polynomial model 2)")]
    UnsupportedCostModel { line: usize, model: i64 },
    #[error("line {line}: gencost row with ncost {ncost} (at most 3 coefficients)")]
    UnsupportedCostOrder { line: usize, ncost: i64 },
    #[error("gencost has {rows} rows for {gens} generators")]
    GencostRowMismatch { rows: usize, gens: usize },
}

/// Raw numeric tables mirroring the source file columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCase {
    pub base_mva: f64,
    pub bus_table: Vec<Vec<f64>>,
    pub gen_table: Vec<Vec<f64>>,
    pub branch_table: Vec<Vec<f64>>,
    /// One row per generator (a trailing reactive-cost block, if present in
    /// the file, is dropped). Columns mirror the file: model, startup,
    /// shutdown, ncost, then `ncost` polynomial coefficients.
    pub gencost_table: Vec<Vec<f64>>,
}

/// Quadratic coefficients (a, b, c) of generator `g`'s cost in $ with power
/// in MW: cost = a + b*P + c*P^2. Rows with fewer than three polynomial
/// coefficients are zero-padded from the high end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GencostRow {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl RawCase {
    pub fn cost_coefficients(&self, g: usize) -> Option<GencostRow> {
        let row = self.gencost_table.get(g)?;
        let ncost = row[3] as usize;
        let coeffs = &row[4..4 + ncost];
        // MATPOWER stores polynomial coefficients highest degree first.
        let (mut c, mut b, mut a) = (0.0, 0.0, 0.0);
        match ncost {
            0 => {}
            1 => a = coeffs[0],
            2 => {
                b = coeffs[0];
                a = coeffs[1];
            }
            _ => {
                c = coeffs[0];
                b = coeffs[1];
                a = coeffs[2];
            }
        }
        Some(GencostRow { a, b, c })
    }
}

/// Parses MATPOWER case text. Deterministic: identical bytes yield an
/// identical [`RawCase`].
pub fn parse_case(text: &str) -> Result<RawCase, ParseError> {
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;
    let mut gencost = None;

    let mut lines = text.lines().enumerate().peekable();
    while let Some((lineno, line)) = lines.next() {
        let stripped = strip_comment(line);
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("mpc.baseMVA") {
            if let Some(value) = rest.split('=').nth(1) {
                base_mva = value.trim().trim_end_matches(';').parse::<f64>().ok();
            }
            continue;
        }
        for (name, slot, min_cols) in [
            ("bus", &mut bus, BUS_COLS),
            ("gencost", &mut gencost, GENCOST_COLS),
            ("gen", &mut gen, GEN_COLS),
            ("branch", &mut branch, BRANCH_COLS),
        ] {
            // gencost is checked before gen so the prefix cannot collide
            if trimmed.starts_with(&format!("mpc.{name}")) && trimmed.contains('[') {
                let rows = parse_matrix(trimmed, &mut lines, name, min_cols, lineno)?;
                *slot = Some(rows);
                break;
            }
        }
    }

    let base_mva = base_mva.ok_or(ParseError::MissingTable("baseMVA"))?;
    let bus_table = bus.ok_or(ParseError::MissingTable("bus"))?;
    let gen_table = gen.ok_or(ParseError::MissingTable("gen"))?;
    let branch_table = branch.ok_or(ParseError::MissingTable("branch"))?;
    let mut gencost_table = gencost.ok_or(ParseError::MissingTable("gencost"))?;

    validate_gencost(&gencost_table)?;
    let ng = gen_table.len();
    if gencost_table.len() == 2 * ng {
        gencost_table.truncate(ng); // drop the reactive-cost block
    } else if gencost_table.len() != ng {
        return Err(ParseError::GencostRowMismatch {
            rows: gencost_table.len(),
            gens: ng,
        });
    }

    Ok(RawCase {
        base_mva,
        bus_table,
        gen_table,
        branch_table,
        gencost_table,
    })
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn parse_matrix<'a>(
    header: &str,
    lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, &'a str)>>,
    table: &'static str,
    min_cols: usize,
    header_line: usize,
) -> Result<Vec<Vec<f64>>, ParseError> {
    let mut rows = Vec::new();
    let mut push_rows = |segment: &str, lineno: usize| -> Result<bool, ParseError> {
        // rows are separated by ';'; a trailing ']' closes the matrix
        let (body, done) = match segment.find(']') {
            Some(pos) => (&segment[..pos], true),
            None => (segment, false),
        };
        for row_text in body.split(';') {
            let row_text = row_text.trim();
            if row_text.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for token in row_text.split(|c: char| c.is_whitespace() || c == ',') {
                if token.is_empty() {
                    continue;
                }
                let value = token.parse::<f64>().map_err(|_| ParseError::MalformedRow {
                    table,
                    line: lineno + 1,
                    reason: format!("non-numeric entry {token:?}"),
                })?;
                row.push(value);
            }
            if row.is_empty() {
                continue;
            }
            if row.len() < min_cols {
                return Err(ParseError::MalformedRow {
                    table,
                    line: lineno + 1,
                    reason: format!("expected at least {min_cols} columns, got {}", row.len()),
                });
            }
            rows.push(row);
        }
        Ok(done)
    };

    let after_bracket = header.split_once('[').map(|(_, rest)| rest).unwrap_or("");
    if push_rows(after_bracket, header_line)? {
        return Ok(rows);
    }
    for (lineno, line) in lines.by_ref() {
        let stripped = strip_comment(line);
        if push_rows(stripped, lineno)? {
            return Ok(rows);
        }
    }
    Err(ParseError::MalformedRow {
        table,
        line: header_line + 1,
        reason: "unterminated matrix".into(),
    })
}

fn validate_gencost(rows: &[Vec<f64>]) -> Result<(), ParseError> {
    for (i, row) in rows.iter().enumerate() {
        let model = row[0] as i64;
        if model != 2 {
            return Err(ParseError::UnsupportedCostModel {
                line: i + 1,
                model,
            });
        }
        let ncost = row[3] as i64;
        if !(0..=3).contains(&ncost) {
            return Err(ParseError::UnsupportedCostOrder {
                line: i + 1,
                ncost,
            });
        }
        if row.len() < 4 + ncost as usize {
            return Err(ParseError::MalformedRow {
                table: "gencost",
                line: i + 1,
                reason: format!("ncost {ncost} but only {} trailing values", row.len() - 4),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
% hand-written two-bus fixture
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;

%% bus data
mpc.bus = [
    1  3  0    0   0  0  1  1.0  0.0  230  1  1.1  0.9;  % slack
    2  1  100  20  0  0  1  1.0  0.0  230  1  1.1  0.9;
];

mpc.gen = [
    1  0  0  300  -300  1.0  100  1  300  0;
];

mpc.branch = [
    1  2  0.01  0.1  0.02  250  0  0  0  0  1  -360  360;
];

mpc.gencost = [
    2  0  0  3  0.1  5.0  20;
];
"#;

    #[test]
    fn parses_fixture_field_by_field() {
        let case = parse_case(FIXTURE).unwrap();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.bus_table.len(), 2);
        assert_eq!(case.gen_table.len(), 1);
        assert_eq!(case.branch_table.len(), 1);
        assert_eq!(case.bus_table[0][0], 1.0);
        assert_eq!(case.bus_table[0][1], 3.0);
        assert_eq!(case.bus_table[1][2], 100.0);
        assert_eq!(case.bus_table[1][3], 20.0);
        assert_eq!(case.bus_table[1][11], 1.1);
        assert_eq!(case.bus_table[1][12], 0.9);
        assert_eq!(case.gen_table[0][8], 300.0);
        assert_eq!(case.branch_table[0][2], 0.01);
        assert_eq!(case.branch_table[0][3], 0.1);
        assert_eq!(case.branch_table[0][4], 0.02);
        assert_eq!(case.branch_table[0][5], 250.0);
        let cost = case.cost_coefficients(0).unwrap();
        assert_eq!((cost.a, cost.b, cost.c), (20.0, 5.0, 0.1));
    }

    #[test]
    fn missing_gencost_table() {
        let text = FIXTURE.replace("mpc.gencost", "mpc.ignored");
        assert_eq!(parse_case(&text), Err(ParseError::MissingTable("gencost")));
    }

    #[test]
    fn piecewise_linear_cost_rejected() {
        let text = FIXTURE.replace("2  0  0  3  0.1  5.0  20;", "1  0  0  4  0 0 100 500;");
        assert!(matches!(
            parse_case(&text),
            Err(ParseError::UnsupportedCostModel { model: 1, .. })
        ));
    }

    #[test]
    fn short_cost_rows_zero_padded() {
        let text = FIXTURE.replace("2  0  0  3  0.1  5.0  20;", "2  0  0  2  5.0  20;");
        let case = parse_case(&text).unwrap();
        let cost = case.cost_coefficients(0).unwrap();
        assert_eq!((cost.a, cost.b, cost.c), (20.0, 5.0, 0.0));
    }

    #[test]
    fn non_numeric_entry_rejected() {
        let text = FIXTURE.replace("1  2  0.01", "1  x  0.01");
        assert!(matches!(
            parse_case(&text),
            Err(ParseError::MalformedRow { table: "branch", .. })
        ));
    }

    #[test]
    fn short_row_rejected() {
        let text = FIXTURE.replace(
            "1  3  0    0   0  0  1  1.0  0.0  230  1  1.1  0.9;  % slack",
            "1  3  0;",
        );
        assert!(matches!(
            parse_case(&text),
            Err(ParseError::MalformedRow { table: "bus", .. })
        ));
    }

    #[test]
    fn insensitive_to_table_order_and_comments() {
        let case = parse_case(FIXTURE).unwrap();
        // reorder tables and sprinkle comments
        let reordered = r#"
mpc.gencost = [ 2  0  0  3  0.1  5.0  20; ];
% a comment
mpc.branch = [ 1  2  0.01  0.1  0.02  250  0  0  0  0  1  -360  360; ];
mpc.baseMVA = 100;
mpc.gen = [ 1  0  0  300  -300  1.0  100  1  300  0; ];
mpc.bus = [
    1  3  0    0   0  0  1  1.0  0.0  230  1  1.1  0.9;
    2  1  100  20  0  0  1  1.0  0.0  230  1  1.1  0.9;
];
"#;
        assert_eq!(parse_case(reordered).unwrap(), case);
    }

    #[test]
    fn parsing_is_deterministic() {
        assert_eq!(parse_case(FIXTURE).unwrap(), parse_case(FIXTURE).unwrap());
    }

    #[test]
    fn reactive_cost_block_dropped() {
        let text = FIXTURE.replace(
            "2  0  0  3  0.1  5.0  20;",
            "2  0  0  3  0.1  5.0  20;\n    2  0  0  3  0  0  0;",
        );
        let case = parse_case(&text).unwrap();
        assert_eq!(case.gencost_table.len(), 1);
    }
}
