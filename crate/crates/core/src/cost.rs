//! Token-cost and success-rate models for recorded-then-replayed tasks.
//!
//! A traditional scheduler pays `c_llm` tokens on every execution; a
//! recorded task pays `c_first` once and nothing per replay.

use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_FIRST_EXEC_TOKENS: u64 = 1_050;
/// Per-execution planner cost consistent with every row of the reference
/// savings table (e.g. 720,000 tokens / 1,440 executions).
pub const DEFAULT_LLM_TOKENS: u64 = 500;
/// 30 days.
pub const MONTH_MINUTES: u64 = 43_200;

/// Intervals of the monthly savings table: label and minutes.
pub const TABLE_INTERVALS: [(&str, u64); 6] = [
    ("5 min", 5),
    ("10 min", 10),
    ("30 min", 30),
    ("1 hour", 60),
    ("6 hours", 360),
    ("24 hours", 1_440),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("invalid cost parameters: {0}")]
    InvalidParams(&'static str),
    #[error("savings are undefined when the horizon holds no execution")]
    NoExecutions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub c_first: u64,
    pub c_llm: u64,
    pub interval_minutes: u64,
    pub horizon_minutes: u64,
}

impl CostParams {
    pub fn new(c_first: u64, c_llm: u64, interval_minutes: u64, horizon_minutes: u64) -> Result<Self, CostError> {
        if c_llm == 0 {
            return Err(CostError::InvalidParams("c_llm must be positive"));
        }
        if interval_minutes == 0 {
            return Err(CostError::InvalidParams("interval must be at least one minute"));
        }
        Ok(Self {
            c_first,
            c_llm,
            interval_minutes,
            horizon_minutes,
        })
    }

    pub fn executions(&self) -> u64 {
        self.horizon_minutes / self.interval_minutes
    }
}

pub fn cost_traditional(p: &CostParams) -> u64 {
    p.c_llm * p.executions()
}

/// The recorded task costs its first execution regardless of horizon.
pub fn cost_loop(p: &CostParams) -> u64 {
    p.c_first
}

/// `1 - c_first / cost_traditional`.
pub fn savings_rate(p: &CostParams) -> Result<f64, CostError> {
    let traditional = cost_traditional(p);
    if traditional == 0 {
        return Err(CostError::NoExecutions);
    }
    Ok(1.0 - p.c_first as f64 / traditional as f64)
}

/// Savings in hundredths of a percent, rounded half to even with exact
/// integer arithmetic.
pub fn savings_basis_points(p: &CostParams) -> Result<i128, CostError> {
    let traditional = cost_traditional(p) as i128;
    if traditional == 0 {
        return Err(CostError::NoExecutions);
    }
    let numerator = 10_000 * (traditional - p.c_first as i128);
    let quotient = numerator.div_euclid(traditional);
    let remainder = numerator.rem_euclid(traditional);
    let rounded = match (2 * remainder).cmp(&traditional) {
        std::cmp::Ordering::Less => quotient,
        std::cmp::Ordering::Greater => quotient + 1,
        std::cmp::Ordering::Equal => quotient + (quotient & 1),
    };
    Ok(rounded)
}

pub fn format_basis_points(bp: i128) -> String {
    let sign = if bp < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}%", bp.abs() / 100, bp.abs() % 100)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessParams {
    pub p_s: f64,
    pub k: u64,
}

impl SuccessParams {
    pub fn new(p_s: f64, k: u64) -> Result<Self, CostError> {
        if !(0.0..=1.0).contains(&p_s) {
            return Err(CostError::InvalidParams("p_s must lie in [0, 1]"));
        }
        if k == 0 {
            return Err(CostError::InvalidParams("k must be positive"));
        }
        Ok(Self { p_s, k })
    }
}

/// Probability that `k` independent planner executions are all correct.
pub fn success_traditional(s: &SuccessParams) -> f64 {
    s.p_s.powf(s.k as f64)
}

/// One planner-driven recording, then replays that always succeed.
pub fn success_loop(s: &SuccessParams) -> f64 {
    s.p_s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SavingsRow {
    pub label: &'static str,
    pub interval_minutes: u64,
    pub executions: u64,
    pub traditional_tokens: u64,
    pub loop_tokens: u64,
    pub savings_bp: i128,
}

impl SavingsRow {
    pub fn savings(&self) -> String {
        format_basis_points(self.savings_bp)
    }
}

/// One row per interval in [`TABLE_INTERVALS`] over a `horizon_minutes`
/// window. Intervals longer than the horizon are left out.
pub fn savings_table(c_first: u64, c_llm: u64, horizon_minutes: u64) -> Result<Vec<SavingsRow>, CostError> {
    let mut rows = Vec::with_capacity(TABLE_INTERVALS.len());
    for (label, interval) in TABLE_INTERVALS {
        let p = CostParams::new(c_first, c_llm, interval, horizon_minutes)?;
        if p.executions() == 0 {
            continue;
        }
        rows.push(SavingsRow {
            label,
            interval_minutes: interval,
            executions: p.executions(),
            traditional_tokens: cost_traditional(&p),
            loop_tokens: cost_loop(&p),
            savings_bp: savings_basis_points(&p)?,
        });
    }
    Ok(rows)
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Aligned, human-readable table.
pub fn format_table(rows: &[SavingsRow]) -> String {
    let header = ["Interval", "Exec./Month", "Traditional (tokens)", "Loop (tokens)", "Savings"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.label.to_string(),
                thousands(r.executions),
                thousands(r.traditional_tokens),
                thousands(r.loop_tokens),
                r.savings(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{:<w$}", cell, w = widths[i]);
            } else {
                let _ = write!(out, "  {:>w$}", cell, w = widths[i]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Tab-separated rows without thousands separators:
/// `interval_minutes executions traditional loop savings_percent`.
pub fn format_rows_tsv(rows: &[SavingsRow]) -> String {
    let mut out = String::from("interval_minutes\texecutions\ttraditional_tokens\tloop_tokens\tsavings_percent\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.interval_minutes,
            r.executions,
            r.traditional_tokens,
            r.loop_tokens,
            r.savings().trim_end_matches('%')
        );
    }
    out
}
