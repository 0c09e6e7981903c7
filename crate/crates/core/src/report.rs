//! Per-(codec, scope, group) summaries of optimization results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lambda::{CodecId, FrameTypeGroup, LambdaScope};
use crate::sweep::OptimizationResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub codec: CodecId,
    pub scope: LambdaScope,
    pub group: FrameTypeGroup,
    pub clips: usize,
    pub avg_k_hat: f64,
    pub avg_bdr: f64,
    /// Most negative BD-Rate (largest gain).
    pub max_bdr: f64,
    /// Least negative BD-Rate.
    pub min_bdr: f64,
    pub avg_iters: f64,
    pub avg_bitrate_savings: f64,
    pub avg_rd2_savings: Option<f64>,
    pub avg_msssim_change_db: Option<f64>,
    pub avg_vmaf_change: Option<f64>,
}

pub const CSV_HEADER: &str = "codec,scope,group,clips,avg_k_hat,avg_bdr_pct,max_bdr_pct,min_bdr_pct,avg_iters,\
avg_bitrate_savings_pct,avg_rd2_savings_pct,avg_msssim_change_db,avg_vmaf_change";

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over clips, or `None` when any clip lacks the value.
fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

fn codec_rank(c: CodecId) -> u8 {
    match c {
        CodecId::Av1 => 0,
        CodecId::Hevc => 1,
    }
}

/// One row per `(codec, scope, group)` present in `results`, ordered by
/// codec, scope, then group. Within a row, clips are averaged in clip-id
/// order so the output does not depend on input order.
pub fn summarize(results: &[OptimizationResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u8, LambdaScope, FrameTypeGroup), Vec<&OptimizationResult>> = BTreeMap::new();
    for r in results {
        groups.entry((codec_rank(r.codec), r.scope, r.group)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (_, mut rs) in groups {
        if rs.is_empty() {
            tracing::warn!("empty summary group omitted");
            continue;
        }
        rs.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let bdr: Vec<f64> = rs.iter().map(|r| r.bd_rate).collect();
        rows.push(SummaryRow {
            codec: rs[0].codec,
            scope: rs[0].scope,
            group: rs[0].group,
            clips: rs.len(),
            avg_k_hat: mean(&rs.iter().map(|r| r.k_hat.get()).collect::<Vec<_>>()),
            avg_bdr: mean(&bdr),
            max_bdr: bdr.iter().copied().fold(f64::INFINITY, f64::min),
            min_bdr: bdr.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            avg_iters: mean(&rs.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()),
            avg_bitrate_savings: mean(&rs.iter().map(|r| r.mean_savings).collect::<Vec<_>>()),
            avg_rd2_savings: mean_opt(&rs.iter().map(|r| r.rd2_savings).collect::<Vec<_>>()),
            avg_msssim_change_db: mean_opt(&rs.iter().map(|r| r.msssim_change_db).collect::<Vec<_>>()),
            avg_vmaf_change: mean_opt(&rs.iter().map(|r| r.vmaf_change).collect::<Vec<_>>()),
        });
    }
    rows
}

/// Fixed three-decimal formatting with negative zero folded into zero.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "NA".into())
}

fn cells(row: &SummaryRow) -> Vec<String> {
    vec![
        row.codec.to_string(),
        row.scope.to_string(),
        row.group.to_string(),
        row.clips.to_string(),
        fmt_num(row.avg_k_hat),
        fmt_num(row.avg_bdr),
        fmt_num(row.max_bdr),
        fmt_num(row.min_bdr),
        fmt_num(row.avg_iters),
        fmt_num(row.avg_bitrate_savings),
        fmt_opt(row.avg_rd2_savings),
        fmt_opt(row.avg_msssim_change_db),
        fmt_opt(row.avg_vmaf_change),
    ]
}

pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&cells(row).join(","));
        out.push('\n');
    }
    out
}

/// Index of the row with the lowest average BD-Rate per (codec, scope).
fn best_rows(rows: &[SummaryRow]) -> Vec<bool> {
    let mut best: BTreeMap<(u8, LambdaScope), usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let e = best.entry((codec_rank(r.codec), r.scope)).or_insert(i);
        if r.avg_bdr < rows[*e].avg_bdr {
            *e = i;
        }
    }
    let mut marks = vec![false; rows.len()];
    for i in best.into_values() {
        marks[i] = true;
    }
    marks
}

/// Column-aligned table. The best row per codec and scope is marked `*`.
/// BD-Rate columns are percentages; negative is better.
pub fn render_text(rows: &[SummaryRow]) -> String {
    let header: Vec<String> = [
        "", "codec", "scope", "group", "clips", "avg_k", "avg_BDR%", "max_BDR%", "min_BDR%", "iters", "savings%",
        "RD2_sav%", "MS-SSIM_dB", "VMAF",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let marks = best_rows(rows);
    let mut table = vec![header];
    for (row, best) in rows.iter().zip(marks) {
        let mut line = vec![if best { "*".to_string() } else { String::new() }];
        line.extend(cells(row));
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in &table {
        let mut s = String::new();
        for (c, cell) in line.iter().enumerate() {
            if c > 0 {
                s.push_str("  ");
            }
            // Text columns left-aligned, numbers right-aligned.
            if c <= 3 {
                let _ = write!(s, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(s, "{cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(-0.0001), "0.000");
        assert_eq!(fmt_num(-4.9244), "-4.924");
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn optional_means() {
        assert_eq!(mean_opt(&[Some(1.0), Some(3.0)]), Some(2.0));
        assert_eq!(mean_opt(&[Some(1.0), None]), None);
    }
}
