//! Deterministic output artifacts: sweep CSVs with embedded resolved
//! config, solve manifests, field dumps, and plot scripts. All builders
//! return strings; the caller writes files in a fixed order, so identical
//! inputs produce bitwise-identical outputs.

use std::sync::Arc;

use nehari_core::grid::{Field, Grid};
use nehari_core::model::ProblemKind;
use nehari_core::solver::SolveReport;
use nehari_core::study::{EpsSweep, LambdaSweep, StudyRecord};

use crate::config::{render_config, RunConfig};

/// Bumped whenever any emitted column order or file layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Floats in CSV bodies and dumps carry 17 significant digits, enough to
/// reconstruct the exact binary value.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// `# `-prefixed header block: schema version plus the full resolved config.
fn comment_header(schema: &str, cfg: &RunConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("# schema = {schema}/{SCHEMA_VERSION}\n"));
    for line in render_config(cfg).lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn pair_labels(rec: &StudyRecord) -> Vec<String> {
    rec.pairs.iter().map(|p| format!("{}{}", p.i, p.j)).collect()
}

fn first_good(rows: &[nehari_core::study::SweepRow]) -> Option<&StudyRecord> {
    rows.iter().find_map(|r| r.outcome.as_ref().ok())
}

/// CSV for a concentration sweep: one row per (eps, component).
///
/// Columns: eps, i, energy_total, energy_i, ratio_grad_d{delta}...,
/// ratio_2p_d{delta}..., overlap_ij..., mass_term_i, w_dist_i, then the
/// appended v_norm1_sq_i and d0 columns. Failed rows appear as `# ` comment
/// lines in place, so row order always reflects the requested eps list.
pub fn eps_sweep_csv(cfg: &RunConfig, sweep: &EpsSweep) -> String {
    let mut out = comment_header("eps-sweep", cfg);
    out.push_str(&format!(
        "# reference_energies = {}\n# reference_total = {}\n",
        sweep
            .reference_energies
            .iter()
            .map(fmt_float_ref)
            .collect::<Vec<_>>()
            .join(" "),
        fmt_float(sweep.reference_total),
    ));

    let mut cols: Vec<String> = vec!["eps".into(), "i".into(), "energy_total".into(), "energy_i".into()];
    if let Some(rec) = first_good(&sweep.rows) {
        for r in &rec.components[0].ratios {
            cols.push(format!("ratio_grad_d{}", r.delta));
        }
        for r in &rec.components[0].ratios {
            cols.push(format!("ratio_2p_d{}", r.delta));
        }
        for l in pair_labels(rec) {
            cols.push(format!("overlap_{l}"));
        }
    }
    cols.push("mass_term_i".into());
    cols.push("w_dist_i".into());
    cols.push("v_norm1_sq_i".into());
    cols.push("d0".into());
    out.push_str(&cols.join(","));
    out.push('\n');

    for row in &sweep.rows {
        match &row.outcome {
            Err(e) => {
                out.push_str(&format!("# row eps={} failed: {}\n", row.value, single_line(e)));
            }
            Ok(rec) => {
                for (i, comp) in rec.components.iter().enumerate() {
                    let mut fields: Vec<String> = vec![
                        fmt_float(rec.sweep_value),
                        i.to_string(),
                        fmt_float(rec.energy_total),
                        fmt_float(comp.energy),
                    ];
                    for r in &comp.ratios {
                        fields.push(fmt_float(r.ratio_grad));
                    }
                    for r in &comp.ratios {
                        fields.push(fmt_float(r.ratio_2p));
                    }
                    for p in &rec.pairs {
                        fields.push(fmt_float(p.overlap));
                    }
                    fields.push(fmt_float(comp.mass_term));
                    fields.push(fmt_float(comp.limit_distance_2p.unwrap_or(f64::NAN)));
                    fields.push(fmt_float(comp.v_norm1_sq.unwrap_or(f64::NAN)));
                    fields.push(fmt_float(rec.upper_bound));
                    out.push_str(&fields.join(","));
                    out.push('\n');
                }
            }
        }
    }
    out
}

fn fmt_float_ref(x: &f64) -> String {
    fmt_float(*x)
}

fn single_line(e: &dyn std::fmt::Display) -> String {
    e.to_string().replace('\n', " ")
}

/// CSV for a competition sweep: one row per (lambda, component).
///
/// Columns: lambda, i, energy_total, overlap_ij..., lam_times_overlap_ij...,
/// sup_i, sup_inside_i, support_overlap_theta, c_star, then the appended
/// mu_ball_2p_i column (the per-row value whose sweep maximum bounds
/// |lambda| * overlap).
pub fn lambda_sweep_csv(cfg: &RunConfig, sweep: &LambdaSweep) -> String {
    let mut out = comment_header("lambda-sweep", cfg);
    if let Some(gap) = sweep.cold_check_gap {
        out.push_str(&format!("# cold_check_gap = {}\n", fmt_float(gap)));
    }

    let mut cols: Vec<String> = vec!["lambda".into(), "i".into(), "energy_total".into()];
    if let Some(rec) = first_good(&sweep.rows) {
        for l in pair_labels(rec) {
            cols.push(format!("overlap_{l}"));
        }
        for l in pair_labels(rec) {
            cols.push(format!("lam_times_overlap_{l}"));
        }
    }
    cols.push("sup_i".into());
    cols.push("sup_inside_i".into());
    cols.push("support_overlap_theta".into());
    cols.push("c_star".into());
    cols.push("mu_ball_2p_i".into());
    out.push_str(&cols.join(","));
    out.push('\n');

    for row in &sweep.rows {
        match &row.outcome {
            Err(e) => {
                out.push_str(&format!("# row lambda={} failed: {}\n", row.value, single_line(e)));
            }
            Ok(rec) => {
                for (i, comp) in rec.components.iter().enumerate() {
                    let mut fields: Vec<String> = vec![
                        fmt_float(rec.sweep_value),
                        i.to_string(),
                        fmt_float(rec.energy_total),
                    ];
                    for p in &rec.pairs {
                        fields.push(fmt_float(p.overlap));
                    }
                    for p in &rec.pairs {
                        fields.push(fmt_float(p.lambda_times_overlap));
                    }
                    fields.push(fmt_float(comp.sup.value));
                    fields.push(if comp.sup.inside_attraction { "1" } else { "0" }.into());
                    fields.push(fmt_float(rec.support_overlap));
                    fields.push(fmt_float(rec.upper_bound));
                    fields.push(fmt_float(comp.mu_ball_2p));
                    out.push_str(&fields.join(","));
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Human-readable (and diff-stable) manifest of one direct solve.
pub fn solve_manifest(cfg: &RunConfig, report: &SolveReport) -> String {
    let mut out = comment_header("solve", cfg);
    out.push_str(&format!("energy = {}\n", fmt_float(report.energy)));
    out.push_str(&format!("stationarity = {}\n", fmt_float(report.stationarity)));
    out.push_str(&format!("iterations = {}\n", report.iterations));
    out.push_str(&format!("nonnegative = {}\n", report.nonnegative));
    out.push_str(&format!("projectable_throughout = {}\n", report.projectable_throughout));
    out.push_str(&format!("energy_change_on_abs = {}\n", fmt_float(report.energy_change_on_abs)));
    for (k, a) in report.norms_sq.iter().enumerate() {
        out.push_str(&format!("norm_sq_{k} = {}\n", fmt_float(*a)));
    }
    let p = cfg.params.p;
    let share = (p - 1.0) / (2.0 * p);
    for (k, a) in report.norms_sq.iter().enumerate() {
        out.push_str(&format!("energy_{k} = {}\n", fmt_float(share * a)));
    }
    out.push_str("history = iteration energy grad_norm\n");
    for h in &report.history {
        out.push_str(&format!(
            "history_row = {} {} {}\n",
            h.iteration,
            fmt_float(h.energy),
            fmt_float(h.grad_norm)
        ));
    }
    out
}

/// Token naming a problem frame in dump headers.
pub fn kind_token(kind: ProblemKind) -> String {
    match kind {
        ProblemKind::OriginalV => "original-v".into(),
        ProblemKind::RescaledU => "rescaled-u".into(),
        ProblemKind::LimitSystem => "limit-system".into(),
        ProblemKind::LimitEquation(i) => format!("limit-equation-{i}"),
    }
}

/// Field dump: header line `dim n L kind component`, then one node value
/// per line in lexicographic node order.
pub fn field_dump(field: &Field, kind: ProblemKind, component: usize) -> String {
    let grid = field.grid();
    let mut out = String::with_capacity(field.values().len() * 24 + 64);
    out.push_str(&format!(
        "{} {} {} {} {}\n",
        grid.dim(),
        grid.n(),
        grid.half_width(),
        kind_token(kind),
        component
    ));
    for v in field.values() {
        out.push_str(&fmt_float(*v));
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("dump line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn dump_err(line: usize, message: impl Into<String>) -> DumpError {
    DumpError::Malformed { line, message: message.into() }
}

/// A parsed field dump. The values are in lexicographic node order and
/// validated to be finite and exactly n^dim of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub kind: ProblemKind,
    pub component: usize,
    pub values: Vec<f64>,
}

impl FieldDump {
    /// Rebuild the grid/field pair this dump describes.
    pub fn to_field(&self) -> Result<(Arc<Grid>, Field), DumpError> {
        let grid = Arc::new(
            Grid::new(self.dim, self.n, self.half_width)
                .map_err(|e| dump_err(1, e.to_string()))?,
        );
        let mut f = Field::zeros(&grid);
        f.values_mut().copy_from_slice(&self.values);
        Ok((grid, f))
    }
}

fn parse_kind_token(token: &str, line: usize) -> Result<ProblemKind, DumpError> {
    match token {
        "original-v" => Ok(ProblemKind::OriginalV),
        "rescaled-u" => Ok(ProblemKind::RescaledU),
        "limit-system" => Ok(ProblemKind::LimitSystem),
        _ => match token.strip_prefix("limit-equation-") {
            Some(idx) => {
                let i: usize = idx
                    .parse()
                    .map_err(|_| dump_err(line, format!("bad component index in {token:?}")))?;
                if i > 1 << 20 {
                    return Err(dump_err(line, format!("component index {i} out of range")));
                }
                Ok(ProblemKind::LimitEquation(i))
            }
            None => Err(dump_err(line, format!("unknown frame token {token:?}"))),
        },
    }
}

/// Parse a field dump produced by `field_dump` (or by hand). Never panics;
/// every rejection names its line. Caps match the grid module's limits, and
/// storage grows only with the actual input, so hostile headers cannot force
/// large allocations.
pub fn parse_field_dump(text: &str) -> Result<FieldDump, DumpError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| dump_err(1, "empty dump"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(dump_err(
            1,
            format!("header must be `dim n L kind component`, found {} tokens", tokens.len()),
        ));
    }
    let dim: usize =
        tokens[0].parse().map_err(|_| dump_err(1, format!("bad dim {:?}", tokens[0])))?;
    if dim == 0 || dim > 8 {
        return Err(dump_err(1, format!("dim must lie in 1..=8, got {dim}")));
    }
    let n: usize = tokens[1].parse().map_err(|_| dump_err(1, format!("bad n {:?}", tokens[1])))?;
    if n == 0 || n > 4096 {
        return Err(dump_err(1, format!("n must lie in 1..=4096, got {n}")));
    }
    let mut total: usize = 1;
    for _ in 0..dim {
        total = total
            .checked_mul(n)
            .filter(|&t| t <= 1 << 31)
            .ok_or_else(|| dump_err(1, format!("n^dim overflows: n={n}, dim={dim}")))?;
    }
    let half_width: f64 =
        tokens[2].parse().map_err(|_| dump_err(1, format!("bad L {:?}", tokens[2])))?;
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(dump_err(1, format!("L must be positive and finite, got {half_width}")));
    }
    let kind = parse_kind_token(tokens[3], 1)?;
    let component: usize = tokens[4]
        .parse()
        .map_err(|_| dump_err(1, format!("bad component {:?}", tokens[4])))?;

    let mut values = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if values.len() == total {
            return Err(dump_err(line_no, format!("more than {total} values")));
        }
        let v: f64 = t
            .parse()
            .map_err(|_| dump_err(line_no, format!("bad value {t:?}")))?;
        if !v.is_finite() {
            return Err(dump_err(line_no, format!("non-finite value {t:?}")));
        }
        values.push(v);
    }
    if values.len() != total {
        return Err(dump_err(
            text.lines().count(),
            format!("expected {total} values, found {}", values.len()),
        ));
    }
    Ok(FieldDump { dim, n, half_width, kind, component, values })
}

/// Python script plotting whichever sweep CSVs sit next to it. Data and
/// plotting stay separate: the artifacts above carry the numbers, this file
/// only renders them.
pub fn plot_script() -> &'static str {
    r##"#!/usr/bin/env python3
"""Render sweep CSVs written alongside this script."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_rows(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, [[float(x) if i != 1 else int(x) for i, x in enumerate(r)] for r in body]


def col(header, name):
    return header.index(name)


def plot_eps(path):
    header, body = read_rows(path)
    comps = sorted({int(r[1]) for r in body})
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for i in comps:
        rows = [r for r in body if int(r[1]) == i]
        eps = [r[0] for r in rows]
        axes[0].plot(eps, [r[col(header, "energy_i")] for r in rows], "o-", label=f"i={i}")
        ratio_cols = [c for c in header if c.startswith("ratio_2p_d")]
        for c in ratio_cols:
            axes[1].plot(eps, [r[col(header, c)] for r in rows], "o-", label=f"i={i} {c}")
        axes[2].loglog(eps, [r[col(header, "v_norm1_sq_i")] for r in rows], "o-", label=f"i={i}")
    axes[0].set_xscale("log")
    axes[0].set_xlabel("eps"); axes[0].set_ylabel("energy"); axes[0].legend()
    axes[1].set_xscale("log")
    axes[1].set_xlabel("eps"); axes[1].set_ylabel("2p-mass ratio"); axes[1].legend(fontsize=6)
    axes[2].set_xlabel("eps"); axes[2].set_ylabel("original-frame norm^2"); axes[2].legend()
    fig.tight_layout()
    fig.savefig(os.path.splitext(path)[0] + ".png", dpi=150)


def plot_lambda(path):
    header, body = read_rows(path)
    rows = [r for r in body if int(r[1]) == 0]
    lam = [abs(r[0]) for r in rows]
    overlap_cols = [c for c in header if c.startswith("overlap_")]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for c in overlap_cols:
        axes[0].loglog(lam, [r[col(header, c)] for r in rows], "o-", label=c)
    axes[0].set_xlabel("|lambda|"); axes[0].set_ylabel("overlap"); axes[0].legend()
    axes[1].semilogx(lam, [r[col(header, "energy_total")] for r in rows], "o-", label="energy")
    axes[1].semilogx(lam, [r[col(header, "c_star")] for r in rows], "--", label="segregated bound")
    axes[1].set_xlabel("|lambda|"); axes[1].set_ylabel("energy"); axes[1].legend()
    fig.tight_layout()
    fig.savefig(os.path.splitext(path)[0] + ".png", dpi=150)


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    done = 0
    eps_csv = os.path.join(here, "eps_sweep.csv")
    lam_csv = os.path.join(here, "lambda_sweep.csv")
    if os.path.exists(eps_csv):
        plot_eps(eps_csv); done += 1
    if os.path.exists(lam_csv):
        plot_lambda(lam_csv); done += 1
    if not done:
        print("no sweep CSVs found next to this script", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
"##
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_exactly() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 2.0_f64.powi(53) - 1.0, 0.0, 6.02e23] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn field_dump_round_trips() {
        let grid = Arc::new(Grid::new(3, 5, 2.0).unwrap());
        let f = Field::from_fn(&grid, |x| x[0] + 2.0 * x[1] - 0.25 * x[2]);
        let text = field_dump(&f, ProblemKind::LimitEquation(1), 1);
        let dump = parse_field_dump(&text).unwrap();
        assert_eq!(dump.dim, 3);
        assert_eq!(dump.n, 5);
        assert_eq!(dump.half_width, 2.0);
        assert_eq!(dump.kind, ProblemKind::LimitEquation(1));
        assert_eq!(dump.component, 1);
        let (grid2, f2) = dump.to_field().unwrap();
        assert!(grid2.same_as(&grid));
        assert_eq!(f2.values(), f.values());
    }

    #[test]
    fn field_dump_parser_rejects_malformed_inputs() {
        for text in [
            "",
            "3 5 2.0 limit-system\n",
            "3 5 2.0 limit-system 0 extra\n",
            "0 5 2.0 limit-system 0\n",
            "3 5 -1.0 limit-system 0\n",
            "3 5 2.0 bogus-frame 0\n",
            "3 99999 2.0 limit-system 0\n",
            "9 5 2.0 limit-system 0\n",
            "1 2 1.0 limit-system 0\n1.0\nnan\n",
            "1 2 1.0 limit-system 0\n1.0\n",
            "1 2 1.0 limit-system 0\n1.0\n2.0\n3.0\n",
            "1 2 1.0 limit-equation-x 0\n1.0\n2.0\n",
        ] {
            assert!(parse_field_dump(text).is_err(), "must reject {text:?}");
        }
        // A minimal valid dump.
        let ok = parse_field_dump("1 2 1.0 rescaled-u 0\n1.0\n-2.5e-1\n").unwrap();
        assert_eq!(ok.values, vec![1.0, -0.25]);
    }

    #[test]
    fn csv_headers_embed_schema_and_config() {
        let cfg = RunConfig::default();
        let sweep = EpsSweep {
            mode: nehari_core::study::SweepMode::DistinctCenters,
            rows: vec![],
            reference_energies: vec![1.0],
            reference_total: 1.0,
        };
        let csv = eps_sweep_csv(&cfg, &sweep);
        assert!(csv.starts_with(&format!("# schema = eps-sweep/{SCHEMA_VERSION}\n")));
        assert!(csv.contains("# [problem]"));
        assert!(csv.contains("eps,i,energy_total,energy_i,mass_term_i,w_dist_i,v_norm1_sq_i,d0"));
    }
}
