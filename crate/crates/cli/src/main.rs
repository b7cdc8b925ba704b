use std::fmt::Write as _;
use std::io::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use prestable::identities;
use prestable::relations::chow_rank;
use prestable::stable::image_rank;
use prestable::strata::{hilbert_coefficients, SubstackSpec};

#[derive(Parser, Debug)]
#[command(
    name = "prestable",
    version,
    about = "Chow ranks, Hilbert series and identity checks for genus-0 prestable curves"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ranks of the Chow groups over a grid of markings and codimensions.
    Ranks {
        #[arg(long, default_value_t = 0)]
        n_min: usize,
        #[arg(long)]
        n_max: usize,
        #[arg(long, default_value_t = 0)]
        d_min: u32,
        #[arg(long)]
        d_max: u32,
        /// Compute only these cells, e.g. "(0,5),(3,4)"; the rest stay blank.
        #[arg(long)]
        only: Option<String>,
    },
    /// Hilbert series coefficients of an open substack.
    Hilbert {
        #[arg(long)]
        n: usize,
        /// max-edges:E, stable, chains, marked-chains or all.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        d_max: u32,
    },
    /// Runs the built-in identity checks.
    Verify {
        /// Run only the named check.
        #[arg(long)]
        only: Option<String>,
        /// List the checks and exit.
        #[arg(long)]
        list: bool,
    },
    /// Ranks of the pullbacks along the forgetful charts to stable spaces.
    PullbackRanks {
        /// Rows as "(n,d),(n,d),...".
        #[arg(long)]
        pairs: String,
        #[arg(long, default_value_t = 0)]
        m_min: usize,
        #[arg(long)]
        m_max: usize,
    },
}

enum Failure {
    Config(String),
    Compute(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Compute(_) => 1,
            Failure::Verification(_) => 3,
        }
    }
}

/// A rectangular table with optional cells.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Option<String>>>,
}

impl Table {
    fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<&str> = r.iter().map(|c| c.as_deref().unwrap_or("")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    fn text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].as_deref().map_or(0, str::len))
                    .chain([self.header[i].len()])
                    .max()
                    .unwrap()
            })
            .collect();
        let mut s = String::new();
        let line = |cells: Vec<&str>, s: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        };
        line(self.header.iter().map(String::as_str).collect(), &mut s);
        for r in &self.rows {
            line(
                r.iter().map(|c| c.as_deref().unwrap_or("")).collect(),
                &mut s,
            );
        }
        s
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, u32)>, Failure> {
    let bad = || {
        Failure::Config(format!(
            "cannot parse pair list `{s}`; expected \"(n,d),(n,d)\""
        ))
    };
    let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if cleaned.is_empty() {
        return Err(bad());
    }
    let mut out = Vec::new();
    for chunk in cleaned.split("),") {
        let body = chunk
            .trim_start_matches(',')
            .trim_start_matches('(')
            .trim_end_matches(')');
        let (a, b) = body.split_once(',').ok_or_else(bad)?;
        out.push((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
    }
    Ok(out)
}

fn progress(msg: String) {
    eprintln!("{msg}");
}

fn cmd_ranks(
    n_min: usize,
    n_max: usize,
    d_min: u32,
    d_max: u32,
    only: Option<&str>,
) -> Result<(Table, Value), Failure> {
    if n_min > n_max || d_min > d_max {
        return Err(Failure::Config("empty marking or codimension range".into()));
    }
    let cells = only.map(parse_pairs).transpose()?;
    let wanted = |n: usize, d: u32| cells.as_ref().is_none_or(|c| c.contains(&(n, d)));
    let mut header = vec!["d".to_string()];
    header.extend((n_min..=n_max).map(|n| format!("n={n}")));
    let mut rows = Vec::new();
    let mut json_cells = Vec::new();
    for d in d_min..=d_max {
        let t = Instant::now();
        let mut row = vec![Some(d.to_string())];
        for n in n_min..=n_max {
            if !wanted(n, d) {
                row.push(None);
                continue;
            }
            let r =
                chow_rank(n, d, &SubstackSpec::All).map_err(|e| Failure::Compute(e.to_string()))?;
            json_cells.push(json!({"n": n, "d": d, "rank": r}));
            row.push(Some(r.to_string()));
        }
        progress(format!(
            "ranks: codimension {d} done in {:.2?}",
            t.elapsed()
        ));
        rows.push(row);
    }
    Ok((Table { header, rows }, json!({"ranks": json_cells})))
}

fn cmd_hilbert(n: usize, spec: &str, d_max: u32) -> Result<(Table, Value), Failure> {
    let parsed = SubstackSpec::parse(spec)
        .ok_or_else(|| Failure::Config(format!("unknown substack spec `{spec}`")))?;
    let t = Instant::now();
    let coeffs =
        hilbert_coefficients(n, &parsed, d_max).map_err(|e| Failure::Compute(e.to_string()))?;
    progress(format!(
        "hilbert: {} on {n} markings to degree {d_max} in {:.2?}",
        parsed.name(),
        t.elapsed()
    ));
    let rows = coeffs
        .iter()
        .enumerate()
        .map(|(d, c)| vec![Some(d.to_string()), Some(c.to_string())])
        .collect();
    let table = Table {
        header: vec!["d".into(), "rank".into()],
        rows,
    };
    Ok((
        table,
        json!({"n": n, "spec": parsed.name(), "coefficients": coeffs}),
    ))
}

fn cmd_verify(only: Option<&str>, list: bool) -> Result<(Table, Value, bool), Failure> {
    let header = vec![
        "check".to_string(),
        "status".to_string(),
        "detail".to_string(),
    ];
    if list {
        let all = identities::checks();
        let rows = all
            .iter()
            .map(|c| {
                vec![
                    Some(c.name.to_string()),
                    None,
                    Some(c.description.to_string()),
                ]
            })
            .collect();
        let v: Vec<Value> = all
            .iter()
            .map(|c| json!({"check": c.name, "description": c.description}))
            .collect();
        return Ok((Table { header, rows }, json!({"checks": v}), true));
    }
    let results = identities::run(only).map_err(Failure::Config)?;
    let mut rows = Vec::new();
    let mut v = Vec::new();
    let mut all_ok = true;
    for (name, r) in results {
        let (status, detail) = match &r {
            Ok(()) => ("PASS", String::new()),
            Err(e) => ("FAIL", e.replace(',', ";")),
        };
        all_ok &= r.is_ok();
        progress(format!("verify: {name} {status}"));
        v.push(json!({"check": name, "status": status, "detail": detail}));
        rows.push(vec![
            Some(name.to_string()),
            Some(status.to_string()),
            (!detail.is_empty()).then_some(detail),
        ]);
    }
    Ok((
        Table { header, rows },
        json!({"checks": v, "passed": all_ok}),
        all_ok,
    ))
}

fn cmd_pullback_ranks(pairs: &str, m_min: usize, m_max: usize) -> Result<(Table, Value), Failure> {
    if m_min > m_max {
        return Err(Failure::Config("empty range of forgotten markings".into()));
    }
    let pairs = parse_pairs(pairs)?;
    let mut header = vec!["n".to_string(), "d".to_string(), "chow_rank".to_string()];
    header.extend((m_min..=m_max).map(|m| format!("m={m}")));
    header.push("saturated_from".into());
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for (n, d) in pairs {
        let full =
            chow_rank(n, d, &SubstackSpec::All).map_err(|e| Failure::Compute(e.to_string()))?;
        let mut row = vec![
            Some(n.to_string()),
            Some(d.to_string()),
            Some(full.to_string()),
        ];
        let mut cells = Vec::new();
        let mut saturated = None;
        for m in m_min..=m_max {
            // cells below stability or above the dimension stay blank
            if n + m < 3 || d as usize > n + m - 3 {
                row.push(None);
                continue;
            }
            let t = Instant::now();
            let r = image_rank(n, d, m).map_err(|e| Failure::Compute(e.to_string()))?;
            progress(format!(
                "pullback-ranks: ({n},{d}) m={m} rank {r} in {:.2?}",
                t.elapsed()
            ));
            if r == full && saturated.is_none() {
                saturated = Some(m);
            }
            cells.push(json!({"m": m, "rank": r, "saturated": r == full}));
            row.push(Some(r.to_string()));
        }
        row.push(saturated.map(|m| m.to_string()));
        json_rows.push(
            json!({"n": n, "d": d, "chow_rank": full, "cells": cells, "saturated_from": saturated}),
        );
        rows.push(row);
    }
    Ok((Table { header, rows }, json!({"rows": json_rows})))
}

fn render(format: Format, table: &Table, value: &Value) -> String {
    match format {
        Format::Csv => table.csv(),
        Format::Text => table.text(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(value).expect("serializable");
            s.push('\n');
            s
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let mut verification = None;
    let (table, value) = match &cli.command {
        Command::Ranks {
            n_min,
            n_max,
            d_min,
            d_max,
            only,
        } => cmd_ranks(*n_min, *n_max, *d_min, *d_max, only.as_deref())?,
        Command::Hilbert { n, spec, d_max } => cmd_hilbert(*n, spec, *d_max)?,
        Command::Verify { only, list } => {
            let (t, v, ok) = cmd_verify(only.as_deref(), *list)?;
            verification = Some(ok);
            (t, v)
        }
        Command::PullbackRanks {
            pairs,
            m_min,
            m_max,
        } => cmd_pullback_ranks(pairs, *m_min, *m_max)?,
    };
    let text = render(cli.format, &table, &value);
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Failure::Compute(e.to_string()))?;
        }
    }
    if verification == Some(false) {
        return Err(Failure::Verification("some identity checks failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Compute(m) | Failure::Verification(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
