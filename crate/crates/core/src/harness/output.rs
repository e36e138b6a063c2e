use std::fmt::Write as _;
use std::path::Path;

use super::{ResultRow, Scenario};
use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Column order of the results CSV, one field of [`ResultRow`] each.
pub const CSV_COLUMNS: [&str; 28] = [
    "schema_version",
    "scenario",
    "mode",
    "backend",
    "config_digest",
    "seed",
    "d",
    "n_select",
    "clients",
    "rounds",
    "constraints",
    "key_bytes",
    "proof_bytes",
    "prove_ms",
    "prove_ms_min",
    "prove_ms_max",
    "verify_ms",
    "verify_ms_min",
    "verify_ms_max",
    "round_accuracies",
    "final_accuracy",
    "upload_bytes",
    "report_bytes",
    "proof_bytes_total",
    "adversaries_aggregated",
    "swapper_selections",
    "swapper_removals",
    "rejected_reports",
];

/// Wall-clock columns; every other column is a pure function of the config.
pub const NONDETERMINISTIC_COLUMNS: [&str; 6] =
    ["prove_ms", "prove_ms_min", "prove_ms_max", "verify_ms", "verify_ms_min", "verify_ms_max"];

fn non_empty(rows: &[ResultRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no result rows to write".into()));
    }
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    non_empty(rows)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected CSV header {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn col(name: &str) -> usize {
    CSV_COLUMNS.iter().position(|c| *c == name).expect("known column") + 1
}

/// Gnuplot script drawing the figures the rows can feed: size and time
/// against `d`, final accuracy against `N`, and per-round Veri against Rand
/// curves. It reads `results.csv` beside itself unless `csv` is set with
/// `gnuplot -e "csv='other.csv'"`.
pub fn emit_plot_script(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    non_empty(rows)?;
    let has = |s: Scenario| rows.iter().any(|r| r.scenario == s);
    let mut g = String::new();
    let filter = |s: Scenario, column: &str| format!("(strcol({}) eq \"{s}\" ? column({}) : NaN)", col("scenario"), col(column));
    writeln!(g, "# generated by vcsfl; regenerate with `vcsfl run`").unwrap();
    writeln!(g, "if (!exists(\"csv\")) csv = \"results.csv\"").unwrap();
    writeln!(g, "set datafile separator \",\"").unwrap();
    writeln!(g, "set key autotitle columnhead").unwrap();
    writeln!(g, "set terminal pngcairo size 800,560").unwrap();
    writeln!(g, "set grid").unwrap();

    if has(Scenario::CircuitScaling) {
        let d = filter(Scenario::CircuitScaling, "d");
        writeln!(g, "\nset output \"fig_a_size.png\"").unwrap();
        writeln!(g, "set title \"Key and proof size vs model size\"\nset logscale xy\nset xlabel \"d\"\nset ylabel \"bytes\"").unwrap();
        writeln!(
            g,
            "plot csv using {d}:{} with linespoints title \"proving/verification key\", \\\n     csv using {d}:{} with linespoints title \"proof (replay backend)\", \\\n     csv using {d}:{} with linespoints title \"constraints\"",
            col("key_bytes"),
            col("proof_bytes"),
            col("constraints"),
        )
        .unwrap();
        writeln!(g, "\nset output \"fig_b_time.png\"").unwrap();
        writeln!(g, "set title \"Prove and verify time vs model size\"\nset ylabel \"ms (median, min-max)\"").unwrap();
        writeln!(
            g,
            "plot csv using {d}:{}:{}:{} with yerrorlines title \"prove\", \\\n     csv using {d}:{}:{}:{} with yerrorlines title \"verify\"",
            col("prove_ms"),
            col("prove_ms_min"),
            col("prove_ms_max"),
            col("verify_ms"),
            col("verify_ms_min"),
            col("verify_ms_max"),
        )
        .unwrap();
        writeln!(g, "unset logscale").unwrap();
    }

    if has(Scenario::SelectionSweep) {
        writeln!(g, "\nset output \"fig_c_accuracy_vs_n.png\"").unwrap();
        writeln!(g, "set title \"Final accuracy vs N (mean over seeds)\"\nset xlabel \"N\"\nset ylabel \"test accuracy\"").unwrap();
        writeln!(
            g,
            "plot csv using {}:{} smooth unique with linespoints title \"Veri-CS-FL\"",
            filter(Scenario::SelectionSweep, "n_select"),
            col("final_accuracy"),
        )
        .unwrap();
    }

    if has(Scenario::VeriVsRand) {
        let n = rows.iter().filter(|r| r.scenario == Scenario::VeriVsRand).filter_map(|r| r.n_select).min().unwrap_or(4);
        let curve = |mode: &str| {
            format!(
                "\"< awk -F, -v m={mode} -v n={n} 'NR>1 && ${sc}==\\\"{scen}\\\" && ${mc}==m && ${nc}==n {{ k=split(${ac},a,\\\";\\\"); for(i=1;i<=k;i++){{s[i]+=a[i];c[i]++}}; if(k>K)K=k }} END {{ for(i=1;i<=K;i++) print i, s[i]/c[i] }}' \".csv",
                sc = col("scenario"),
                scen = Scenario::VeriVsRand,
                mc = col("mode"),
                nc = col("n_select"),
                ac = col("round_accuracies"),
            )
        };
        writeln!(g, "\nset output \"fig_d_veri_vs_rand.png\"").unwrap();
        writeln!(g, "set datafile separator whitespace\nset key noautotitle").unwrap();
        writeln!(g, "set title \"Veri-CS-FL vs Rand-CS-FL, N = {n}\"\nset xlabel \"round\"\nset ylabel \"test accuracy\"").unwrap();
        writeln!(
            g,
            "plot {} using 1:2 with linespoints title \"Veri-CS-FL\", \\\n     {} using 1:2 with linespoints title \"Rand-CS-FL\"",
            curve("veri"),
            curve("rand"),
        )
        .unwrap();
    }
    std::fs::write(path, g)?;
    Ok(())
}
