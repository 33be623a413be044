//! Turn trace CSVs and final clouds into gnuplot-ready column files.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use wflow_core::measures::read_cloud_csv_path;
use wflow_core::schemes::Trace;

/// Write a two-column `iter objective` file from a trace CSV, one output
/// row per trace record. With `cloud`, also write the final particle
/// positions as a space-separated scatter file at `<out>.scatter`.
/// `log_scale` only annotates the header metadata; values are never
/// transformed.
pub fn emit_plotdata(
    trace_path: &Path,
    out_path: &Path,
    cloud: Option<&Path>,
    log_scale: bool,
) -> Result<()> {
    let records = Trace::read_csv_records(
        std::fs::File::open(trace_path)
            .with_context(|| format!("cannot open trace {}", trace_path.display()))?,
    )
    .with_context(|| format!("malformed trace {}", trace_path.display()))?;

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(out_path)
            .with_context(|| format!("cannot create {}", out_path.display()))?,
    );
    writeln!(out, "# objective trace from {}", trace_path.display())?;
    writeln!(out, "# columns: iter objective")?;
    writeln!(out, "# suggested-scale: {}", if log_scale { "log" } else { "linear" })?;
    for r in &records {
        writeln!(out, "{} {:.16e}", r.iter, r.objective)?;
    }
    out.flush()?;

    if let Some(cloud_path) = cloud {
        let cloud = read_cloud_csv_path(cloud_path)
            .with_context(|| format!("cannot read cloud {}", cloud_path.display()))?;
        let scatter_path = {
            let mut s = out_path.as_os_str().to_owned();
            s.push(".scatter");
            std::path::PathBuf::from(s)
        };
        let mut scatter = std::io::BufWriter::new(std::fs::File::create(&scatter_path)?);
        writeln!(scatter, "# final particle positions from {}", cloud_path.display())?;
        for i in 0..cloud.len() {
            let row: Vec<String> = cloud
                .positions()
                .row(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(scatter, "{}", row.join(" "))?;
        }
        scatter.flush()?;
    }
    Ok(())
}
