//! Atomic file outputs and the plot-ready CSV.

use crate::{CliError, CliResult};
use seisnet::data::Trace;
use seisnet::detect::Detection;
use std::io::Write;
use std::path::Path;

/// Writes a file atomically: the payload lands in a temp file in the same
/// directory and is renamed into place, so readers never see a partial
/// file.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> seisnet::Result<()>,
) -> CliResult {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| CliError::runtime(format!("cannot create temp file near {path:?}: {e}")))?;
    write(tmp.as_file_mut())
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    tmp.flush()
        .map_err(|e| CliError::runtime(format!("flushing {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::runtime(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

/// Plot-ready CSV: one row per trace sample, with a 0/1 flag marking
/// samples covered by a deduped detection window.
pub fn write_plot_csv<W: Write>(
    trace: &Trace,
    detections: &[Detection],
    mut sink: W,
) -> seisnet::Result<()> {
    let mut flags = vec![0u8; trace.len()];
    for d in detections {
        for f in &mut flags[d.start..d.end.min(trace.len())] {
            *f = 1;
        }
    }
    writeln!(sink, "timestamp,amplitude,detection")?;
    let mut buf = std::io::BufWriter::new(&mut sink);
    for (t, (&a, &f)) in trace.samples.iter().zip(&flags).enumerate() {
        writeln!(buf, "{t},{a},{f}")?;
    }
    Ok(())
}
