//! Latent-code CSV: a `frame_id,phi_1,...,phi_K` header, then one row per
//! frame with reals printed to 17 significant digits.

use std::io::{self, Write};

pub fn write_csv<W: Write>(w: &mut W, rows: &[(usize, Vec<f64>)]) -> io::Result<()> {
    let k = rows.first().map_or(0, |(_, c)| c.len());
    write!(w, "frame_id")?;
    for i in 1..=k {
        write!(w, ",phi_{i}")?;
    }
    writeln!(w)?;
    for (id, code) in rows {
        write!(w, "{id}")?;
        for v in code {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses a file written by [`write_csv`].
pub fn read_csv(text: &str) -> Result<Vec<(usize, Vec<f64>)>, String> {
    let mut lines = text.lines();
    lines.next().ok_or("empty latent file")?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut fields = line.split(',');
            let id = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| format!("line {}: bad frame id", i + 2))?;
            let code = fields
                .map(|f| f.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2)))
                .collect::<Result<_, _>>()?;
            Ok((id, code))
        })
        .collect()
}
