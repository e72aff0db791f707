//! MPS fixed-format export.
//!
//! Writes ROWS/COLUMNS/RHS/BOUNDS sections with eight-character generated
//! names and integer markers around the binary block, one coefficient per
//! line. Output is a pure function of the model, byte for byte, which makes
//! exported files diffable and lets external solvers cross-check results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::milp::{MilpModel, RowSense};

fn row_name(i: usize) -> String {
    format!("R{i:07}")
}

fn col_name(j: usize) -> String {
    format!("C{j:07}")
}

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

/// Writes the model in MPS fixed format.
pub fn write_mps(model: &MilpModel, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "NAME          IBP")?;
    writeln!(out, "ROWS")?;
    writeln!(out, " N  COST")?;
    for (i, row) in model.rows.iter().enumerate() {
        let tag = match row.sense {
            RowSense::Le => "L",
            RowSense::Eq => "E",
            RowSense::Ge => "G",
        };
        writeln!(out, " {}  {}", tag, row_name(i))?;
    }

    // Column-major view of the coefficients.
    let ncols = model.variables.len();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
    for (i, row) in model.rows.iter().enumerate() {
        for &(j, a) in &row.terms {
            columns[j].push((i, a));
        }
    }
    let mut objective = vec![0.0; ncols];
    for &(j, c) in &model.objective {
        objective[j] = c;
    }

    writeln!(out, "COLUMNS")?;
    let mut in_integer_block = false;
    for j in 0..ncols {
        let var = &model.variables[j];
        if var.binary && !in_integer_block {
            writeln!(
                out,
                "    MARKER                 'MARKER'                 'INTORG'"
            )?;
            in_integer_block = true;
        }
        if !var.binary && in_integer_block {
            writeln!(
                out,
                "    MARKER                 'MARKER'                 'INTEND'"
            )?;
            in_integer_block = false;
        }
        let name = col_name(j);
        if objective[j] != 0.0 {
            writeln!(out, "    {name:<10}COST      {:>12}", num(objective[j]))?;
        }
        for &(i, a) in &columns[j] {
            writeln!(out, "    {name:<10}{:<10}{:>12}", row_name(i), num(a))?;
        }
    }
    if in_integer_block {
        writeln!(
            out,
            "    MARKER                 'MARKER'                 'INTEND'"
        )?;
    }

    writeln!(out, "RHS")?;
    for (i, row) in model.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            writeln!(out, "    RHS       {:<10}{:>12}", row_name(i), num(row.rhs))?;
        }
    }

    writeln!(out, "BOUNDS")?;
    for (j, var) in model.variables.iter().enumerate() {
        let name = col_name(j);
        if var.binary {
            writeln!(out, " UP BND       {name:<10}{:>12}", num(1.0))?;
            continue;
        }
        let lo = var.lower;
        let up = var.upper;
        if lo == up {
            writeln!(out, " FX BND       {name:<10}{:>12}", num(lo))?;
            continue;
        }
        if lo == f64::NEG_INFINITY && up == f64::INFINITY {
            writeln!(out, " FR BND       {name:<10}")?;
            continue;
        }
        if lo == f64::NEG_INFINITY {
            writeln!(out, " MI BND       {name:<10}")?;
        } else if lo != 0.0 {
            writeln!(out, " LO BND       {name:<10}{:>12}", num(lo))?;
        }
        if up != f64::INFINITY {
            writeln!(out, " UP BND       {name:<10}{:>12}", num(up))?;
        }
    }
    writeln!(out, "ENDATA")?;
    Ok(())
}

/// Writes the model to a file at `path`.
pub fn export_exchange_format(model: &MilpModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_mps(model, &mut w)?;
    w.flush()?;
    Ok(())
}
