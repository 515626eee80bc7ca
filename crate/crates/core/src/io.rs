//! Plain-text containers for matrices, problem instances and network checkpoints.
//!
//! A matrix block is a `rows cols` line followed by one line per row of
//! whitespace-separated floats. Floats are written in shortest round-trip
//! form, so reading back reproduces every value exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DeepNet, NetDims, Parameterization};
use crate::numkit::Mat;
use crate::problem::{self, ProblemInstance};

const INSTANCE_MAGIC: &str = "subspace-gd instance v1";
const NET_MAGIC: &str = "subspace-gd net v1";

pub fn write_matrix<W: Write>(out: &mut W, m: &Mat) -> Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn next_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Parse("unexpected end of input".into()));
        }
        if !line.trim().is_empty() {
            return Ok(line.trim().to_string());
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse(format!("bad {what} '{tok}'")))
}

pub fn read_matrix<R: BufRead>(input: &mut R) -> Result<Mat> {
    let header = next_line(input)?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::Parse(format!("expected 'rows cols', got '{header}'")));
    }
    let rows: usize = parse_num(dims[0], "row count")?;
    let cols: usize = parse_num(dims[1], "column count")?;
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        let line = next_line(input)?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(Error::Parse(format!("row {i} has {} entries, expected {cols}", vals.len())));
        }
        for (j, v) in vals.iter().enumerate() {
            m[(i, j)] = parse_num(v, "matrix entry")?;
        }
    }
    Ok(m)
}

fn expect_line<R: BufRead>(input: &mut R, expected: &str) -> Result<()> {
    let line = next_line(input)?;
    if line != expected {
        return Err(Error::Parse(format!("expected '{expected}', got '{line}'")));
    }
    Ok(())
}

/// Stores `A`, `R`, `Z` and the generation metadata; `X` and `Y` are rebuilt on load.
pub fn write_instance<W: Write>(out: &mut W, inst: &ProblemInstance) -> Result<()> {
    writeln!(out, "{INSTANCE_MAGIC}")?;
    writeln!(out, "kappa {:e}", inst.kappa_target)?;
    writeln!(out, "seed {}", inst.seed)?;
    for (name, m) in [("A", &inst.a), ("R", &inst.r), ("Z", &inst.z)] {
        writeln!(out, "{name}")?;
        write_matrix(out, m)?;
    }
    Ok(())
}

fn keyed<R: BufRead>(input: &mut R, key: &str) -> Result<String> {
    let line = next_line(input)?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v.trim().to_string()),
        _ => Err(Error::Parse(format!("expected '{key} <value>', got '{line}'"))),
    }
}

pub fn read_instance<R: BufRead>(input: &mut R) -> Result<ProblemInstance> {
    expect_line(input, INSTANCE_MAGIC)?;
    let kappa: f64 = parse_num(&keyed(input, "kappa")?, "kappa")?;
    let seed: u64 = parse_num(&keyed(input, "seed")?, "seed")?;
    expect_line(input, "A")?;
    let a = read_matrix(input)?;
    expect_line(input, "R")?;
    let r = read_matrix(input)?;
    expect_line(input, "Z")?;
    let z = read_matrix(input)?;
    problem::assemble_with_meta(a, r, z, kappa, seed)
}

pub fn write_net<W: Write>(out: &mut W, net: &DeepNet) -> Result<()> {
    let d = net.dims();
    writeln!(out, "{NET_MAGIC}")?;
    writeln!(
        out,
        "depth {} input {} width {} output {} mode {} relu {}",
        d.depth,
        d.input,
        d.width,
        d.output,
        net.mode().as_str(),
        net.is_relu()
    )?;
    for w in &net.weights {
        write_matrix(out, w)?;
    }
    Ok(())
}

pub fn read_net<R: BufRead>(input: &mut R) -> Result<DeepNet> {
    expect_line(input, NET_MAGIC)?;
    let header = next_line(input)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let field = |key: &str| -> Result<&str> {
        toks.chunks(2)
            .find(|kv| kv.len() == 2 && kv[0] == key)
            .map(|kv| kv[1])
            .ok_or_else(|| Error::Parse(format!("network header lacks '{key}'")))
    };
    let dims = NetDims::new(
        parse_num(field("depth")?, "depth")?,
        parse_num(field("input")?, "input")?,
        parse_num(field("width")?, "width")?,
        parse_num(field("output")?, "output")?,
    )?;
    let mode: Parameterization = field("mode")?.parse()?;
    let relu: bool = parse_num(field("relu")?, "relu flag")?;
    let weights = (0..dims.depth).map(|_| read_matrix(input)).collect::<Result<Vec<_>>>()?;
    DeepNet::new(dims, weights, mode, relu)
}

pub fn save_net(path: &Path, net: &DeepNet) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_net(&mut f, net)?;
    f.flush()?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<DeepNet> {
    read_net(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_instance(path: &Path, inst: &ProblemInstance) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_instance(&mut f, inst)?;
    f.flush()?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    read_instance(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
