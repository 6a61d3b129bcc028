//! Columnar text format for regression problems.
//!
//! Layout: a `# sparselab problem v1` banner, header lines (`n`, `p`,
//! `sigma`, `family`, `seed`, `normalization`), then `X` followed by n
//! row-major lines, `y` and `beta` as one line each, and `groups G` with one
//! line of indices per group. Numbers carry 17 significant digits so doubles
//! round-trip exactly.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{
    DesignMatrix, GroundTruth, GroupStructure, NoiseFamily, NoiseModel, Normalization,
    RegressionProblem,
};

const BANNER: &str = "# sparselab problem v1";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_problem<W: Write>(
    w: &mut W,
    problem: &RegressionProblem,
    groups: Option<&GroupStructure>,
) -> Result<()> {
    let x = &problem.x;
    writeln!(w, "{BANNER}")?;
    writeln!(w, "n {}", x.n())?;
    writeln!(w, "p {}", x.p())?;
    writeln!(w, "sigma {}", fmt_f64(problem.noise.sigma))?;
    writeln!(w, "family {}", problem.noise.family.as_str())?;
    writeln!(w, "seed {}", problem.seed)?;
    writeln!(w, "normalization {}", x.normalization().as_str())?;
    writeln!(w, "X")?;
    for row in x.values().rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    writeln!(w, "y")?;
    let line: Vec<String> = problem.y.iter().map(|&v| fmt_f64(v)).collect();
    writeln!(w, "{}", line.join(" "))?;
    writeln!(w, "beta")?;
    let line: Vec<String> = problem.truth.beta_star.iter().map(|&v| fmt_f64(v)).collect();
    writeln!(w, "{}", line.join(" "))?;
    match groups {
        Some(structure) => {
            writeln!(w, "groups {}", structure.count())?;
            for g in structure.groups() {
                let line: Vec<String> = g.iter().map(|j| j.to_string()).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        None => writeln!(w, "groups 0")?,
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: msg.into(),
    }
}

struct Lines<'a, R: BufRead> {
    reader: &'a mut R,
    lineno: usize,
}

impl<'a, R: BufRead> Lines<'a, R> {
    fn next(&mut self) -> Result<String> {
        let mut buf = String::new();
        let read = self.reader.read_line(&mut buf)?;
        if read == 0 {
            return Err(parse_err(self.lineno + 1, "unexpected end of file"));
        }
        self.lineno += 1;
        Ok(buf.trim_end().to_string())
    }

    fn expect_kv(&mut self, key: &str) -> Result<String> {
        let line = self.next()?;
        let mut it = line.splitn(2, ' ');
        let k = it.next().unwrap_or_default();
        if k != key {
            return Err(parse_err(self.lineno, format!("expected `{key}`, found `{k}`")));
        }
        it.next()
            .map(|v| v.to_string())
            .ok_or_else(|| parse_err(self.lineno, format!("`{key}` needs a value")))
    }

    fn floats(&mut self, expect: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| parse_err(self.lineno, format!("bad float: {e}")))?;
        if vals.len() != expect {
            return Err(parse_err(
                self.lineno,
                format!("expected {expect} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

pub fn read_problem<R: BufRead>(
    reader: &mut R,
) -> Result<(RegressionProblem, Option<GroupStructure>)> {
    let mut lines = Lines { reader, lineno: 0 };
    let banner = lines.next()?;
    if banner != BANNER {
        return Err(parse_err(1, format!("expected `{BANNER}`")));
    }
    let n: usize = lines
        .expect_kv("n")?
        .parse()
        .map_err(|e| parse_err(lines.lineno, format!("bad n: {e}")))?;
    let p: usize = lines
        .expect_kv("p")?
        .parse()
        .map_err(|e| parse_err(lines.lineno, format!("bad p: {e}")))?;
    let sigma: f64 = lines
        .expect_kv("sigma")?
        .parse()
        .map_err(|e| parse_err(lines.lineno, format!("bad sigma: {e}")))?;
    let family = NoiseFamily::parse(&lines.expect_kv("family")?)?;
    let seed: u64 = lines
        .expect_kv("seed")?
        .parse()
        .map_err(|e| parse_err(lines.lineno, format!("bad seed: {e}")))?;
    let normalization = Normalization::parse(&lines.expect_kv("normalization")?)?;

    if lines.next()? != "X" {
        return Err(parse_err(lines.lineno, "expected `X`"));
    }
    let mut values = Array2::zeros((n, p));
    for i in 0..n {
        let row = lines.floats(p)?;
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    if lines.next()? != "y" {
        return Err(parse_err(lines.lineno, "expected `y`"));
    }
    let y = Array1::from_vec(lines.floats(n)?);
    if lines.next()? != "beta" {
        return Err(parse_err(lines.lineno, "expected `beta`"));
    }
    let beta = Array1::from_vec(lines.floats(p)?);

    let g_count: usize = lines
        .expect_kv("groups")?
        .parse()
        .map_err(|e| parse_err(lines.lineno, format!("bad group count: {e}")))?;
    let groups = if g_count > 0 {
        let mut raw = Vec::with_capacity(g_count);
        for _ in 0..g_count {
            let line = lines.next()?;
            let idx: std::result::Result<Vec<usize>, _> =
                line.split_whitespace().map(str::parse::<usize>).collect();
            raw.push(idx.map_err(|e| parse_err(lines.lineno, format!("bad index: {e}")))?);
        }
        Some(GroupStructure::new(raw, p)?)
    } else {
        None
    };

    let x = DesignMatrix::new(values, normalization)?;
    let truth = GroundTruth::from_beta(beta, groups.as_ref())?;
    let noise = NoiseModel::new(family, sigma)?;
    Ok((
        RegressionProblem {
            x,
            y,
            truth,
            noise,
            seed,
        },
        groups,
    ))
}
