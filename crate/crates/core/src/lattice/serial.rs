//! Plain-text field cache format.
//!
//! ```text
//! n=2 r=1.0000000000000000e0 m=5 kind=metric
//! 1 1.0000000000000000e0 0.0000000000000000e0 1.0000000000000000e0
//! ...
//! ```
//!
//! One line per node in row-major order: the mask flag followed by the
//! channel values, 17 significant digits each.

use std::io::{BufRead, Write};

use super::{Field, FieldKind, Lattice, MetricField, ScalarField};
use crate::error::{Error, Result};

pub fn write_field<F: Field, W: Write>(field: &F, mut w: W) -> std::io::Result<()> {
    let l = field.lattice();
    writeln!(
        w,
        "n={} r={:.16e} m={} kind={}",
        l.dim(),
        l.radius(),
        l.points_per_axis(),
        F::KIND.name()
    )?;
    let channels = field.channels();
    let mut line = String::new();
    for node in 0..l.len() {
        line.clear();
        line.push(if field.mask()[node] { '1' } else { '0' });
        for c in channels {
            line.push_str(&format!(" {:.16e}", c[node]));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn read_scalar_field<R: BufRead>(r: R) -> Result<ScalarField> {
    let (lattice, mut channels, mask) = read_raw(r, FieldKind::Scalar)?;
    ScalarField::from_values(&lattice, channels.pop().unwrap_or_default(), mask)
}

pub fn read_metric_field<R: BufRead>(r: R) -> Result<MetricField> {
    let (lattice, channels, mask) = read_raw(r, FieldKind::Metric)?;
    MetricField::from_channels(&lattice, channels, mask)
}

type Raw = (Lattice, Vec<Vec<f64>>, Vec<bool>);

fn read_raw<R: BufRead>(r: R, kind: FieldKind) -> Result<Raw> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty field file".into(),
    })?;
    let header = header?;
    let mut n = None;
    let mut radius = None;
    let mut m = None;
    let mut found_kind = None;
    for token in header.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("malformed header token '{token}'"),
        })?;
        let bad = |what: &str| Error::Parse {
            line: 1,
            msg: format!("bad {what} '{value}'"),
        };
        match key {
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad("dimension"))?),
            "r" => radius = Some(value.parse::<f64>().map_err(|_| bad("radius"))?),
            "m" => m = Some(value.parse::<usize>().map_err(|_| bad("point count"))?),
            "kind" => found_kind = Some(value.to_string()),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown header key '{key}'"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 1,
        msg: format!("header lacks {what}"),
    };
    let lattice = Lattice::new(
        n.ok_or_else(|| missing("n"))?,
        radius.ok_or_else(|| missing("r"))?,
        m.ok_or_else(|| missing("m"))?,
    )?;
    let found_kind = found_kind.ok_or_else(|| missing("kind"))?;
    if found_kind != kind.name() {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected a {} field, found '{found_kind}'", kind.name()),
        });
    }
    let channel_count = match kind {
        FieldKind::Scalar => 1,
        FieldKind::Metric => crate::linalg::sym_len(lattice.dim()),
    };
    let mut channels = vec![Vec::with_capacity(lattice.len()); channel_count];
    let mut mask = Vec::with_capacity(lattice.len());
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if mask.len() == lattice.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: "more node lines than the header declares".into(),
            });
        }
        let mut tokens = line.split_whitespace();
        let flag = tokens.next().unwrap_or("");
        mask.push(match flag {
            "1" => true,
            "0" => false,
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad mask flag '{flag}'"),
                })
            }
        });
        for c in channels.iter_mut() {
            let tok = tokens.next().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "too few values".into(),
            })?;
            c.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad value '{tok}'"),
            })?);
        }
        if tokens.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                msg: "too many values".into(),
            });
        }
    }
    if mask.len() != lattice.len() {
        return Err(Error::Parse {
            line: mask.len() + 2,
            msg: format!(
                "expected {} node lines, found {}",
                lattice.len(),
                mask.len()
            ),
        });
    }
    Ok((lattice, channels, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_round_trip_is_bit_exact() {
        let l = Lattice::new(2, 0.7, 7).unwrap();
        let g = MetricField::sample(&l, |x, g| {
            g[0] = 1.0 + x[0].sin().powi(2) / 3.0;
            g[1] = 0.1 * x[0] * x[1];
            g[2] = g[1];
            g[3] = (x[1] / 7.0).exp();
        })
        .unwrap()
        .restrict(&l.ball_mask(0.6));
        let mut buf = Vec::new();
        write_field(&g, &mut buf).unwrap();
        let back = read_metric_field(buf.as_slice()).unwrap();
        assert_eq!(back.mask(), g.mask());
        assert_eq!(back.channels(), g.channels());
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        let mut buf = Vec::new();
        write_field(&ScalarField::constant(&l, 2.0), &mut buf).unwrap();
        assert!(read_metric_field(buf.as_slice()).is_err());
        let f = read_scalar_field(buf.as_slice()).unwrap();
        assert_eq!(f.values()[3], 2.0);
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = "n=2 r=1 m=5 kind=scalar\n1 0.5\n";
        match read_scalar_field(text.as_bytes()).unwrap_err() {
            Error::Parse { msg, .. } => assert!(msg.contains("expected 25")),
            e => panic!("{e}"),
        }
    }
}
