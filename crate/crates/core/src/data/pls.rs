//! `.pls` labeled point sets and `.plp` predictions.
//!
//! ```text
//! PLS 1
//! N K
//! c1 … cK
//! x y z s1 i1 … sK iK        (N lines)
//! ```
//!
//! Coordinates carry 9 significant digits, labels are 1-based, instance ids
//! non-negative. Ground-truth offsets are not stored; they are recomputed
//! from the labels on read. `.plp` uses the header `PLP 1` and appends one
//! confidence column per level (`f1 … fK`, the confidence of the point's
//! instance at that level).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::shape::{LabeledShape, LevelLabels, Point};
use crate::cluster::{InstanceInfo, InstancePrediction, LevelPrediction};
use crate::error::{Error, Result};

fn push_point(out: &mut String, p: &Point) {
    write!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]).expect("write to String");
}

fn header(out: &mut String, magic: &str, n: usize, classes: &[usize]) {
    let cs: Vec<String> = classes.iter().map(usize::to_string).collect();
    writeln!(out, "{magic} 1\n{n} {}\n{}", classes.len(), cs.join(" ")).expect("write to String");
}

pub fn write_pls(shape: &LabeledShape) -> String {
    let mut out = String::new();
    header(&mut out, "PLS", shape.num_points(), &shape.class_counts());
    for (i, p) in shape.points.iter().enumerate() {
        push_point(&mut out, p);
        for level in &shape.levels {
            write!(out, " {} {}", level.sem[i], level.inst[i]).expect("write to String");
        }
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next line and its 1-based number; EOF reports the last line read.
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(Error::parse(
                self.last,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} {tok:?}")))
}

struct Body {
    points: Vec<Point>,
    classes: Vec<usize>,
    sem: Vec<Vec<usize>>,
    inst: Vec<Vec<usize>>,
    conf: Vec<Vec<f64>>,
}

fn parse_body(text: &str, magic: &str, with_conf: bool) -> Result<Body> {
    let mut lines = Lines::new(text);
    let (ln, l) = lines.next("header")?;
    if l.trim() != format!("{magic} 1") {
        return Err(Error::parse(
            ln,
            format!("expected header `{magic} 1`, found {l:?}"),
        ));
    }
    let (ln, l) = lines.next("`N K` line")?;
    let mut toks = l.split_whitespace();
    let n: usize = field(toks.next(), ln, "point count")?;
    let k: usize = field(toks.next(), ln, "level count")?;
    if toks.next().is_some() {
        return Err(Error::parse(ln, "trailing tokens after `N K`"));
    }
    if k == 0 {
        return Err(Error::parse(ln, "level count must be at least 1"));
    }
    let (ln, l) = lines.next("class counts")?;
    let classes: Vec<usize> = l
        .split_whitespace()
        .map(|t| field(Some(t), ln, "class count"))
        .collect::<Result<_>>()?;
    if classes.len() != k {
        return Err(Error::parse(
            ln,
            format!("expected {k} class counts, found {}", classes.len()),
        ));
    }
    let mut body = Body {
        points: Vec::with_capacity(n),
        classes,
        sem: vec![Vec::with_capacity(n); k],
        inst: vec![Vec::with_capacity(n); k],
        conf: vec![Vec::with_capacity(n); if with_conf { k } else { 0 }],
    };
    for _ in 0..n {
        let (ln, l) = lines.next(&format!("{n} point lines"))?;
        let mut toks = l.split_whitespace();
        let p: Point = [
            field(toks.next(), ln, "x")?,
            field(toks.next(), ln, "y")?,
            field(toks.next(), ln, "z")?,
        ];
        if p.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::parse(ln, "non-finite coordinate"));
        }
        body.points.push(p);
        for level in 0..k {
            let s: usize = field(toks.next(), ln, "semantic label")?;
            if s == 0 || s > body.classes[level] {
                return Err(Error::parse(
                    ln,
                    format!(
                        "label {s} out of range 1..={} at level {}",
                        body.classes[level],
                        level + 1
                    ),
                ));
            }
            body.sem[level].push(s);
            body.inst[level].push(field(toks.next(), ln, "instance id")?);
        }
        if with_conf {
            for level in 0..k {
                let c: f64 = field(toks.next(), ln, "confidence")?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::parse(ln, format!("confidence {c} outside [0, 1]")));
                }
                body.conf[level].push(c);
            }
        }
        if toks.next().is_some() {
            return Err(Error::parse(ln, "trailing tokens on point line"));
        }
    }
    if let Ok((ln, l)) = lines.next("") {
        if !l.trim().is_empty() {
            return Err(Error::parse(
                ln,
                format!("more than the declared {n} points"),
            ));
        }
    }
    Ok(body)
}

pub fn read_pls(text: &str) -> Result<LabeledShape> {
    let body = parse_body(text, "PLS", false)?;
    let levels = body
        .sem
        .into_iter()
        .zip(body.inst)
        .zip(&body.classes)
        .map(|((sem, inst), &c)| LevelLabels::new(&body.points, c, sem, inst))
        .collect::<Result<Vec<_>>>()?;
    let shape = LabeledShape {
        points: body.points,
        levels,
    };
    shape.validate()?;
    Ok(shape)
}

pub fn write_pls_file(path: impl AsRef<Path>, shape: &LabeledShape) -> Result<()> {
    fs::write(path, write_pls(shape))?;
    Ok(())
}

pub fn read_pls_file(path: impl AsRef<Path>) -> Result<LabeledShape> {
    read_pls(&fs::read_to_string(path)?)
}

/// Serializes predictions for the given points.
pub fn write_plp(points: &[Point], classes: &[usize], pred: &InstancePrediction) -> Result<String> {
    if pred.levels.len() != classes.len() {
        return Err(Error::Shape(format!(
            "{} prediction levels for {} class counts",
            pred.levels.len(),
            classes.len()
        )));
    }
    if pred
        .levels
        .iter()
        .any(|l| l.sem.len() != points.len() || l.inst.len() != points.len())
    {
        return Err(Error::Shape(
            "prediction length differs from point count".into(),
        ));
    }
    let mut out = String::new();
    header(&mut out, "PLP", points.len(), classes);
    for (i, p) in points.iter().enumerate() {
        push_point(&mut out, p);
        for level in &pred.levels {
            write!(out, " {} {}", level.sem[i], level.inst[i]).expect("write to String");
        }
        for level in &pred.levels {
            let c = level.instances[level.inst[i]].confidence;
            write!(out, " {c}").expect("write to String");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parsed `.plp`: the points, per-level class counts, and the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub points: Vec<Point>,
    pub classes: Vec<usize>,
    pub prediction: InstancePrediction,
}

pub fn read_plp(text: &str) -> Result<PredictionFile> {
    let body = parse_body(text, "PLP", true)?;
    let mut levels = Vec::with_capacity(body.classes.len());
    for ((sem, inst), conf) in body.sem.into_iter().zip(body.inst).zip(body.conf) {
        let count = inst.iter().max().map_or(0, |&m| m + 1);
        let mut instances: Vec<Option<InstanceInfo>> = vec![None; count];
        for ((&id, &s), &c) in inst.iter().zip(&sem).zip(&conf) {
            match &instances[id] {
                None => {
                    instances[id] = Some(InstanceInfo {
                        label: s,
                        confidence: c,
                    })
                }
                Some(info) if info.label != s || info.confidence != c => {
                    return Err(Error::invalid(format!(
                        "instance {id} has inconsistent label or confidence"
                    )));
                }
                Some(_) => {}
            }
        }
        let instances = instances
            .into_iter()
            .enumerate()
            .map(|(id, i)| {
                i.ok_or_else(|| Error::invalid(format!("instance ids not dense: {id} unused")))
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(LevelPrediction {
            sem,
            inst,
            instances,
        });
    }
    Ok(PredictionFile {
        points: body.points,
        classes: body.classes,
        prediction: InstancePrediction { levels },
    })
}
