//! Plain-text problem files.
//!
//! ```text
//! RIGBA 1
//! STREAM <id> <focal> <cx> <cy> <k1> <k2>
//! IMAGE <id> <stream_id> <time_index> <rx> <ry> <rz> <cx> <cy> <cz>
//! LANDMARK <id> <x> <y> <z>
//! OBS <image_id> <landmark_id> <u> <v>
//! RIG_PAIR <time_index> <image_id_a> <image_id_b>
//! ```
//!
//! Rotations are world-to-camera axis-angle vectors, centers are in world
//! coordinates. Lines starting with `#` are comments. Floats are written in
//! their shortest round-trip form, so reading a written file reproduces every
//! value exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, Rotation};
use crate::problem::{Image, ImageId, LandmarkId, Observation, RigPair, RigProblem, StreamId};

pub const FORMAT_HEADER: &str = "RIGBA 1";

/// Serializes the registered part of a problem: images without a pose,
/// landmarks without a position, and records referring to them are omitted.
pub fn render_problem(problem: &RigProblem) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    for (id, k) in &problem.streams {
        let [f, cx, cy, k1, k2] = k.to_array();
        writeln!(out, "STREAM {id} {f:?} {cx:?} {cy:?} {k1:?} {k2:?}").unwrap();
    }
    for im in problem.images.values() {
        let Some(pose) = &im.pose else { continue };
        let r = pose.rotation.axis_angle();
        let c = pose.center;
        writeln!(
            out,
            "IMAGE {} {} {} {:?} {:?} {:?} {:?} {:?} {:?}",
            im.id, im.stream, im.time_index, r.x, r.y, r.z, c.x, c.y, c.z
        )
        .unwrap();
    }
    for (id, x) in &problem.landmarks {
        let Some(x) = x else { continue };
        writeln!(out, "LANDMARK {id} {:?} {:?} {:?}", x.x, x.y, x.z).unwrap();
    }
    for o in problem.active_observations() {
        writeln!(
            out,
            "OBS {} {} {:?} {:?}",
            o.image, o.landmark, o.pixel.x, o.pixel.y
        )
        .unwrap();
    }
    for p in problem.reconstructed_pairs() {
        writeln!(out, "RIG_PAIR {} {} {}", p.time_index, p.image_a, p.image_b).unwrap();
    }
    out
}

pub fn write_problem(problem: &RigProblem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_problem(problem))?;
    Ok(())
}

pub fn read_problem(path: impl AsRef<Path>) -> Result<RigProblem> {
    parse_problem(&fs::read_to_string(path)?)
}

struct Fields<'a> {
    line: usize,
    record: &'a str,
    tokens: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            record: self.record.to_string(),
            message: message.into(),
        }
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.tokens.len() != n {
            return Err(self.error(format!("expected {n} fields, found {}", self.tokens.len())));
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, i: usize, what: &str) -> Result<T> {
        self.tokens[i]
            .parse()
            .map_err(|_| self.error(format!("invalid {what} '{}'", self.tokens[i])))
    }

    fn float(&self, i: usize, what: &str) -> Result<f64> {
        let v: f64 = self.get(i, what)?;
        if !v.is_finite() {
            return Err(self.error(format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn vec3(&self, i: usize, what: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(
            self.float(i, what)?,
            self.float(i + 1, what)?,
            self.float(i + 2, what)?,
        ))
    }

    /// Turns a referential error from the problem builder into a parse error.
    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Precondition(m) | Error::Domain(m) => self.error(m),
            other => other,
        })
    }
}

pub fn parse_problem(text: &str) -> Result<RigProblem> {
    let mut problem = RigProblem::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let record = tokens.next().expect("non-empty line");
        let f = Fields {
            line: i + 1,
            record,
            tokens: tokens.collect(),
        };
        if !header_seen {
            if record != "RIGBA" {
                return Err(Error::Parse {
                    line: i + 1,
                    record: "header".into(),
                    message: format!("expected '{FORMAT_HEADER}'"),
                });
            }
            if f.tokens != ["1"] {
                return Err(Error::Parse {
                    line: i + 1,
                    record: "header".into(),
                    message: format!("unsupported version '{}'", f.tokens.join(" ")),
                });
            }
            header_seen = true;
            continue;
        }
        match record {
            "STREAM" => {
                f.expect_len(6)?;
                let id = StreamId(f.get(0, "stream id")?);
                let k = f.wrap(Intrinsics::new(
                    f.float(1, "focal")?,
                    f.float(2, "cx")?,
                    f.float(3, "cy")?,
                    f.float(4, "k1")?,
                    f.float(5, "k2")?,
                ))?;
                f.wrap(problem.add_stream(id, k))?;
            }
            "IMAGE" => {
                f.expect_len(9)?;
                let image = Image {
                    id: ImageId(f.get(0, "image id")?),
                    stream: StreamId(f.get(1, "stream id")?),
                    time_index: f.get(2, "time index")?,
                    pose: Some(CameraPose::new(
                        Rotation::from_axis_angle(f.vec3(3, "rotation")?),
                        f.vec3(6, "center")?,
                    )),
                };
                f.wrap(problem.add_image(image))?;
            }
            "LANDMARK" => {
                f.expect_len(4)?;
                let id = LandmarkId(f.get(0, "landmark id")?);
                let x = f.vec3(1, "position")?;
                f.wrap(problem.add_landmark(id, Some(x)))?;
            }
            "OBS" => {
                f.expect_len(4)?;
                let obs = Observation {
                    image: ImageId(f.get(0, "image id")?),
                    landmark: LandmarkId(f.get(1, "landmark id")?),
                    pixel: Vector2::new(f.float(2, "u")?, f.float(3, "v")?),
                };
                f.wrap(problem.add_observation(obs))?;
            }
            "RIG_PAIR" => {
                f.expect_len(3)?;
                let pair = RigPair {
                    time_index: f.get(0, "time index")?,
                    image_a: ImageId(f.get(1, "image id")?),
                    image_b: ImageId(f.get(2, "image id")?),
                };
                let (a, b) = (
                    problem.images.get(&pair.image_a),
                    problem.images.get(&pair.image_b),
                );
                for im in [a, b].into_iter().flatten() {
                    if im.time_index != pair.time_index {
                        return Err(f.error(format!(
                            "image {} has time index {}, not {}",
                            im.id, im.time_index, pair.time_index
                        )));
                    }
                }
                f.wrap(problem.add_rig_pair(pair))?;
            }
            other => return Err(f.error(format!("unknown record kind '{other}'"))),
        }
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 1,
            record: "header".into(),
            message: format!("missing '{FORMAT_HEADER}'"),
        });
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
RIGBA 1
# two cameras, one landmark
STREAM 0 100 50 50 0 0
STREAM 1 100 50 50 0 0
IMAGE 0 0 0 0 0 0 0 0 0
IMAGE 1 1 0 0 0 0 1 0 0
LANDMARK 0 0 0 10
OBS 0 0 50 50
OBS 1 0 41 50
RIG_PAIR 0 0 1
";

    #[test]
    fn parses_minimal_file() {
        let p = parse_problem(MINIMAL).unwrap();
        assert_eq!(p.images.len(), 2);
        assert_eq!(p.observations.len(), 2);
        assert_eq!(p.rig_pairs.len(), 1);
        assert_eq!(parse_problem(&render_problem(&p)).unwrap(), p);
    }

    fn parse_err(text: &str) -> (usize, String) {
        match parse_problem(text).unwrap_err() {
            Error::Parse { line, record, .. } => (line, record),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn malformed_records() {
        assert_eq!(parse_err("STREAM 0 1 2 3 4 5\n"), (1, "header".into()));
        assert_eq!(parse_err("RIGBA 2\n"), (1, "header".into()));
        assert_eq!(parse_err(""), (1, "header".into()));
        assert_eq!(
            parse_err("RIGBA 1\nSTREAM 0 100 50 50 0\n"),
            (2, "STREAM".into())
        );
        assert_eq!(
            parse_err("RIGBA 1\nSTREAM 0 -1 50 50 0 0\n"),
            (2, "STREAM".into())
        );
        assert_eq!(
            parse_err("RIGBA 1\nLANDMARK 0 1 x 2\n"),
            (2, "LANDMARK".into())
        );
        assert_eq!(
            parse_err("RIGBA 1\nLANDMARK 0 1 nan 2\n"),
            (2, "LANDMARK".into())
        );
        assert_eq!(parse_err("RIGBA 1\nCAMERA 0\n"), (2, "CAMERA".into()));
        assert_eq!(
            parse_err("RIGBA 1\nIMAGE 0 3 0 0 0 0 0 0 0\n"),
            (2, "IMAGE".into())
        );
        let missing = MINIMAL.replace("RIG_PAIR 0 0 1", "RIG_PAIR 0 0 7");
        assert_eq!(parse_err(&missing), (10, "RIG_PAIR".into()));
        let dangling = MINIMAL.replace("OBS 1 0 41 50", "OBS 1 4 41 50");
        assert_eq!(parse_err(&dangling), (9, "OBS".into()));
    }
}
