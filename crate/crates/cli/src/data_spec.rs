//! `--data` values: `synth:<n>,<size>,<classes>[,<seed>]` or `idx:<images>,<labels>`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fqln::data::{load_idx, synth_shapes, Dataset};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSpec {
    Synth {
        n: usize,
        size: usize,
        classes: usize,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DataSpec {
    pub fn load(&self) -> fqln::Result<Dataset> {
        match self {
            DataSpec::Synth { n, size, classes, seed } => synth_shapes(*seed, *n, *size, *classes),
            DataSpec::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Synth { n, size, classes, seed } => write!(f, "synth:{n},{size},{classes},{seed}"),
            DataSpec::Idx { images, labels } => write!(f, "idx:{},{}", images.display(), labels.display()),
        }
    }
}

impl FromStr for DataSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (scheme, rest) = s.split_once(':').ok_or_else(|| {
            format!("expected synth:<n>,<size>,<classes>[,<seed>] or idx:<images>,<labels>, got '{s}'")
        })?;
        match scheme {
            "synth" => {
                let parts: Vec<&str> = rest.split(',').collect();
                if !(3..=4).contains(&parts.len()) {
                    return Err(format!("synth takes 3 or 4 comma-separated numbers, got '{rest}'"));
                }
                let num = |i: usize| -> Result<u64, String> {
                    parts[i]
                        .trim()
                        .parse()
                        .map_err(|_| format!("'{}' is not a non-negative integer", parts[i]))
                };
                Ok(DataSpec::Synth {
                    n: num(0)? as usize,
                    size: num(1)? as usize,
                    classes: num(2)? as usize,
                    seed: if parts.len() == 4 { num(3)? } else { 0 },
                })
            }
            "idx" => {
                let (images, labels) = rest
                    .split_once(',')
                    .ok_or_else(|| format!("idx takes <images>,<labels>, got '{rest}'"))?;
                Ok(DataSpec::Idx {
                    images: images.into(),
                    labels: labels.into(),
                })
            }
            other => Err(format!("unknown data scheme '{other}'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_schemes() {
        assert_eq!(
            "synth:100,32,4".parse::<DataSpec>().unwrap(),
            DataSpec::Synth {
                n: 100,
                size: 32,
                classes: 4,
                seed: 0
            }
        );
        let idx: DataSpec = "idx:a.idx,b.idx".parse().unwrap();
        assert_eq!(idx.to_string(), "idx:a.idx,b.idx");
        assert!("synth:1,2".parse::<DataSpec>().is_err());
        assert!("png:x".parse::<DataSpec>().is_err());
    }
}
