use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::numkit::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Seen,
    Unseen,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "seen" => Ok(Split::Seen),
            "unseen" => Ok(Split::Unseen),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSet {
    pub split: Split,
    pub seeds: Vec<u64>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Checks that `seen` and `unseen` are non-empty and share no seed.
pub fn check_disjoint(seen: &LevelSet, unseen: &LevelSet) -> Result<()> {
    for set in [seen, unseen] {
        if set.is_empty() {
            return Err(Error::EmptyLevelSet(set.split.to_string()));
        }
    }
    let lookup: HashSet<u64> = seen.seeds.iter().copied().collect();
    match unseen.seeds.iter().find(|s| lookup.contains(s)) {
        Some(&s) => Err(Error::OverlappingLevels(s)),
        None => Ok(()),
    }
}

/// Draws `n_train + n_test` distinct level seeds from `master_seed`.
pub fn make_levelsets(n_train: usize, n_test: usize, master_seed: u64) -> Result<(LevelSet, LevelSet)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("level sets need at least one level each".into()));
    }
    let mut rng = Rng::new(master_seed);
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(n_train + n_test);
    while all.len() < n_train + n_test {
        let s = rng.next_u64();
        if seen.insert(s) {
            all.push(s);
        }
    }
    let unseen = all.split_off(n_train);
    Ok((
        LevelSet {
            split: Split::Seen,
            seeds: all,
        },
        LevelSet {
            split: Split::Unseen,
            seeds: unseen,
        },
    ))
}

/// Writes the `split,seed` manifest, seen levels first.
pub fn write_manifest(path: &Path, seen: &LevelSet, unseen: &LevelSet) -> Result<()> {
    let mut out = String::new();
    for set in [seen, unseen] {
        for s in &set.seeds {
            out.push_str(&format!("{},{}\n", set.split, s));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `split,seed` manifest. Blank lines and `#` comments are skipped.
/// Disjointness is checked here rather than trusted from the file.
pub fn read_manifest(path: &Path) -> Result<(LevelSet, LevelSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = LevelSet {
        split: Split::Seen,
        seeds: Vec::new(),
    };
    let mut unseen = LevelSet {
        split: Split::Unseen,
        seeds: Vec::new(),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", lineno + 1),
        };
        let (split, seed) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected `split,seed`".into()))?;
        let split: Split = split.trim().parse().map_err(parse_err)?;
        let seed: u64 = seed.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
        match split {
            Split::Seen => seen.seeds.push(seed),
            Split::Unseen => unseen.seeds.push(seed),
        }
    }
    check_disjoint(&seen, &unseen)?;
    Ok((seen, unseen))
}
