//! Cover/stego pair datasets and the line-oriented pair manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{contract, ensure, Error, Result};
use crate::jpeg::{decompress_real, read_coefficients, RealImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => contract!("unknown split `{other}` (train, val, test)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub cover: PathBuf,
    pub stego: PathBuf,
    pub split: Split,
}

/// Index-aligned cover and stego coefficient files.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairedDataset {
    pub entries: Vec<PairEntry>,
}

impl PairedDataset {
    /// Parses `cover_path,stego_path,split` lines. Blank lines and lines
    /// starting with `#` are skipped; relative paths are resolved against
    /// `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len();
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "cover_path,stego_path,split" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    offset: here,
                    message: format!("expected `cover_path,stego_path,split`, got {} fields", fields.len()),
                });
            }
            let split = fields[2]
                .parse()
                .map_err(|e: Error| Error::Parse { offset: here, message: e.to_string() })?;
            entries.push(PairEntry { cover: base.join(fields[0]), stego: base.join(fields[1]), split });
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Header line plus one line per pair, paths as given.
    pub fn to_text(&self) -> String {
        let mut out = String::from("cover_path,stego_path,split\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.cover.display(), e.stego.display(), e.split));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads and decompresses (without rounding) every pair of `split`.
    pub fn load(&self, split: Split) -> Result<Vec<ImagePair>> {
        self.split(split)
            .map(|e| {
                let cover = decompress_real(&read_coefficients(&e.cover)?);
                let stego = decompress_real(&read_coefficients(&e.stego)?);
                ImagePair::new(cover, stego)
            })
            .collect()
    }
}

/// A decompressed cover and its stego counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub cover: RealImage,
    pub stego: RealImage,
}

impl ImagePair {
    pub fn new(cover: RealImage, stego: RealImage) -> Result<Self> {
        ensure!(
            (cover.width(), cover.height()) == (stego.width(), stego.height()),
            "cover is {}x{} but stego is {}x{}",
            cover.width(),
            cover.height(),
            stego.width(),
            stego.height()
        );
        Ok(Self { cover, stego })
    }
}

/// One of the eight symmetries of the square: an optional horizontal
/// mirror followed by `rotation` quarter turns counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub mirror: bool,
    pub rotation: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { mirror: false, rotation: 0 };

    pub fn from_index(i: u8) -> Self {
        Self { mirror: i >= 4, rotation: i % 4 }
    }

    /// Uniform over the eight transforms.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self::from_index(rng.random_range(0..8))
    }

    /// Source coordinates `(y, x)` for destination `(y, x)` in an `n × n` image.
    fn source(self, n: usize, mut y: usize, mut x: usize) -> (usize, usize) {
        for _ in 0..self.rotation {
            // Undo one counter-clockwise quarter turn.
            (y, x) = (x, n - 1 - y);
        }
        if self.mirror {
            x = n - 1 - x;
        }
        (y, x)
    }
}

/// Applies `t` to a square image.
pub fn augment(image: &RealImage, t: Dihedral) -> Result<RealImage> {
    let n = image.width();
    ensure!(image.height() == n, "augment needs a square image, got {}x{}", n, image.height());
    if t == Dihedral::IDENTITY {
        return Ok(image.clone());
    }
    let mut values = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = t.source(n, y, x);
            values.push(image.get(sy, sx));
        }
    }
    RealImage::new(n, n, values)
}
