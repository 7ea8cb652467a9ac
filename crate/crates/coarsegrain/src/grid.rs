//! Image grids: per-pixel intensities and class labels, binary masks, and
//! the paired plain-text export format.
//!
//! Labels use fixed ids: `0` is residual background, `1` the target
//! (lesion) class, and `2..` auxiliary structures. The text format is one
//! image row per line with space-separated values; intensities in float
//! form, labels as integers.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid is {got} values, expected {expected} ({height} x {width})")]
    SizeMismatch {
        got: usize,
        expected: usize,
        height: usize,
        width: usize,
    },
    #[error("mask dimensions {a_h}x{a_w} and {b_h}x{b_w} differ")]
    DimensionMismatch {
        a_h: usize,
        a_w: usize,
        b_h: usize,
        b_w: usize,
    },
    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: could not parse {what} value '{text}'")]
    Parse {
        line: usize,
        what: &'static str,
        text: String,
    },
    #[error("empty grid text")]
    Empty,
}

pub type Result<T> = std::result::Result<T, GridError>;

/// A synthetic scene: intensity image plus a per-pixel label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    height: usize,
    width: usize,
    intensities: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        intensities: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let expected = height * width;
        if intensities.len() != expected {
            return Err(GridError::SizeMismatch {
                got: intensities.len(),
                expected,
                height,
                width,
            });
        }
        if labels.len() != expected {
            return Err(GridError::SizeMismatch {
                got: labels.len(),
                expected,
                height,
                width,
            });
        }
        Ok(Self {
            height,
            width,
            intensities,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }

    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Largest label plus one.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Replace the label map, keeping intensities.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.height, self.width, self.intensities.clone(), labels)
    }

    /// One float row per image row, space separated.
    pub fn write_intensities<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for row in self.intensities.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Integer grid, same layout as the intensities.
    pub fn write_labels<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Parse a label grid written by [`LabeledImage::write_labels`].
pub fn read_label_grid(text: &str) -> Result<(usize, usize, Vec<usize>)> {
    let mut width = None;
    let mut values = Vec::new();
    let mut height = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split_whitespace().collect();
        let w = *width.get_or_insert(row.len());
        if row.len() != w {
            return Err(GridError::RaggedRow {
                line: idx + 1,
                expected: w,
                found: row.len(),
            });
        }
        for tok in row {
            let v: usize = tok.parse().map_err(|_| GridError::Parse {
                line: idx + 1,
                what: "label",
                text: tok.to_string(),
            })?;
            values.push(v);
        }
        height += 1;
    }
    let width = width.ok_or(GridError::Empty)?;
    Ok((height, width, values))
}

/// Parse an intensity grid written by [`LabeledImage::write_intensities`].
pub fn read_intensity_grid(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut width = None;
    let mut values = Vec::new();
    let mut height = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split_whitespace().collect();
        let w = *width.get_or_insert(row.len());
        if row.len() != w {
            return Err(GridError::RaggedRow {
                line: idx + 1,
                expected: w,
                found: row.len(),
            });
        }
        for tok in row {
            let v: f64 = tok.parse().map_err(|_| GridError::Parse {
                line: idx + 1,
                what: "intensity",
                text: tok.to_string(),
            })?;
            values.push(v);
        }
        height += 1;
    }
    let width = width.ok_or(GridError::Empty)?;
    Ok((height, width, values))
}

/// A foreground mask with physical pixel spacing (row, column units).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<bool>,
    spacing: [f64; 2],
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>, spacing: [f64; 2]) -> Result<Self> {
        let expected = height * width;
        if pixels.len() != expected {
            return Err(GridError::SizeMismatch {
                got: pixels.len(),
                expected,
                height,
                width,
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
            spacing,
        })
    }

    /// Mask of pixels whose label equals `target`, default spacing 1.0.
    pub fn from_labels(img: &LabeledImage, target: usize) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            pixels: img.labels().iter().map(|&l| l == target).collect(),
            spacing: [1.0, 1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: [f64; 2]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height
            || self.width != other.width
            || self.spacing != other.spacing
        {
            return Err(GridError::DimensionMismatch {
                a_h: self.height,
                a_w: self.width,
                b_h: other.height,
                b_w: other.width,
            });
        }
        Ok(())
    }
}
