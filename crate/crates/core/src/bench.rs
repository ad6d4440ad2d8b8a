//! Score layouts on real text: one-handed travel distance, the two-handed
//! waiting model, stationary-weighted covariance ellipses, and a
//! Gromov-Hausdorff-style distortion between keyboards. Ships the QWERTY
//! references the comparisons run against.

use serde::{Deserialize, Serialize};

use crate::cluster::Partition;
use crate::corpus::Alphabet;
use crate::embed::symmetric_eigen_2x2;
use crate::error::{Error, Result};
use crate::layout::{KeyGrid, KeyboardLayout};

const QWERTY_ROWS: [&str; 3] = ["qwertyuiop", "asdfghjkl", "zxcvbnm"];
/// Left cluster of the two-handed QWERTY reference: all letters above or on
/// the left of b.
const QWERTY_LEFT: &str = "qwertasdfgzxcvb";

/// Cost summary of typing a text on one layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub layout: String,
    /// Letters actually simulated.
    pub letters: usize,
    pub total: f64,
    pub per_transition: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub layout: String,
    pub total: f64,
    pub per_transition: f64,
    /// candidate / baseline cost ratio; below 1 means the candidate wins.
    pub ratio: f64,
    pub improvement_percent: f64,
}

impl BenchReport {
    /// Attach a baseline run and derive the ratio and percent improvement.
    pub fn against(mut self, baseline: &BenchReport) -> Self {
        let ratio = self.per_transition / baseline.per_transition;
        self.baseline = Some(BaselineComparison {
            layout: baseline.layout.clone(),
            total: baseline.total,
            per_transition: baseline.per_transition,
            ratio,
            improvement_percent: (1.0 - ratio) * 100.0,
        });
        self
    }
}

/// Standard QWERTY letter placement on the un-staggered grid. The grid is
/// 3x10 with rows left-aligned, matching the reference used throughout.
pub fn qwerty_layout() -> KeyboardLayout {
    let alphabet = Alphabet::latin_lowercase();
    let grid = KeyGrid::new(3, 10).expect("static grid");
    let mut assignment = vec![(0usize, 0usize); alphabet.len()];
    for (row, letters) in QWERTY_ROWS.iter().enumerate() {
        for (col, c) in letters.chars().enumerate() {
            let i = alphabet.index_of(c).expect("latin letter");
            assignment[i] = (row, col);
        }
    }
    KeyboardLayout::new(alphabet, grid, assignment).expect("static layout")
}

/// QWERTY reference for one- or two-handed comparison. For two hands the
/// left cluster holds the 15 letters above or left of b, the right the
/// remaining 11.
pub fn qwerty_reference(hands: u8) -> Result<(KeyboardLayout, Option<Partition>)> {
    let layout = qwerty_layout();
    match hands {
        1 => Ok((layout, None)),
        2 => {
            let partition = Partition::from_letters_a(&layout.alphabet, QWERTY_LEFT)?;
            Ok((layout, Some(partition)))
        }
        _ => Err(Error::invalid("hands must be 1 or 2")),
    }
}

fn text_to_indices(text: &str, alphabet: &Alphabet) -> Result<Vec<usize>> {
    let mut indices = Vec::with_capacity(text.len());
    for c in text.chars() {
        match alphabet.index_of(c) {
            Some(i) => indices.push(i),
            None => {
                return Err(Error::invalid(format!(
                    "text contains {c:?}, not in the layout alphabet"
                )))
            }
        }
    }
    if indices.len() < 2 {
        return Err(Error::TextTooShort);
    }
    Ok(indices)
}

/// One-handed cost: the Euclidean distance the hand covers over consecutive
/// keys.
pub fn simulate_h1(layout: &KeyboardLayout, text: &str) -> Result<BenchReport> {
    simulate_h1_named(layout, text, "layout")
}

pub fn simulate_h1_named(layout: &KeyboardLayout, text: &str, name: &str) -> Result<BenchReport> {
    let indices = text_to_indices(text, &layout.alphabet)?;
    let total: f64 = indices
        .windows(2)
        .map(|w| layout.key_distance(w[0], w[1]))
        .sum();
    Ok(BenchReport {
        layout: name.to_string(),
        letters: indices.len(),
        total,
        per_transition: total / (indices.len() - 1) as f64,
        baseline: None,
    })
}

/// Two-handed cost with the waiting model: each hand moves from its own
/// previous key, and the move is free up to the slack the other hand's
/// movements accumulated since this hand last typed. A hand's first
/// keystroke costs nothing (it starts on its first letter).
pub fn simulate_h2(
    layout: &KeyboardLayout,
    partition: &Partition,
    text: &str,
) -> Result<BenchReport> {
    simulate_h2_named(layout, partition, text, "layout")
}

pub fn simulate_h2_named(
    layout: &KeyboardLayout,
    partition: &Partition,
    text: &str,
    name: &str,
) -> Result<BenchReport> {
    if partition.alphabet() != &layout.alphabet {
        return Err(Error::AlphabetMismatch);
    }
    let indices = text_to_indices(text, &layout.alphabet)?;

    let mut hand_key: [Option<usize>; 2] = [None, None];
    // Movement of the OTHER hand since this hand's previous keystroke.
    let mut slack = [0.0f64; 2];
    let mut total = 0.0;
    for &letter in &indices {
        let hand = usize::from(!partition.contains_a(letter));
        let move_distance = match hand_key[hand] {
            Some(prev) => layout.key_distance(prev, letter),
            None => 0.0,
        };
        if hand_key[hand].is_some() {
            total += (move_distance - slack[hand]).max(0.0);
        }
        slack[1 - hand] += move_distance;
        slack[hand] = 0.0;
        hand_key[hand] = Some(letter);
    }

    Ok(BenchReport {
        layout: name.to_string(),
        letters: indices.len(),
        total,
        per_transition: total / (indices.len() - 1) as f64,
        baseline: None,
    })
}

/// Covariance ellipse of weighted planar points: center, semi-axes
/// (descending), orientation of the leading axis, and area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle: f64,
    pub area: f64,
}

/// Level-one set of the pi-weighted Mahalanobis form around the pi-weighted
/// centroid.
pub fn covariance_ellipse(points: &[[f64; 2]], pi: &[f64]) -> Result<EllipseSpec> {
    if points.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: pi.len(),
        });
    }
    if points.len() < 2 {
        return Err(Error::DegenerateEllipse);
    }
    let mass: f64 = pi.iter().sum();
    if (mass - 1.0).abs() > 1e-9 || pi.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be a probability vector"));
    }

    let mut center = [0.0f64; 2];
    for (p, &w) in points.iter().zip(pi) {
        center[0] += w * p[0];
        center[1] += w * p[1];
    }
    let mut cov = [[0.0f64; 2]; 2];
    for (p, &w) in points.iter().zip(pi) {
        let dx = p[0] - center[0];
        let dy = p[1] - center[1];
        cov[0][0] += w * dx * dx;
        cov[0][1] += w * dx * dy;
        cov[1][1] += w * dy * dy;
    }
    cov[1][0] = cov[0][1];

    let (values, vectors) = symmetric_eigen_2x2(cov);
    if values[1] <= 1e-12 * values[0].max(1.0) {
        return Err(Error::DegenerateEllipse);
    }
    let mut lead = vectors[0];
    // The axis direction is defined up to sign; canonicalize to the right
    // half plane so the angle is reproducible.
    if lead[0] < 0.0 || (lead[0] == 0.0 && lead[1] < 0.0) {
        lead = [-lead[0], -lead[1]];
    }
    let a = values[0].sqrt();
    let b = values[1].sqrt();
    Ok(EllipseSpec {
        center,
        semi_axes: [a, b],
        angle: lead[1].atan2(lead[0]),
        area: std::f64::consts::PI * a * b,
    })
}

fn normalized_key_points(layout: &KeyboardLayout) -> Vec<[f64; 2]> {
    let n = layout.alphabet.len();
    let mut points: Vec<[f64; 2]> = (0..n).map(|i| layout.key_position(i)).collect();
    let nf = n as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / nf;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / nf;
    let trace = points
        .iter()
        .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
        .sum::<f64>()
        / nf;
    let scale = if trace > 0.0 { trace.sqrt() } else { 1.0 };
    for p in points.iter_mut() {
        p[0] = (p[0] - cx) / scale;
        p[1] = (p[1] - cy) / scale;
    }
    points
}

/// Largest per-pair gap between the key metrics of two layouts sharing an
/// alphabet, under the identity coupling on letters. Both layouts are
/// normalized to unit covariance trace first so keyboards of different
/// physical scale compare cleanly. Optional weights multiply each pair's
/// gap by pi_x pi_x'.
pub fn keyboard_distortion(
    x: &KeyboardLayout,
    y: &KeyboardLayout,
    weights: Option<&[f64]>,
) -> Result<f64> {
    if x.alphabet != y.alphabet {
        return Err(Error::AlphabetMismatch);
    }
    let n = x.alphabet.len();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
    }
    let px = normalized_key_points(x);
    let py = normalized_key_points(y);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = (px[i][0] - px[j][0]).hypot(px[i][1] - px[j][1]);
            let dy = (py[i][0] - py[j][0]).hypot(py[i][1] - py[j][1]);
            let gap = (dx - dy).abs();
            let gap = match weights {
                Some(w) => w[i] * w[j] * gap,
                None => gap,
            };
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}
