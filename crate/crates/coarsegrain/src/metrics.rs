//! Segmentation evaluation: Dice overlap, 95th-percentile Hausdorff
//! distance, and Normalized Surface Distance.
//!
//! Conventions (they materially change reported numbers, so they are fixed
//! here and documented):
//!
//! * surface = foreground pixels with at least one background 4-neighbor,
//!   the image border counting as background;
//! * HD-95 and NSD pool the directed nearest-neighbor distances of both
//!   surfaces into one list (symmetric by construction);
//! * percentiles interpolate linearly on the sorted list;
//! * an empty surface makes HD-95 the image diagonal in physical units and
//!   is flagged; Dice and NSD of two empty masks are 1.0 (flagged), and 0.0
//!   (flagged) when exactly one side is empty;
//! * the NSD tolerance defaults to 1.0 physical unit.
//!
//! Nearest-neighbor distances run through an exact grid distance transform
//! when the image exceeds 64x64 and through exact all-pairs search below
//! that; the two paths agree exactly on integer grids.

use thiserror::Error;

use crate::grid::{BinaryMask, GridError};

/// Default NSD tolerance in physical units.
pub const DEFAULT_NSD_TOLERANCE: f64 = 1.0;

/// Image side length above which nearest-neighbor queries switch from
/// all-pairs search to the grid distance transform.
pub const DISTANCE_TRANSFORM_THRESHOLD: usize = 64;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("tolerance must be non-negative, got {0}")]
    NegativeTolerance(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Boundary pixels of a mask, with the spacing needed to read them in
/// physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    points: Vec<(usize, usize)>,
    spacing: [f64; 2],
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pixel_points(&self) -> &[(usize, usize)] {
        &self.points
    }

    /// Points scaled by the pixel spacing.
    pub fn physical_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .map(move |&(r, c)| (r as f64 * self.spacing[0], c as f64 * self.spacing[1]))
    }
}

/// Extract the boundary: foreground pixels with a background 4-neighbor,
/// where out-of-image counts as background.
pub fn surface_points(mask: &BinaryMask) -> SurfacePointSet {
    let (h, w) = (mask.height(), mask.width());
    let mut points = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1);
            if edge {
                points.push((r, c));
            }
        }
    }
    SurfacePointSet {
        points,
        spacing: mask.spacing(),
    }
}

/// Dice overlap `2|P and G| / (|P| + |G|)`. Two empty masks score 1.0,
/// exactly one empty scores 0.0 (both flagged in [`MetricsResult`]).
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_shape(gt)?;
    let p = pred.foreground_count();
    let g = gt.foreground_count();
    if p + g == 0 {
        return Ok(1.0);
    }
    let inter = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .filter(|(a, b)| **a && **b)
        .count();
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Which nearest-neighbor backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceStrategy {
    /// Choose by image size (the default).
    Auto,
    /// Exact brute-force minimum over all surface points.
    AllPairs,
    /// Exact squared Euclidean grid distance transform.
    Transform,
}

fn image_diagonal(mask: &BinaryMask) -> f64 {
    let [sr, sc] = mask.spacing();
    let dr = mask.height() as f64 * sr;
    let dc = mask.width() as f64 * sc;
    (dr * dr + dc * dc).sqrt()
}

/// 95th percentile of the pooled symmetric surface distances. Either
/// surface empty yields the image-diagonal sentinel.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    hd95_with(pred, gt, DistanceStrategy::Auto)
}

pub fn hd95_with(pred: &BinaryMask, gt: &BinaryMask, strategy: DistanceStrategy) -> Result<f64> {
    pred.same_shape(gt)?;
    let sp = surface_points(pred);
    let sg = surface_points(gt);
    if sp.is_empty() || sg.is_empty() {
        return Ok(image_diagonal(pred));
    }
    let mut pooled = directed_distances(&sp, &sg, pred, strategy);
    pooled.extend(directed_distances(&sg, &sp, pred, strategy));
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(crate::mle::percentile(&pooled, 0.95))
}

/// Fraction of pooled surface points within `tolerance` of the other
/// surface. Both surfaces empty scores 1.0; exactly one empty scores 0.0.
pub fn nsd(pred: &BinaryMask, gt: &BinaryMask, tolerance: f64) -> Result<f64> {
    nsd_with(pred, gt, tolerance, DistanceStrategy::Auto)
}

pub fn nsd_with(
    pred: &BinaryMask,
    gt: &BinaryMask,
    tolerance: f64,
    strategy: DistanceStrategy,
) -> Result<f64> {
    pred.same_shape(gt)?;
    if tolerance < 0.0 {
        return Err(MetricsError::NegativeTolerance(tolerance));
    }
    let sp = surface_points(pred);
    let sg = surface_points(gt);
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut pooled = directed_distances(&sp, &sg, pred, strategy);
    pooled.extend(directed_distances(&sg, &sp, pred, strategy));
    let within = pooled.iter().filter(|&&d| d <= tolerance).count();
    Ok(within as f64 / pooled.len() as f64)
}

/// All three metrics plus degenerate flags, sharing the surface extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsResult {
    pub dice: f64,
    pub hd95: f64,
    pub nsd: f64,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask, tolerance: f64) -> Result<MetricsResult> {
    Ok(MetricsResult {
        dice: dice(pred, gt)?,
        hd95: hd95(pred, gt)?,
        nsd: nsd(pred, gt, tolerance)?,
        pred_empty: pred.is_empty(),
        gt_empty: gt.is_empty(),
    })
}

/// Nearest-neighbor distance from every point of `from` to the surface
/// `to`, in physical units.
fn directed_distances(
    from: &SurfacePointSet,
    to: &SurfacePointSet,
    shape: &BinaryMask,
    strategy: DistanceStrategy,
) -> Vec<f64> {
    let use_transform = match strategy {
        DistanceStrategy::AllPairs => false,
        DistanceStrategy::Transform => true,
        DistanceStrategy::Auto => {
            shape.height() > DISTANCE_TRANSFORM_THRESHOLD
                || shape.width() > DISTANCE_TRANSFORM_THRESHOLD
        }
    };
    if use_transform {
        let dt = squared_distance_transform(
            shape.height(),
            shape.width(),
            to.pixel_points(),
            shape.spacing(),
        );
        from.pixel_points()
            .iter()
            .map(|&(r, c)| dt[r * shape.width() + c].sqrt())
            .collect()
    } else {
        let [sr, sc] = shape.spacing();
        from.pixel_points()
            .iter()
            .map(|&(ar, ac)| {
                to.pixel_points()
                    .iter()
                    .map(|&(br, bc)| {
                        let dr = (ar as f64 - br as f64) * sr;
                        let dc = (ac as f64 - bc as f64) * sc;
                        dr * dr + dc * dc
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    }
}

/// Exact squared Euclidean distance transform on a grid seeded at `seeds`,
/// with anisotropic axis weights, by the two-pass separable parabolic
/// envelope method.
pub fn squared_distance_transform(
    height: usize,
    width: usize,
    seeds: &[(usize, usize)],
    spacing: [f64; 2],
) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; height * width];
    for &(r, c) in seeds {
        grid[r * width + c] = 0.0;
    }
    // transform along columns (row index varies), then along rows
    let wr = spacing[0] * spacing[0];
    let wc = spacing[1] * spacing[1];
    let mut col_buf = vec![0.0; height];
    let mut out_buf = vec![0.0; height.max(width)];
    for c in 0..width {
        for r in 0..height {
            col_buf[r] = grid[r * width + c];
        }
        dt_1d(&col_buf, wr, &mut out_buf);
        for r in 0..height {
            grid[r * width + c] = out_buf[r];
        }
    }
    let mut row_buf = vec![0.0; width];
    for r in 0..height {
        row_buf.copy_from_slice(&grid[r * width..(r + 1) * width]);
        dt_1d(&row_buf, wc, &mut out_buf);
        grid[r * width..(r + 1) * width].copy_from_slice(&out_buf[..width]);
    }
    grid
}

/// One-dimensional squared distance transform under the cost
/// `f[q] + w (p - q)^2`, lower envelope of parabolas.
fn dt_1d(f: &[f64], w: f64, out: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    // vertices and boundaries of the parabola envelope
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p].is_infinite() {
                // any finite parabola beats an infinite one everywhere left
                f64::NEG_INFINITY
            } else {
                ((f[q] + w * (q * q) as f64) - (f[p] + w * (p * p) as f64))
                    / (2.0 * w * (q as f64 - p as f64))
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for (p, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        *o = if f[q].is_infinite() {
            f64::INFINITY
        } else {
            let d = p as f64 - q as f64;
            w * d * d + f[q]
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinaryMask;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, fg: &[(usize, usize)]) -> BinaryMask {
        let mut px = vec![false; h * w];
        for &(r, c) in fg {
            px[r * w + c] = true;
        }
        BinaryMask::new(h, w, px, [1.0, 1.0]).unwrap()
    }

    #[test]
    fn dice_known_values() {
        let a = mask(4, 4, &[(0, 0), (0, 1)]);
        let b = mask(4, 4, &[(0, 1), (0, 2)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let c = mask(4, 4, &[(3, 3)]);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let empty = mask(4, 4, &[]);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&a, &empty).unwrap(), 0.0);
    }

    #[test]
    fn surface_of_single_pixel_and_filled_square() {
        let single = mask(5, 5, &[(2, 2)]);
        assert_eq!(surface_points(&single).pixel_points(), &[(2, 2)]);

        let fg: Vec<(usize, usize)> = (1..4).flat_map(|r| (1..4).map(move |c| (r, c))).collect();
        let sq = mask(5, 5, &fg);
        let surf = surface_points(&sq);
        assert_eq!(surf.len(), 8);
        assert!(!surf.pixel_points().contains(&(2, 2)));
    }

    #[test]
    fn full_image_surface_is_border_ring() {
        let fg: Vec<(usize, usize)> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
        let full = mask(4, 4, &fg);
        let surf = surface_points(&full);
        assert_eq!(surf.len(), 12);
        assert!(!surf.pixel_points().contains(&(1, 1)));
    }

    #[test]
    fn hd95_two_points() {
        let a = mask(10, 10, &[(0, 0)]);
        let b = mask(10, 10, &[(3, 4)]);
        assert_eq!(hd95(&a, &b).unwrap(), 5.0);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hd95_empty_gives_diagonal_sentinel() {
        let a = mask(3, 4, &[(0, 0)]);
        let empty = mask(3, 4, &[]);
        let want = (9.0f64 + 16.0).sqrt();
        assert_eq!(hd95(&a, &empty).unwrap(), want);
        assert_eq!(hd95(&empty, &empty).unwrap(), want);
    }

    #[test]
    fn nsd_two_points_at_tolerance_boundary() {
        let a = mask(10, 10, &[(0, 0)]);
        let b = mask(10, 10, &[(3, 4)]);
        assert_eq!(nsd(&a, &b, 5.0).unwrap(), 1.0);
        assert_eq!(nsd(&a, &b, 4.9).unwrap(), 0.0);
        assert_eq!(nsd(&a, &a, 0.0).unwrap(), 1.0);
        let empty = mask(10, 10, &[]);
        assert_eq!(nsd(&empty, &empty, 1.0).unwrap(), 1.0);
        assert_eq!(nsd(&a, &empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn spacing_scales_distances() {
        let a = mask(10, 10, &[(0, 0)]).with_spacing([2.0, 0.5]);
        let b = mask(10, 10, &[(3, 4)]).with_spacing([2.0, 0.5]);
        let want = (36.0f64 + 4.0).sqrt();
        assert!((hd95(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn transform_agrees_with_all_pairs_on_random_masks() {
        use rand::Rng;
        let mut rng = crate::rng::stream(41, &[]);
        for _ in 0..200 {
            let h = rng.random_range(1..=6);
            let w = rng.random_range(1..=6);
            let fga: Vec<(usize, usize)> = (0..rng.random_range(1..=6))
                .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
                .collect();
            let fgb: Vec<(usize, usize)> = (0..rng.random_range(1..=6))
                .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
                .collect();
            let a = mask(h, w, &fga);
            let b = mask(h, w, &fgb);
            let hd_ap = hd95_with(&a, &b, DistanceStrategy::AllPairs).unwrap();
            let hd_dt = hd95_with(&a, &b, DistanceStrategy::Transform).unwrap();
            assert_eq!(hd_ap, hd_dt, "masks {fga:?} vs {fgb:?}");
            let nsd_ap = nsd_with(&a, &b, 1.5, DistanceStrategy::AllPairs).unwrap();
            let nsd_dt = nsd_with(&a, &b, 1.5, DistanceStrategy::Transform).unwrap();
            assert_eq!(nsd_ap, nsd_dt);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = mask(3, 3, &[(0, 0)]);
        let b = mask(3, 4, &[(0, 0)]);
        assert!(dice(&a, &b).is_err());
        assert!(hd95(&a, &b).is_err());
        assert!(nsd(&a, &b, 1.0).is_err());
        assert!(nsd(&a, &a, -0.5).is_err());
    }

    proptest! {
        #[test]
        fn metric_invariants(
            fg_a in prop::collection::vec((0usize..7, 0usize..7), 0..8),
            fg_b in prop::collection::vec((0usize..7, 0usize..7), 0..8),
            tol in 0.0f64..4.0,
            extra in 0.0f64..3.0,
            (dr, dc) in (0usize..3, 0usize..3),
        ) {
            let a = mask(10, 10, &fg_a);
            let b = mask(10, 10, &fg_b);

            // symmetry
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
            prop_assert_eq!(nsd(&a, &b, tol).unwrap(), nsd(&b, &a, tol).unwrap());

            // bounds
            let d = dice(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let n = nsd(&a, &b, tol).unwrap();
            prop_assert!((0.0..=1.0).contains(&n));
            let h = hd95(&a, &b).unwrap();
            prop_assert!(h >= 0.0 && h <= (200.0f64).sqrt() + 1e-12);

            // monotonicity of nsd in the tolerance
            prop_assert!(nsd(&a, &b, tol + extra).unwrap() >= n);

            // translation equivariance
            let shift = |fg: &[(usize, usize)]| -> Vec<(usize, usize)> {
                fg.iter().map(|&(r, c)| (r + dr, c + dc)).collect()
            };
            let at = mask(10, 10, &shift(&fg_a));
            let bt = mask(10, 10, &shift(&fg_b));
            prop_assert_eq!(d, dice(&at, &bt).unwrap());
            prop_assert_eq!(h, hd95(&at, &bt).unwrap());
            prop_assert_eq!(n, nsd(&at, &bt, tol).unwrap());
        }
    }
}
