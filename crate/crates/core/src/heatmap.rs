//! Unnormalized Gaussian heatmaps (peak amplitude 1).

use ndarray::{Array2, Array3, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::types::{HeatmapStack, Point, Provenance};

/// Renders `exp(-((i - cy)^2 + (j - cx)^2) / (2 sigma^2))` on an
/// `height × width` grid. The center may be fractional or off-grid.
pub fn render_gaussian_heatmap(
    center: Point,
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<Array2<f64>> {
    check_args(sigma, height, width)?;
    let mut grid = Array2::zeros((height, width));
    fill_gaussian(grid.view_mut(), center, sigma);
    Ok(grid)
}

/// One Gaussian grid per position, tagged as ground truth.
pub fn render_trajectory_heatmaps(
    positions: &[Point],
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<HeatmapStack> {
    if positions.is_empty() {
        return Err(Error::invalid(
            "cannot render heatmaps for an empty trajectory",
        ));
    }
    check_args(sigma, height, width)?;
    let mut grid = Array3::zeros((positions.len(), height, width));
    for (mut plane, &p) in grid.axis_iter_mut(Axis(0)).zip(positions) {
        fill_gaussian(plane.view_mut(), p, sigma);
    }
    Ok(HeatmapStack {
        grid,
        provenance: Provenance::GroundTruth,
    })
}

/// Writes the Gaussian for `center` into `out` (row-major `height × width`).
pub(crate) fn fill_gaussian_slice(
    out: &mut [f64],
    height: usize,
    width: usize,
    center: Point,
    sigma: f64,
) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    // separable: exp(-a-b) = exp(-a) exp(-b)
    let col: Vec<f64> = (0..width)
        .map(|j| (-(j as f64 - center.x).powi(2) * inv).exp())
        .collect();
    for i in 0..height {
        let r = (-(i as f64 - center.y).powi(2) * inv).exp();
        let row = &mut out[i * width..(i + 1) * width];
        for (o, c) in row.iter_mut().zip(&col) {
            *o = r * c;
        }
    }
}

fn fill_gaussian(mut grid: ArrayViewMut2<f64>, center: Point, sigma: f64) {
    let (h, w) = grid.dim();
    match grid.as_slice_mut() {
        Some(s) => fill_gaussian_slice(s, h, w, center, sigma),
        None => {
            let inv = 1.0 / (2.0 * sigma * sigma);
            for ((i, j), v) in grid.indexed_iter_mut() {
                let d2 = (i as f64 - center.y).powi(2) + (j as f64 - center.x).powi(2);
                *v = (-d2 * inv).exp();
            }
        }
    }
}

fn check_args(sigma: f64, height: usize, width: usize) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("heatmap dimensions must be >= 1"));
    }
    Ok(())
}

/// Row-major argmax of a grid, returned as a pixel position. Ties resolve to
/// the first cell.
pub fn argmax_cell(grid: &Array2<f64>) -> Point {
    let w = grid.dim().1;
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (idx, &v) in grid.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = idx;
        }
    }
    Point::new((best % w) as f64, (best / w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_symmetry() {
        let g = render_gaussian_heatmap(Point::new(2.0, 2.0), 1.0, 5, 5).unwrap();
        assert_eq!(g[[2, 2]], 1.0);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g[[i, j]], g[[j, i]]);
            }
        }
    }

    #[test]
    fn narrow_sigma_bound() {
        let g = render_gaussian_heatmap(Point::new(2.0, 2.0), 0.25, 5, 5).unwrap();
        assert_eq!(g[[2, 2]], 1.0);
        for ((i, j), &v) in g.indexed_iter() {
            if (i, j) != (2, 2) {
                assert!(v < 4e-4, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn mass_matches_continuous_integral() {
        let g = render_gaussian_heatmap(Point::new(32.0, 32.0), 1.0, 64, 64).unwrap();
        let mut total = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                total += g[[i, j]];
            }
        }
        let expected = 2.0 * std::f64::consts::PI;
        assert!((total - expected).abs() / expected < 0.01, "{total}");
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(render_gaussian_heatmap(Point::new(0.0, 0.0), 0.0, 4, 4).is_err());
        assert!(render_gaussian_heatmap(Point::new(0.0, 0.0), -1.0, 4, 4).is_err());
        assert!(render_trajectory_heatmaps(&[], 1.0, 4, 4).is_err());
    }

    #[test]
    fn trajectory_stack_steps_and_identity() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64 * 2.0, 3.0)).collect();
        let s = render_trajectory_heatmaps(&pts, 1.5, 12, 12).unwrap();
        assert_eq!(s.steps(), 5);
        assert_eq!(s.provenance, Provenance::GroundTruth);
        for (t, p) in pts.iter().enumerate() {
            assert_eq!(s.grid[[t, p.y as usize, p.x as usize]], 1.0);
            assert!(s.grid.index_axis(Axis(0), t).iter().all(|&v| v <= 1.0));
        }
        let c = Point::new(6.0, 6.0);
        let one = render_trajectory_heatmaps(&[c], 1.5, 12, 12).unwrap();
        let direct = render_gaussian_heatmap(c, 1.5, 12, 12).unwrap();
        assert_eq!(one.step(0), direct);
    }

    #[test]
    fn collinear_argmax_is_rounded_position() {
        let pts = [
            Point::new(1.3, 2.2),
            Point::new(4.6, 4.4),
            Point::new(7.9, 6.6),
        ];
        let s = render_trajectory_heatmaps(&pts, 2.0, 10, 10).unwrap();
        for (t, p) in pts.iter().enumerate() {
            // brute-force argmax over the stack step
            let plane = s.step(t);
            let mut best = (0, 0);
            for i in 0..10 {
                for j in 0..10 {
                    if plane[[i, j]] > plane[best] {
                        best = (i, j);
                    }
                }
            }
            assert_eq!(best, (p.y.round() as usize, p.x.round() as usize));
            assert_eq!(argmax_cell(&plane), Point::new(p.x.round(), p.y.round()));
        }
    }

    #[test]
    fn translation_equivariance_interior() {
        let a = render_gaussian_heatmap(Point::new(10.0, 9.0), 1.7, 32, 32).unwrap();
        let b = render_gaussian_heatmap(Point::new(13.0, 7.0), 1.7, 32, 32).unwrap();
        for i in 4..24 {
            for j in 4..24 {
                assert_eq!(a[[i, j]], b[[i - 2, j + 3]]);
            }
        }
    }
}
