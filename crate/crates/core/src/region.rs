//! Region selection and feature extraction.
//!
//! High-graspability heatmap cells are thinned with farthest-point sampling,
//! each surviving cell gets a depth read from the raw depth image, and a
//! depth-scaled g×g grid of sampling locations around every center pulls
//! features out of the fused map in one batched bilinear lookup — the
//! encoder is never re-run per region.

use crate::error::{Error, Result};
use crate::nn::{grid_sample_bilinear, grid_sample_bilinear_backward};
use crate::tensor::{Elem, Tensor};
use rand::Rng;

/// Depth (meters) at which a region's footprint equals its nominal size;
/// nearer objects get proportionally larger footprints.
pub const REGION_REF_DEPTH_M: f32 = 0.5;

/// Depth assigned when neither the local block nor the whole frame has any
/// valid measurement.
pub const FALLBACK_DEPTH_M: f32 = 0.6;

/// One heatmap cell with its graspability score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellScore {
    pub v: usize,
    pub u: usize,
    pub score: f32,
}

/// A selected region center: heatmap cell, attached depth, and score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionCenter {
    pub v: usize,
    pub u: usize,
    pub depth_m: f32,
    pub graspability: f32,
}

/// Cells with score ≥ `threshold`, sorted by score descending (ties in
/// row-major order), capped at `max_candidates`.  If no cell clears the
/// threshold the single best cell is returned so downstream stages always
/// have something to work with.
pub fn select_candidates(heat: &Tensor, threshold: f32, max_candidates: usize) -> Vec<CellScore> {
    assert_eq!(heat.rank(), 3, "heatmap must be [1, H, W]");
    let (hh, ww) = (heat.shape()[1], heat.shape()[2]);
    let mut cells: Vec<CellScore> = Vec::new();
    for v in 0..hh {
        for u in 0..ww {
            let score = heat.data()[v * ww + u];
            if score >= threshold {
                cells.push(CellScore { v, u, score });
            }
        }
    }
    if cells.is_empty() {
        // row-major argmax
        let (mut bi, mut bs) = (0usize, f32::NEG_INFINITY);
        for (i, &s) in heat.data().iter().enumerate() {
            if s > bs {
                bi = i;
                bs = s;
            }
        }
        return vec![CellScore {
            v: bi / ww,
            u: bi % ww,
            score: bs,
        }];
    }
    cells.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.v, a.u).cmp(&(b.v, b.u)))
    });
    cells.truncate(max_candidates);
    cells
}

fn d2(a: &CellScore, b: &CellScore) -> f64 {
    let du = a.u as f64 - b.u as f64;
    let dv = a.v as f64 - b.v as f64;
    du * du + dv * dv
}

/// Greedy farthest-point thinning over heatmap cells, returning indices into
/// `cells` in pick order.  The seed is the highest-scoring cell; every later
/// pick maximizes the distance to the already-chosen set.  All ties break
/// toward the cell earliest in row-major order, which makes the result a
/// function of the candidate *set* alone, not of its ordering.
pub fn farthest_point_sampling(cells: &[CellScore], k: usize) -> Vec<usize> {
    assert!(!cells.is_empty());
    let k = k.min(cells.len());
    let seed = (0..cells.len())
        .min_by(|&a, &b| {
            cells[b]
                .score
                .partial_cmp(&cells[a].score)
                .unwrap()
                .then((cells[a].v, cells[a].u).cmp(&(cells[b].v, cells[b].u)))
        })
        .unwrap();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(seed);
    let mut min_d: Vec<f64> = cells.iter().map(|c| d2(c, &cells[seed])).collect();
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..cells.len() {
            if min_d[i] == 0.0 && chosen.contains(&i) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    min_d[i] > min_d[b]
                        || (min_d[i] == min_d[b]
                            && (cells[i].v, cells[i].u) < (cells[b].v, cells[b].u))
                }
            };
            if better {
                best = Some(i);
            }
        }
        let pick = best.unwrap();
        chosen.push(pick);
        for i in 0..cells.len() {
            min_d[i] = min_d[i].min(d2(&cells[i], &cells[pick]));
        }
    }
    chosen
}

/// Attach a depth to each selected cell: mean of the valid (> 0) raw depth
/// readings inside the stride-sized image block under the cell, falling back
/// to the frame-wide median of valid depths, then to a fixed default.
pub fn attach_depths(cells: &[CellScore], depth_mm: &Tensor, stride: usize) -> Vec<RegionCenter> {
    assert_eq!(depth_mm.rank(), 3, "depth must be [1, H, W]");
    let (h, w) = (depth_mm.shape()[1], depth_mm.shape()[2]);
    let mut frame_median: Option<f32> = None;
    let mut median = |data: &[f32]| -> f32 {
        if let Some(m) = frame_median {
            return m;
        }
        let mut valid: Vec<f32> = data.iter().copied().filter(|&d| d > 0.0).collect();
        let m = if valid.is_empty() {
            FALLBACK_DEPTH_M * 1000.0
        } else {
            valid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            valid[valid.len() / 2]
        };
        frame_median = Some(m);
        m
    };
    cells
        .iter()
        .map(|c| {
            let (r0, c0) = (c.v * stride, c.u * stride);
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for r in r0..(r0 + stride).min(h) {
                for cc in c0..(c0 + stride).min(w) {
                    let d = depth_mm.data()[r * w + cc];
                    if d > 0.0 {
                        sum += d as f64;
                        n += 1;
                    }
                }
            }
            let mm = if n > 0 {
                (sum / n as f64) as f32
            } else {
                median(depth_mm.data())
            };
            RegionCenter {
                v: c.v,
                u: c.u,
                depth_m: mm / 1000.0,
                graspability: c.score,
            }
        })
        .collect()
}

/// Nominal region footprint for this pass, in heatmap cells.  During
/// training the size is jittered uniformly in ±30% so the rotation head sees
/// varying context; at inference it is exactly the base size.
pub fn sample_region_size(rng: &mut impl Rng, base_cells: f32, train: bool) -> f32 {
    assert!(base_cells > 0.0);
    if train {
        rng.gen_range(0.7 * base_cells..1.3 * base_cells)
    } else {
        base_cells
    }
}

/// Normalized sampling locations for a g×g grid around every center.
///
/// The grid spans `span_cells` heatmap cells at the reference depth and is
/// scaled by ref_depth/depth, so nearer (larger-looking) objects get wider
/// footprints.  Output is [1, k·g², 2] in the −1..1 convention of
/// [`grid_sample_bilinear`], points ordered region-major then row-major
/// within each grid.
pub fn region_grid_coords(
    centers: &[RegionCenter],
    grid: usize,
    span_cells: f32,
    map_hw: (usize, usize),
) -> Tensor {
    assert!(grid >= 1);
    let (hh, ww) = map_hw;
    assert!(hh >= 2 && ww >= 2, "feature map too small to sample");
    let k = centers.len();
    let mut data = Vec::with_capacity(k * grid * grid * 2);
    for c in centers {
        debug_assert!(c.depth_m > 0.0);
        let scale = REGION_REF_DEPTH_M / c.depth_m;
        let half = span_cells as f64 / 2.0 * scale as f64;
        let off = |j: usize| -> f64 {
            if grid == 1 {
                0.0
            } else {
                -half + j as f64 * (2.0 * half / (grid as f64 - 1.0))
            }
        };
        for gy in 0..grid {
            for gx in 0..grid {
                let upos = c.u as f64 + off(gx);
                let vpos = c.v as f64 + off(gy);
                data.push((2.0 * upos / (ww as f64 - 1.0) - 1.0) as f32);
                data.push((2.0 * vpos / (hh as f64 - 1.0) - 1.0) as f32);
            }
        }
    }
    Tensor::new(&[1, k * grid * grid, 2], data)
}

/// Pull per-region feature grids out of the fused map with a single batched
/// bilinear lookup, then lay them out as [k, C, g, g].
pub fn propagate_region_features<E: Elem>(
    fused: &Tensor<E>,
    coords: &Tensor<E>,
    k: usize,
    grid: usize,
) -> Result<Tensor<E>> {
    if coords.shape() != [1, k * grid * grid, 2] {
        return Err(Error::ShapeMismatch(format!(
            "coords {:?} vs {} regions of {grid}x{grid}",
            coords.shape(),
            k
        )));
    }
    let sampled = grid_sample_bilinear(fused, coords); // [1, C, k·g²]
    let c = fused.shape()[1];
    let gg = grid * grid;
    let mut out = Tensor::zeros(&[k, c, grid, grid]);
    for r in 0..k {
        for ci in 0..c {
            for p in 0..gg {
                out.data_mut()[(r * c + ci) * gg + p] = sampled.data()[ci * (k * gg) + r * gg + p];
            }
        }
    }
    Ok(out)
}

/// Backward of [`propagate_region_features`] into the fused map (sampling
/// locations are treated as fixed).
pub fn propagate_region_features_backward<E: Elem>(
    fused: &Tensor<E>,
    coords: &Tensor<E>,
    d_features: &Tensor<E>,
) -> Tensor<E> {
    let (k, c) = (d_features.shape()[0], d_features.shape()[1]);
    let gg = d_features.shape()[2] * d_features.shape()[3];
    let mut d_sampled = Tensor::zeros(&[1, c, k * gg]);
    for r in 0..k {
        for ci in 0..c {
            for p in 0..gg {
                d_sampled.data_mut()[ci * (k * gg) + r * gg + p] =
                    d_features.data()[(r * c + ci) * gg + p];
            }
        }
    }
    let (d_fused, _d_coords) = grid_sample_bilinear_backward(fused, coords, &d_sampled);
    d_fused
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heat(hh: usize, ww: usize, vals: &[f32]) -> Tensor {
        Tensor::new(&[1, hh, ww], vals.to_vec())
    }

    #[test]
    fn candidates_threshold_sort_and_cap() {
        let h = heat(2, 3, &[0.9, 0.2, 0.5, 0.3, 0.95, 0.1]);
        let c = select_candidates(&h, 0.3, 3);
        let got: Vec<(usize, usize)> = c.iter().map(|x| (x.v, x.u)).collect();
        assert_eq!(got, vec![(1, 1), (0, 0), (0, 2)]);
    }

    #[test]
    fn candidates_fall_back_to_argmax() {
        let h = heat(2, 3, &[0.1, 0.2, 0.05, 0.15, 0.25, 0.1]);
        let c = select_candidates(&h, 0.9, 10);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].v, c[0].u, c[0].score), (1, 1, 0.25));
    }

    #[test]
    fn candidate_score_ties_keep_row_major_order() {
        let h = heat(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let c = select_candidates(&h, 0.3, 10);
        let got: Vec<(usize, usize)> = c.iter().map(|x| (x.v, x.u)).collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn fps_collinear_picks_far_end() {
        let cells: Vec<CellScore> = [(0usize, 0.9f32), (1, 0.5), (2, 0.5), (10, 0.5)]
            .iter()
            .map(|&(u, score)| CellScore { v: 0, u, score })
            .collect();
        let picked = farthest_point_sampling(&cells, 2);
        assert_eq!(picked, vec![0, 3]);
    }

    #[test]
    fn fps_k_larger_than_input_returns_all() {
        let cells = vec![
            CellScore {
                v: 0,
                u: 0,
                score: 0.5,
            },
            CellScore {
                v: 3,
                u: 4,
                score: 0.9,
            },
        ];
        let picked = farthest_point_sampling(&cells, 10);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0], 1); // higher score seeds
    }

    #[test]
    fn depth_attaches_block_mean_then_median_then_default() {
        let mut d = vec![500.0f32; 64];
        // cell (0,1): two dropouts among 16 readings of 600
        for r in 0..4 {
            for c in 4..8 {
                d[r * 8 + c] = 600.0;
            }
        }
        d[0 * 8 + 4] = 0.0;
        d[1 * 8 + 5] = 0.0;
        // cell (1,0): entire block invalid → frame median
        for r in 4..8 {
            for c in 0..4 {
                d[r * 8 + c] = 0.0;
            }
        }
        let depth = Tensor::new(&[1, 8, 8], d);
        let cells = vec![
            CellScore {
                v: 0,
                u: 0,
                score: 1.0,
            },
            CellScore {
                v: 0,
                u: 1,
                score: 1.0,
            },
            CellScore {
                v: 1,
                u: 0,
                score: 1.0,
            },
        ];
        let rc = attach_depths(&cells, &depth, 4);
        assert_eq!(rc[0].depth_m, 0.5);
        assert_eq!(rc[1].depth_m, 0.6); // mean of the 14 valid 600s
                                        // frame median over valid {500×32, 600×14} → 500
        assert_eq!(rc[2].depth_m, 0.5);

        let empty = Tensor::zeros(&[1, 8, 8]);
        let rc = attach_depths(&cells[..1], &empty, 4);
        assert_eq!(rc[0].depth_m, FALLBACK_DEPTH_M);
    }

    #[test]
    fn grid_coords_exact_for_reference_depth() {
        let c = RegionCenter {
            v: 4,
            u: 4,
            depth_m: 0.5,
            graspability: 1.0,
        };
        let coords = region_grid_coords(&[c], 3, 2.0, (9, 9));
        assert_eq!(coords.shape(), &[1, 9, 2]);
        // offsets −1, 0, +1 cells → u ∈ {3,4,5} → x = 2u/8 − 1
        let x0 = coords.data()[0];
        let y0 = coords.data()[1];
        assert!((x0 - (-0.25)).abs() < 1e-6);
        assert!((y0 - (-0.25)).abs() < 1e-6);
        let center = &coords.data()[4 * 2..4 * 2 + 2];
        assert!(center[0].abs() < 1e-6 && center[1].abs() < 1e-6);
    }

    #[test]
    fn grid_footprint_shrinks_with_depth() {
        let near = RegionCenter {
            v: 4,
            u: 4,
            depth_m: 0.5,
            graspability: 1.0,
        };
        let far = RegionCenter {
            v: 4,
            u: 4,
            depth_m: 1.0,
            graspability: 1.0,
        };
        let spread = |c: RegionCenter| {
            let t = region_grid_coords(&[c], 3, 2.0, (9, 9));
            let xs: Vec<f32> = t.data().chunks(2).map(|p| p[0]).collect();
            xs.iter().cloned().fold(f32::MIN, f32::max)
                - xs.iter().cloned().fold(f32::MAX, f32::min)
        };
        let s_near = spread(near);
        let s_far = spread(far);
        assert!((s_near - 2.0 * s_far).abs() < 1e-6, "{s_near} vs {s_far}");
    }

    #[test]
    fn propagate_repacks_per_region() {
        // 4×4 map, channel c holds value 100c + row·4 + col
        let c = 2;
        let mut vals = Vec::new();
        for ci in 0..c {
            for i in 0..16 {
                vals.push((100 * ci + i) as f32);
            }
        }
        let fused = Tensor::new(&[1, c, 4, 4], vals);
        let centers = vec![
            RegionCenter {
                v: 1,
                u: 1,
                depth_m: 0.5,
                graspability: 1.0,
            },
            RegionCenter {
                v: 2,
                u: 2,
                depth_m: 0.5,
                graspability: 1.0,
            },
        ];
        // span 2 cells at reference depth, g=2 → offsets ±0.5... use g=3 to
        // land exactly on lattice: offsets −1, 0, 1
        let coords = region_grid_coords(&centers, 3, 2.0, (4, 4));
        let feats = propagate_region_features(&fused, &coords, 2, 3).unwrap();
        assert_eq!(feats.shape(), &[2, 2, 3, 3]);
        // region 0, channel 1, grid (0,0) → map (0,0) = 100
        assert_eq!(feats.data()[(0 * 2 + 1) * 9], 100.0);
        // region 1, channel 0, grid (2,2) → map (3,3) = 15
        assert_eq!(feats.data()[(1 * 2 + 0) * 9 + 8], 15.0);
    }

    #[test]
    fn propagate_backward_conserves_mass_inside() {
        let fused: Tensor = Tensor::full(&[1, 1, 6, 6], 1.0);
        let centers = vec![RegionCenter {
            v: 2,
            u: 2,
            depth_m: 0.5,
            graspability: 1.0,
        }];
        let coords = region_grid_coords(&centers, 2, 1.0, (6, 6));
        let d_feat = Tensor::full(&[1, 1, 2, 2], 1.0);
        let d_fused = propagate_region_features_backward(&fused, &coords, &d_feat);
        let total: f32 = d_fused.data().iter().sum();
        assert!((total - 4.0).abs() < 1e-5, "mass {total}");
    }

    #[test]
    fn region_size_jitter_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let mean: f64 = (0..n)
            .map(|_| sample_region_size(&mut rng, 12.0, true) as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 12.0).abs() < 0.24, "mean {mean}");
        assert_eq!(sample_region_size(&mut rng, 12.0, false), 12.0);
    }
}
