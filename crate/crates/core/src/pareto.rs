//! Two-objective Pareto utilities: dominance, exact sweep hypervolume,
//! hypervolume improvement and greedy HVI batch selection. All objectives are
//! minimized.

use std::io::Write;
use std::path::Path;

use crate::codec::fmt_f64;
use crate::domain::ObjectivePair;
use crate::error::Result;

pub type Point = (f64, f64);

/// Reference point used in min-max normalized objective space.
pub const NORMALIZED_REFERENCE: Point = (1.1, 1.1);

/// `a` dominates `b`: no worse in both objectives and strictly better in one.
pub fn dominates(a: Point, b: Point) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Indices of the nondominated points, ordered by `f₁` ascending. Of several
/// identical points only the first is kept.
pub fn nondominated_indices(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| !points[i].0.is_nan() && !points[i].1.is_nan())
        .collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for i in order {
        if points[i].1 < best {
            best = points[i].1;
            out.push(i);
        }
    }
    out
}

pub fn nondominated(points: &[Point]) -> Vec<Point> {
    nondominated_indices(points)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontSet {
    pub points: Vec<Point>,
    pub reference: Point,
}

impl FrontSet {
    pub fn new(points: Vec<Point>, reference: Point) -> Self {
        Self { points, reference }
    }

    pub fn hypervolume(&self) -> f64 {
        hypervolume(&self.points, self.reference)
    }
}

/// Points strictly inside the reference box, reduced to their nondominated
/// staircase (sorted by `f₁` ascending, `f₂` descending).
fn staircase(points: &[Point], reference: Point) -> Vec<Point> {
    let inside: Vec<Point> = points
        .iter()
        .copied()
        .filter(|p| p.0 < reference.0 && p.1 < reference.1)
        .collect();
    nondominated(&inside)
}

/// Exact 2-D hypervolume by the sweep method.
pub fn hypervolume(points: &[Point], reference: Point) -> f64 {
    let stairs = staircase(points, reference);
    let mut hv = 0.0;
    for (k, p) in stairs.iter().enumerate() {
        let next = stairs.get(k + 1).map_or(reference.0, |q| q.0);
        hv += (next - p.0) * (reference.1 - p.1);
    }
    hv
}

/// `HV(existing ∪ candidates) − HV(existing)`.
pub fn hvi(existing: &FrontSet, candidates: &[Point]) -> f64 {
    let mut union = existing.points.clone();
    union.extend_from_slice(candidates);
    let gain = hypervolume(&union, existing.reference) - existing.hypervolume();
    gain.max(0.0)
}

/// Area dominated by `c` alone, given a staircase from [`staircase`].
/// Exactly zero when `c` is weakly dominated or outside the box.
fn exclusive_contribution(stairs: &[Point], c: Point, reference: Point) -> f64 {
    if !(c.0 < reference.0 && c.1 < reference.1) {
        return 0.0;
    }
    let mut height = reference.1;
    let mut k = 0;
    while k < stairs.len() && stairs[k].0 <= c.0 {
        height = height.min(stairs[k].1);
        k += 1;
    }
    let mut area = 0.0;
    let mut u = c.0;
    while k < stairs.len() && height > c.1 {
        let p = stairs[k];
        area += (p.0 - u) * (height - c.1);
        u = p.0;
        height = height.min(p.1);
        k += 1;
    }
    if height > c.1 {
        area += (reference.0 - u) * (height - c.1);
    }
    area
}

fn is_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-3)
}

/// Greedy sequential HVI selection. Returns pool indices in pick order:
/// exactly `min(batch, pool.len())` distinct entries.
///
/// Each round takes the candidate with the largest marginal HVI against
/// `existing` plus everything already picked, breaking ties toward smaller
/// `f₂` and then lower index. Once no remaining candidate adds any volume,
/// the rest of the batch is filled by ascending `f₂`.
pub fn select_batch(existing: &FrontSet, pool: &[Point], batch: usize) -> Vec<usize> {
    let reference = existing.reference;
    let want = batch.min(pool.len());
    let mut chosen = vec![false; pool.len()];
    let mut picked = Vec::with_capacity(want);
    let mut front = existing.points.clone();

    while picked.len() < want {
        let stairs = staircase(&front, reference);
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in pool.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let gain = exclusive_contribution(&stairs, c, reference);
            let better = match best {
                None => true,
                Some((j, g)) => {
                    if is_tie(gain, g) {
                        pool[i].1 < pool[j].1
                    } else {
                        gain > g
                    }
                }
            };
            if better {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, gain)) if gain > 0.0 => {
                chosen[i] = true;
                picked.push(i);
                front.push(pool[i]);
            }
            _ => break,
        }
    }

    if picked.len() < want {
        let mut rest: Vec<usize> = (0..pool.len()).filter(|&i| !chosen[i]).collect();
        rest.sort_by(|&a, &b| pool[a].1.total_cmp(&pool[b].1).then(a.cmp(&b)));
        picked.extend(rest.into_iter().take(want - picked.len()));
    }
    picked
}

/// Min-max scaling of both objectives by an observed range; a degenerate
/// range scales by 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    lo: Point,
    span: Point,
}

impl Normalizer {
    pub fn fit(points: &[Point]) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
        if points.is_empty() {
            return Self { lo: (0.0, 0.0), span: (1.0, 1.0) };
        }
        let span = |a: f64, b: f64| if b - a > 0.0 { b - a } else { 1.0 };
        Self {
            lo,
            span: (span(lo.0, hi.0), span(lo.1, hi.1)),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        ((p.0 - self.lo.0) / self.span.0, (p.1 - self.lo.1) / self.span.1)
    }
}

/// Writes a `f1,f2,source` CSV.
pub fn write_front_csv(path: &Path, pairs: &[ObjectivePair]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "f1,f2,source")?;
    for p in pairs {
        writeln!(out, "{},{},{}", fmt_f64(p.f1), fmt_f64(p.f2), p.f2_source.as_str())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::F2Source;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nondominated(points: &[Point]) -> Vec<bool> {
        points
            .iter()
            .map(|&p| !points.iter().any(|&q| dominates(q, p)))
            .collect()
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[], (1.0, 1.0)), 0.0);
        assert_eq!(hypervolume(&[(1.0, 2.0), (2.0, 1.0)], (3.0, 3.0)), 3.0);
        assert_eq!(hypervolume(&[(0.0, 0.0)], (1.0, 1.0)), 1.0);
        // outside the box contributes nothing
        assert_eq!(hypervolume(&[(1.5, 0.0), (0.0, 1.0)], (1.0, 1.0)), 0.0);
    }

    #[test]
    fn hvi_examples() {
        let existing = FrontSet::new(vec![(0.2, 0.2)], (1.0, 1.0));
        assert_eq!(hvi(&existing, &[(0.5, 0.5)]), 0.0);
        assert_eq!(hvi(&existing, &[(0.2, 0.2)]), 0.0);
        let empty = FrontSet::new(vec![], (1.0, 1.0));
        assert_eq!(hvi(&empty, &[(0.0, 0.0)]), 1.0);
    }

    #[test]
    fn nondominated_examples() {
        assert_eq!(nondominated(&[(1.0, 1.0), (2.0, 2.0)]), vec![(1.0, 1.0)]);
        assert_eq!(nondominated(&[(2.0, 1.0), (1.0, 2.0)]), vec![(1.0, 2.0), (2.0, 1.0)]);
        assert_eq!(nondominated_indices(&[(1.0, 1.0), (1.0, 1.0)]), vec![0]);
    }

    #[test]
    fn nondominated_matches_quadratic_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..1000)
            .map(|_| ((rng.random::<f64>() * 50.0).round(), (rng.random::<f64>() * 50.0).round()))
            .collect();
        let keep = nondominated_indices(&pts);
        let flags = brute_nondominated(&pts);
        for &i in &keep {
            assert!(flags[i]);
        }
        for (i, p) in pts.iter().enumerate() {
            if !keep.contains(&i) {
                assert!(keep.iter().any(|&k| dominates(pts[k], *p) || pts[k] == *p));
            }
        }
    }

    #[test]
    fn exclusive_contribution_agrees_with_hv_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let pts: Vec<Point> = (0..rng.random_range(0..15))
                .map(|_| (rng.random(), rng.random()))
                .collect();
            let c = (rng.random::<f64>() * 1.2, rng.random::<f64>() * 1.2);
            let fs = FrontSet::new(pts.clone(), (1.1, 1.1));
            let stairs = staircase(&pts, fs.reference);
            let direct = exclusive_contribution(&stairs, c, fs.reference);
            assert!((direct - hvi(&fs, &[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_from_single_pool() {
        let fs = FrontSet::new(vec![], (1.0, 1.0));
        assert_eq!(select_batch(&fs, &[(0.3, 0.3)], 1), vec![0]);
        assert_eq!(select_batch(&fs, &[(0.3, 0.3)], 4), vec![0]);
    }

    #[test]
    fn batch_of_two_from_three() {
        let fs = FrontSet::new(vec![], (1.0, 1.0));
        let pool = [(0.1, 0.9), (0.9, 0.1), (0.5, 0.5)];
        let picked = select_batch(&fs, &pool, 2);
        // (0.5,0.5) adds 0.25; each corner then adds 0.04, tie goes to smaller f2
        assert_eq!(picked, vec![2, 1]);
        // exhaustive pair oracle: best joint HVI is 0.29, reached by the greedy pair
        let mut best = 0.0f64;
        for a in 0..3 {
            for b in a + 1..3 {
                best = best.max(hvi(&fs, &[pool[a], pool[b]]));
            }
        }
        let greedy = hvi(&fs, &[pool[picked[0]], pool[picked[1]]]);
        assert!((greedy - best).abs() < 1e-12);
        assert!((best - 0.29).abs() < 1e-12);
    }

    #[test]
    fn batch_falls_back_to_smallest_f2() {
        let fs = FrontSet::new(vec![(0.0, 0.0)], (1.0, 1.0));
        let pool = [(0.5, 0.7), (0.2, 0.3), (0.9, 0.3)];
        assert_eq!(select_batch(&fs, &pool, 2), vec![1, 2]);
    }

    #[test]
    fn normalizer_maps_range_to_unit() {
        let n = Normalizer::fit(&[(1.0, 10.0), (3.0, 30.0)]);
        assert_eq!(n.apply((1.0, 10.0)), (0.0, 0.0));
        assert_eq!(n.apply((3.0, 30.0)), (1.0, 1.0));
        let flat = Normalizer::fit(&[(2.0, 5.0), (2.0, 5.0)]);
        assert_eq!(flat.apply((2.5, 5.0)), (0.5, 0.0));
    }

    #[test]
    fn front_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.csv");
        let pairs = [
            ObjectivePair::new(0.25, 0.5, F2Source::True).unwrap(),
            ObjectivePair::new(0.75, 0.125, F2Source::Surrogate).unwrap(),
        ];
        write_front_csv(&path, &pairs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "f1,f2,source");
        assert!(lines[1].ends_with(",true"));
        assert!(lines[2].ends_with(",surrogate"));
        assert_eq!(lines.len(), 3);
    }

    fn points() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..30)
    }

    proptest! {
        #[test]
        fn hv_is_monotone(pts in points(), extra in (0.0f64..1.2, 0.0f64..1.2)) {
            let before = hypervolume(&pts, (1.1, 1.1));
            let mut more = pts.clone();
            more.push(extra);
            prop_assert!(hypervolume(&more, (1.1, 1.1)) >= before - 1e-15);
        }

        #[test]
        fn hv_is_translation_invariant(pts in points(), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
            let a = hypervolume(&pts, (1.0, 1.0));
            let shifted: Vec<Point> = pts.iter().map(|p| (p.0 + dx, p.1 + dy)).collect();
            let b = hypervolume(&shifted, (1.0 + dx, 1.0 + dy));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn hvi_zero_iff_weakly_dominated(pts in points(), c in (0.0f64..1.0, 0.0f64..1.0)) {
            let fs = FrontSet::new(pts.clone(), (1.0, 1.0));
            let gain = hvi(&fs, &[c]);
            let covered = pts.iter().any(|&q| q.0 <= c.0 && q.1 <= c.1);
            prop_assert_eq!(gain == 0.0, covered);
        }

        #[test]
        fn select_batch_is_deterministic_and_distinct(
            pts in points(),
            pool in prop::collection::vec((0.0f64..1.2, 0.0f64..1.2), 1..20),
            batch in 1usize..8,
        ) {
            let fs = FrontSet::new(pts, (1.1, 1.1));
            let a = select_batch(&fs, &pool, batch);
            let b = select_batch(&fs, &pool, batch);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), batch.min(pool.len()));
            let mut sorted = a.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), a.len());
        }
    }
}
