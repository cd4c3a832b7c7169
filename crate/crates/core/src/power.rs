//! Grid c-transform under the quadratic cost.
//!
//! With `v_i(y) = ‖y − x_i‖²/2 − φ_i = ‖y‖²/2 − ℓ_i(y)` and
//! `ℓ_i(y) = ⟨x_i, y⟩ − ‖x_i‖²/2 + φ_i`, the minimum over atoms is the upper
//! envelope of affine functions. Along one grid row only the last coordinate
//! `t` varies, so each `ℓ_i` is a line `s_i t + b_i` with slope `s_i` the
//! atom's last coordinate. Sorting atoms by slope once gives every row's
//! envelope in `O(m)`.
//!
//! The envelope only nominates candidates. Lines within a small tolerance of
//! the maximum (hull neighbours, parallel twins, lines concurrent at a
//! breakpoint) are all kept, and the winner is chosen with [`shifted_cost`],
//! the exact expression of the brute-force sweep, lowest index first.

use rayon::prelude::*;

use crate::measures::RegularGrid;

/// `‖y − x‖²/2 − φ`, summed in axis order.
#[inline]
pub(crate) fn shifted_cost(y: &[f64], x: &[f64], phi: f64) -> f64 {
    let mut d2 = 0.0;
    for (a, b) in y.iter().zip(x) {
        let t = a - b;
        d2 += t * t;
    }
    0.5 * d2 - phi
}

/// Atom indices sorted by their last coordinate, then by index.
pub(crate) fn slope_order(dim: usize, points: &[f64]) -> Vec<usize> {
    let m = points.len() / dim;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| points[i * dim + dim - 1].total_cmp(&points[j * dim + dim - 1]).then(i.cmp(&j)));
    order
}

#[derive(Clone, Copy)]
struct Entry {
    atom: usize,
    s: f64,
    b: f64,
    /// Where this line starts to dominate.
    left: f64,
}

impl Entry {
    #[inline]
    fn at(&self, t: f64) -> f64 {
        self.s * t + self.b
    }
}

/// Envelope entries plus, per entry, the lines equal to it within tolerance
/// or meeting the envelope at its left breakpoint. `extra` holds
/// `(entry position, atom)` pairs sorted by position.
struct Envelope {
    hull: Vec<Entry>,
    extra: Vec<(usize, usize)>,
}

impl Envelope {
    fn extras(&self, pos: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.extra.partition_point(|e| e.0 < pos);
        self.extra[start..].iter().take_while(move |e| e.0 == pos).map(|e| e.1)
    }
}

/// Values and lowest-index argmins of `min_i v_i` at every grid node.
pub(crate) fn grid_c_transform(grid: &RegularGrid, points: &[f64], phi: &[f64], order: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let d = grid.dim();
    let last = d - 1;
    let n = grid.shape()[last];
    let rows = grid.len() / n;
    let base: Vec<f64> = (0..phi.len())
        .map(|i| {
            let x = &points[i * d..(i + 1) * d];
            phi[i] - 0.5 * x.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let t_scale = grid.domain().lo()[last].abs().max(grid.domain().hi()[last].abs());

    let per_row: Vec<Vec<(f64, usize)>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut y = vec![0.0; d];
            grid.node_into(r * n, &mut y);
            let lines: Vec<(usize, f64, f64)> = order
                .iter()
                .map(|&i| {
                    let x = &points[i * d..(i + 1) * d];
                    let b = base[i] + (0..last).map(|a| x[a] * y[a]).sum::<f64>();
                    (i, x[last], b)
                })
                .collect();
            let scale = 1.0 + lines.iter().fold(0.0f64, |s, l| s.max(l.2.abs()).max(l.1.abs() * t_scale));
            let tol = 1e-11 * scale;
            let env = upper_envelope(&lines, tol);
            let hull = &env.hull;

            let mut out = Vec::with_capacity(n);
            let mut p = 0;
            let mut candidates = Vec::new();
            for k in 0..n {
                grid.node_into(r * n + k, &mut y);
                let t = y[last];
                while p + 1 < hull.len() && hull[p + 1].left <= t {
                    p += 1;
                }
                let top = hull[p].at(t);
                let mut lo = p;
                while lo > 0 && hull[lo - 1].at(t) >= top - tol {
                    lo -= 1;
                }
                let mut hi = p;
                while hi + 1 < hull.len() && hull[hi + 1].at(t) >= top - tol {
                    hi += 1;
                }
                candidates.clear();
                candidates.extend(hull[lo..=hi].iter().map(|h| h.atom));
                if !env.extra.is_empty() {
                    for q in lo..=(hi + 1).min(hull.len() - 1) {
                        candidates.extend(env.extras(q));
                    }
                }
                let mut best = (f64::INFINITY, usize::MAX);
                for &i in &candidates {
                    let v = shifted_cost(&y, &points[i * d..(i + 1) * d], phi[i]);
                    if v < best.0 || (v == best.0 && i < best.1) {
                        best = (v, i);
                    }
                }
                out.push(best);
            }
            out
        })
        .collect();

    per_row.into_iter().flatten().unzip()
}

/// Upper envelope of lines `(atom, slope, intercept)` given in
/// nondecreasing slope order.
fn upper_envelope(lines: &[(usize, f64, f64)], tol: f64) -> Envelope {
    let mut hull: Vec<Entry> = Vec::with_capacity(64);
    let mut extra: Vec<(usize, usize)> = Vec::new();
    let mut g = 0;
    while g < lines.len() {
        let mut lead = lines[g];
        let mut end = g + 1;
        while end < lines.len() && lines[end].1 == lead.1 {
            if lines[end].2 > lead.2 {
                lead = lines[end];
            }
            end += 1;
        }
        let (atom, s, b) = lead;

        // pending extras are tagged with usize::MAX until the position is known
        let mut pending_from = extra.len();
        if end > g + 1 {
            extra.extend(
                lines[g..end]
                    .iter()
                    .filter(|l| l.0 != atom && l.2 >= b - tol)
                    .map(|l| (usize::MAX, l.0)),
            );
        }
        g = end;
        while hull.len() > 1 {
            let top = hull[hull.len() - 1];
            let prev = hull[hull.len() - 2];
            // new line minus top where the top starts, times the slope gap
            let ds = top.s - prev.s;
            let margin = (b - top.b) * ds + (s - top.s) * (prev.b - top.b);
            if margin < -tol * ds {
                break;
            }
            hull.pop();
            if extra.is_empty() {
                if margin <= tol * ds {
                    extra.push((usize::MAX, top.atom));
                    pending_from = 0;
                }
                continue;
            }
            let pos = hull.len();
            let own = extra[..pending_from].iter().rposition(|e| e.0 != pos).map_or(0, |k| k + 1);
            if margin <= tol * ds {
                extra.push((usize::MAX, top.atom));
                for e in &mut extra[own..] {
                    e.0 = usize::MAX;
                }
            } else {
                extra.drain(own..pending_from);
            }
            pending_from = own;
        }
        if pending_from < extra.len() {
            let pos = hull.len();
            for e in &mut extra[pending_from..] {
                e.0 = pos;
            }
        }
        hull.push(Entry {
            atom,
            s,
            b,
            left: f64::NEG_INFINITY,
        });
    }
    for k in 1..hull.len() {
        hull[k].left = (hull[k - 1].b - hull[k].b) / (hull[k].s - hull[k - 1].s);
    }
    Envelope { hull, extra }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::BoxDomain;

    fn brute(grid: &RegularGrid, points: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let d = grid.dim();
        let mut y = vec![0.0; d];
        (0..grid.len())
            .map(|j| {
                grid.node_into(j, &mut y);
                let mut best = (f64::INFINITY, 0);
                for (i, &p) in phi.iter().enumerate() {
                    let v = shifted_cost(&y, &points[i * d..(i + 1) * d], p);
                    if v < best.0 {
                        best = (v, i);
                    }
                }
                best
            })
            .unzip()
    }

    fn check(grid: &RegularGrid, points: &[f64], phi: &[f64]) {
        let order = slope_order(grid.dim(), points);
        let fast = grid_c_transform(grid, points, phi, &order);
        let slow = brute(grid, points, phi);
        assert_eq!(fast.1, slow.1);
        assert_eq!(fast.0, slow.0);
    }

    #[test]
    fn lattice_ties() {
        // atoms on grid nodes and on cell corners produce many exact ties
        let g = RegularGrid::new(BoxDomain::unit(2).unwrap(), vec![8, 8]).unwrap();
        let mut pts = Vec::new();
        for a in 0..5 {
            for b in 0..5 {
                pts.extend([a as f64 * 0.25, b as f64 * 0.25]);
            }
        }
        check(&g, &pts, &[0.0; 25]);
        let nodes = g.nodes();
        check(&g, &nodes, &vec![0.0; 64]);
        let g3 = RegularGrid::new(BoxDomain::unit(3).unwrap(), vec![4, 4, 4]).unwrap();
        let mut pts3 = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    pts3.extend([a as f64 * 0.5, b as f64 * 0.5, c as f64 * 0.5]);
                }
            }
        }
        check(&g3, &pts3, &vec![0.0; 27]);
    }

    #[test]
    fn repeated_slopes_and_points() {
        let g = RegularGrid::new(BoxDomain::unit(2).unwrap(), vec![10, 6]).unwrap();
        let pts = [0.1, 0.5, 0.9, 0.5, 0.5, 0.5, 0.5, 0.2, 0.5, 0.2, 0.3, 0.8];
        check(&g, &pts, &[0.0, 0.0, 0.01, 0.0, 0.0, -0.2]);
    }

    #[test]
    fn random_instances_match_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, 0);
        for trial in 0..40 {
            let d = 2 + trial % 2;
            let shape = if d == 2 { vec![13, 17] } else { vec![5, 6, 7] };
            let g = RegularGrid::new(BoxDomain::unit(d).unwrap(), shape).unwrap();
            let m = 1 + trial * 7;
            let pts: Vec<f64> = (0..m * d).map(|_| rng.random::<f64>()).collect();
            let phi: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 0.3 - 0.1).collect();
            check(&g, &pts, &phi);
        }
    }
}
