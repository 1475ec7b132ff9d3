//! Text exports: the surface as an OBJ mesh and scalar fields as CSV.

use std::fmt::Write;

use cmc_core::algebra::{Field, FieldValue, Mat2, MatField};
use cmc_core::frames::quaternion_coords;
use cmc_core::Complex64;

/// Smallest chordal distance from the projection centre to a vertex for the
/// antipode of `f(z₀)` to be kept.
pub const CENTER_CLEARANCE: f64 = 0.25;

fn quaternion(c: [f64; 4]) -> Mat2 {
    let p = Complex64::new(c[0], c[1]);
    let q = Complex64::new(c[2], c[3]);
    Mat2::new(p, q, -q.conj(), p.conj())
}

fn distance(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fixed candidate centres: the vertices of a 24-cell (`±1` on one axis and
/// `(±½, ±½, ±½, ±½)`) and of its dual (`(±1, ±1, 0, 0)/√2` and permutations).
fn candidate_centers() -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(48);
    for k in 0..4 {
        for s in [-1.0, 1.0] {
            let mut c = [0.0; 4];
            c[k] = s;
            out.push(c);
        }
    }
    for bits in 0..16u32 {
        out.push(std::array::from_fn(|k| if bits >> k & 1 == 1 { -0.5 } else { 0.5 }));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..4 {
        for b in a + 1..4 {
            for (sa, sb) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                let mut c = [0.0; 4];
                c[a] = sa * r;
                c[b] = sb * r;
                out.push(c);
            }
        }
    }
    out
}

/// Projection centre in the frame `g = f(z₀)*f`: the antipode `−1` when it
/// clears every vertex by [`CENTER_CLEARANCE`], otherwise the first candidate
/// farthest from the vertices. Surfaces symmetric under `x ↦ −x`, such as the
/// Clifford torus, pass through the antipode.
pub fn projection_center(g: &[[f64; 4]]) -> [f64; 4] {
    let clearance = |c: [f64; 4]| g.iter().map(|p| distance(*p, c)).fold(f64::INFINITY, f64::min);
    let antipode = [-1.0, 0.0, 0.0, 0.0];
    let mut best = (antipode, clearance(antipode));
    if best.1 >= CENTER_CLEARANCE {
        return antipode;
    }
    for c in candidate_centers() {
        let d = clearance(c);
        if d > best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Projects `f ⊂ S³` stereographically into ℝ³.
///
/// In `g = f(z₀)*f` the base point is `1`. With centre `c` from
/// [`projection_center`], `h = −c*g` sends `c` to `−1`, and a point
/// `[[p, q], [−q̄, p̄]]` lands at `(Im p, Re q, Im q)/(1 + Re p)`.
pub fn stereographic(f: &MatField) -> Vec<[f64; 3]> {
    let base = f.values[0].adjoint();
    let g: Vec<[f64; 4]> = f.values.iter().map(|m| quaternion_coords(&(base * *m))).collect();
    let turn = quaternion(projection_center(&g)).adjoint().scale(Complex64::new(-1.0, 0.0));
    g.iter()
        .map(|c| {
            let [w, x, y, z] = quaternion_coords(&(turn * quaternion(*c)));
            let d = 1.0 + w;
            [x / d, y / d, z / d]
        })
        .collect()
}

/// Vertices in grid order and quad faces, closing up along periodic axes.
pub fn obj(f: &MatField) -> String {
    let g = f.grid;
    let mut out = String::new();
    for [x, y, z] in stereographic(f) {
        let _ = writeln!(out, "v {x} {y} {z}");
    }
    let cells = |n: usize, periodic: bool| if periodic { n } else { n - 1 };
    let vertex = |i: usize, j: usize| g.idx(i % g.nx, j % g.ny) + 1;
    for j in 0..cells(g.ny, f.periodic[1]) {
        for i in 0..cells(g.nx, f.periodic[0]) {
            let _ =
                writeln!(out, "f {} {} {} {}", vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1));
        }
    }
    out
}

/// `x,y,value` rows in grid order.
pub fn csv<T: FieldValue>(field: &Field<T>, value: impl Fn(T) -> f64) -> String {
    let g = field.grid;
    let mut out = String::from("x,y,value\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            let z = g.z(i, j);
            let _ = writeln!(out, "{},{},{}", z.re, z.im, value(field.at(i, j)));
        }
    }
    out
}
