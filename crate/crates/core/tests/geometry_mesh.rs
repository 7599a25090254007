mod common;

use biharm_core::mesh::*;
use common::*;
use rand::Rng;

const CASES: [(&str, f64); 6] = [
    ("square", 0.5),
    ("lshape", 0.5),
    ("lshape", 0.2),
    ("lshape", 0.05),
    ("convex_11pi12", 0.5),
    ("convex_11pi12", 0.1),
];

#[test]
fn refinements_stay_conforming() {
    for (d, k) in CASES {
        check_conformity(&hierarchy(d, k, 4)).unwrap_or_else(|e| panic!("{d} κ={k}: {e}"));
    }
}

#[test]
fn refinements_conserve_area() {
    for (d, k) in CASES {
        check_area(&hierarchy(d, k, 4)).unwrap_or_else(|e| panic!("{d} κ={k}: {e}"));
    }
}

#[test]
fn refinement_is_deterministic() {
    for (d, k) in CASES {
        check_determinism(d, k, 4).unwrap();
    }
}

#[test]
fn angles_stay_bounded_below() {
    for (d, k) in CASES {
        check_min_angle(&hierarchy(d, k, 5)).unwrap_or_else(|e| panic!("{d} κ={k}: {e}"));
    }
}

#[test]
fn uniform_levels_quadruple() {
    let h = hierarchy("lshape", 0.5, 4);
    for l in 1..=4 {
        assert_eq!(h.levels[l].num_triangles(), 4 * h.levels[l - 1].num_triangles());
        let d0 = (0..h.levels[l - 1].num_triangles()).map(|t| h.levels[l - 1].diameter(t)).fold(0.0, f64::max);
        let d1 = (0..h.levels[l].num_triangles()).map(|t| h.levels[l].diameter(t)).fold(0.0, f64::max);
        assert!((d1 - 0.5 * d0).abs() < 1e-14);
    }
}

#[test]
fn located_points_lie_in_their_triangle() {
    let h = hierarchy("lshape", 0.2, 4);
    let mut rng = rng();
    for _ in 0..200 {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        match h.locate_point(4, p) {
            Ok((t, l)) => {
                assert!(h.domain.contains(p));
                assert!(l.iter().all(|&x| x >= -LOCATE_TOL));
                let q = h.levels[4].point_from_barycentric(t, l);
                assert!((q[0] - p[0]).abs() < 1e-13 && (q[1] - p[1]).abs() < 1e-13);
                let anc = h.ancestor(4, t, 2);
                assert!(h.levels[2].barycentric(anc, p).iter().all(|&x| x >= -1e-12));
            }
            Err(_) => assert!(!h.domain.contains(p)),
        }
    }
}

#[test]
fn corner_layers_shrink_geometrically() {
    let kappa = 0.2;
    let h = hierarchy("lshape", kappa, 4);
    let corner = *h.domain.graded_corners.iter().next().unwrap();
    let cp = h.levels[0].corner_point(corner).unwrap();
    let d0 = (0..h.levels[0].num_triangles())
        .filter(|&t| h.levels[0].triangles[t].contains(&cp))
        .map(|t| h.levels[0].diameter(t))
        .fold(0.0, f64::max);
    for l in 1..=4 {
        let m = &h.levels[l];
        let cp = m.corner_point(corner).unwrap();
        let layers = h.mesh_layers(l, corner).unwrap();
        for t in 0..m.num_triangles() {
            let touches = m.triangles[t].contains(&cp);
            assert_eq!(touches, layers[t] == Some(l));
            if touches {
                let ratio = m.diameter(t) / d0;
                assert!(ratio <= kappa.powi(l as i32) * (1.0 + 1e-12), "level {l}: ratio {ratio}");
            }
        }
    }
}
