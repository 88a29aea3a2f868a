use mats_web::{decompose, interpolate, solve};

#[test]
fn snapshot_covers_the_grid() {
    let s = solve("advection_appendix_b", vec![1.0], 201, 0.25).unwrap();
    assert_eq!(s.values().len(), 201);
    assert_eq!((s.x_left(), s.x_right()), (0.0, 5.0));
    assert!(s.t_final() > 0.0);
}

#[test]
fn a_hump_splits_into_rising_then_falling() {
    let s = solve("advection_appendix_b", vec![1.0], 401, 0.0).unwrap();
    let p = decompose(s.values(), s.x_left(), s.x_right(), 1e-12).unwrap();
    let signs: Vec<i8> = p.signs().into_iter().filter(|&g| g != 0).collect();
    assert_eq!(signs, vec![1, -1]);
    assert!(p.piece(p.count()).is_empty());
}

#[test]
fn transported_blend_of_a_moving_hump_beats_the_linear_blend() {
    let a = solve("advection_appendix_b", vec![1.0], 1001, 0.0).unwrap();
    let b = solve("advection_appendix_b", vec![1.0], 1001, 0.4).unwrap();
    let c = solve("advection_appendix_b", vec![1.0], 1001, 0.2).unwrap();
    let mid = interpolate(a.values(), b.values(), a.x_left(), a.x_right(), 0.5, 1e-12).unwrap();
    let linear: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    let max_err = |u: &[f64]| u.iter().zip(c.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // the scheme diffuses the hump slightly, so the midpoint is close but not exact
    assert!(max_err(&mid) < 1e-2, "transported error {}", max_err(&mid));
    assert!(max_err(&linear) > 10.0 * max_err(&mid));
}
