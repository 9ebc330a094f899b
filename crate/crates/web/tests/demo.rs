use amtopo_web::Demo;

#[test]
fn demo_operations() {
    let mut d = Demo::new(24, 12).unwrap();
    assert_eq!(d.density().len(), 24 * 12);
    assert_eq!(d.npup(45.0).unwrap(), 0.0);

    let jd = d.optimize("thermal", 0.25, 6, 1.25, 40).unwrap();
    assert!(jd.is_finite() && jd > 0.0);
    assert_eq!(d.history().len(), 40);
    assert_eq!(*d.history().last().unwrap(), jd);
    assert!(d.density().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(d.npup(45.0).unwrap() > 0.0);

    assert_eq!(d.layer_rows(6, 1).unwrap(), 2);
    assert_eq!(d.layer_rows(6, 6).unwrap(), 12);
    // 5 layers over 12 rows snap to row boundaries
    assert_eq!(d.layer_rows(5, 2).unwrap(), 5);
}
