use awmi_demo::ops;

#[test]
fn warp_then_compare_is_small() {
    let img = ops::synth("blobs", 128, 3).unwrap();
    let w = ops::warp(&img, 128, 128, &[1.1, 0.2, -0.1, 0.9, 0.0, 0.0], true).unwrap();
    let rows: serde_json::Value =
        serde_json::from_str(&ops::compare(&img, &w, 128, 128, "fit4").unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 11);
    for r in rows {
        let e = r["error_pct"].as_f64().unwrap();
        assert!(e < 10.0, "{r}");
    }
}

#[test]
fn heatmap_shape_and_errors() {
    let img = ops::synth("shape", 64, 1).unwrap();
    let rgba = ops::adi_heatmap(&img, 64, 64, 3, "fit4").unwrap();
    assert_eq!(rgba.len(), 64 * 64 * 4);
    assert!(rgba.chunks(4).all(|p| p[3] == 255));
    assert!(ops::adi_heatmap(&img, 64, 64, 6, "fit4").is_err());
    assert!(ops::adi_heatmap(&img, 64, 64, 1, "bogus").is_err());
    assert!(ops::synth("noise", 64, 0).is_err());
}

#[test]
fn gray_and_luminance() {
    assert_eq!(
        ops::gray_rgba(&[0.0, 2.0]),
        vec![0, 0, 0, 255, 255, 255, 255, 255]
    );
    let l = ops::luminance(&[255, 255, 255, 255, 0, 0, 0, 255]);
    assert!((l[0] - 1.0).abs() < 1e-12 && l[1] == 0.0);
}
