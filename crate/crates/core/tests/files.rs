use bdd_core::io::{read_boundary, read_dataset, BoundaryFile};
use bdd_core::{Boundary, Error, Point, Side};

#[test]
fn dataset_and_boundary_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, " x2 , y , x1 \n1,0.5,2\n-1,0.25,-3\n").unwrap();
    let sample = read_dataset(&data).unwrap();
    assert_eq!(sample.len(), 2);
    assert_eq!(sample.y(), [0.5, 0.25]);
    assert_eq!(sample.x()[1], Point::new(-3.0, -1.0));

    let path = dir.path().join("b.json");
    let original = Boundary::l_shape(10.0).unwrap();
    std::fs::write(&path, serde_json::to_string(&BoundaryFile::from_boundary(&original)).unwrap()).unwrap();
    let loaded = read_boundary(&path).unwrap();
    assert_eq!(loaded.polyline.vertices(), original.polyline.vertices());
    assert_eq!(loaded.polyline.kinks(), original.polyline.kinks());
    assert_eq!(loaded.rule.side_of(Point::new(1.0, 1.0)), Side::Treated);
    assert_eq!(loaded.rule.side_of(Point::new(-1.0, 1.0)), Side::Control);
}

#[test]
fn missing_file_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.csv");
    match read_dataset(&path) {
        Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
        other => panic!("{other:?}"),
    }
}
