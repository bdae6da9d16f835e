use geomem::tensor_io::*;

#[test]
fn record_round_trip() {
    let data: Vec<f32> = (0..2 * 27).map(|i| i as f32 * 0.5 - 3.0).collect();
    let mut buf = Vec::new();
    write_tns(&mut buf, 2, 3, &data).unwrap();
    assert_eq!(buf.len(), TNS_HEADER_BYTES + 4 * data.len());
    assert_eq!(&buf[0..4], b"TNS1");
    let (c, n, back) = read_tns(&buf[..]).unwrap();
    assert_eq!((c, n), (2, 3));
    assert_eq!(back, data);
}

#[test]
fn rejects_bad_input() {
    assert!(write_tns(Vec::new(), 2, 2, &[0.0; 3]).is_err());
    assert!(read_tns(&b"TNS2\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
    assert!(read_tns(&b"TNS1\x01\0\0\0\x01\0\0\0\x02\0\0\0"[..]).is_err());
}

#[test]
fn layouts() {
    assert_eq!(tns_layout(&[8]).unwrap(), (8, 1));
    assert_eq!(tns_layout(&[8, 15, 3, 3, 3]).unwrap(), (120, 3));
    assert_eq!(tns_layout(&[7, 16, 16, 16]).unwrap(), (7, 16));
    assert!(tns_layout(&[2, 3]).is_err());
}
