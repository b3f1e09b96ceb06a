use nckit_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

const POLY: &str = r#"{"d": 2, "r": 1, "terms": [
    {"word": [1, 2], "coef": [[1.0, 0.0]]},
    {"word": [2, 1], "coef": [[-1.0, 0.0]]},
    {"word": [], "coef": [[0.5, 0.25]]}
]}"#;

fn parse(json: &str) -> (NckitStatus, *mut NckitPoly) {
    let text = CString::new(json).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { nckit_poly_from_json(text.as_ptr(), &mut handle) };
    (status, handle)
}

fn last_error() -> String {
    let p = nckit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn commutator_evaluates_through_the_abi() {
    let (status, poly) = parse(POLY);
    assert_eq!(status, NckitStatus::Ok);
    assert!(nckit_last_error().is_null());
    unsafe {
        assert_eq!(nckit_poly_arity(poly), 2);
        assert_eq!(nckit_poly_components(poly), 1);
        assert_eq!(nckit_poly_degree(poly), 2);
    }
    // X1 = [[0,1],[0,0]], X2 = [[0,0],[1,0]]: X1X2 − X2X1 = diag(1, −1).
    let x = [
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    ];
    let mut out = [0.0; 8];
    let status = unsafe { nckit_poly_eval(poly, 2, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(status, NckitStatus::Ok);
    assert_eq!(out, [1.5, 0.25, 0.0, 0.0, 0.0, 0.0, -0.5, 0.25]);
    unsafe { nckit_poly_free(poly) };
}

#[test]
fn json_round_trips() {
    let (_, poly) = parse(POLY);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { nckit_poly_to_json(poly, &mut s) }, NckitStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { nckit_string_free(s) };
    let (status, again) = parse(&text);
    assert_eq!(status, NckitStatus::Ok);
    let a: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut s2 = ptr::null_mut();
    unsafe { nckit_poly_to_json(again, &mut s2) };
    let b: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(s2) }.to_str().unwrap()).unwrap();
    assert_eq!(a, b);
    unsafe {
        nckit_string_free(s2);
        nckit_poly_free(poly);
        nckit_poly_free(again);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let (status, poly) = parse(r#"{"d": 2, "r": 1, "terms": [{"word": [3], "coef": [[1, 0]]}]}"#);
    assert_eq!(status, NckitStatus::InvalidArgument);
    assert!(poly.is_null());
    assert!(last_error().contains("letter 3"));

    assert_eq!(parse("{").0, NckitStatus::Json);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { nckit_poly_from_json(ptr::null(), &mut handle) }, NckitStatus::NullPointer);

    let (_, poly) = parse(POLY);
    let x = [0.0; 8];
    let mut out = [0.0; 8];
    let status = unsafe { nckit_poly_eval(poly, 2, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(status, NckitStatus::DimensionMismatch);
    let x = [0.0; 16];
    let status = unsafe { nckit_poly_eval(poly, 2, x.as_ptr(), x.len(), out.as_mut_ptr(), 4) };
    assert_eq!(status, NckitStatus::BufferTooSmall);
    let status = unsafe { nckit_poly_eval(ptr::null(), 2, x.as_ptr(), x.len(), out.as_mut_ptr(), 8) };
    assert_eq!(status, NckitStatus::NullPointer);
    unsafe { nckit_poly_free(poly) };
}

#[test]
fn verify_returns_report() {
    let suite = CString::new("ncpoly").unwrap();
    let mut json = ptr::null_mut();
    let mut pass = -1;
    assert_eq!(unsafe { nckit_verify(suite.as_ptr(), 3, &mut json, &mut pass) }, NckitStatus::Ok);
    let report = nckit::report::Report::from_json(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { nckit_string_free(json) };
    assert_eq!(pass, 1);
    assert!(report.pass);

    let bogus = CString::new("nope").unwrap();
    assert_eq!(unsafe { nckit_verify(bogus.as_ptr(), 0, &mut json, &mut pass) }, NckitStatus::InvalidArgument);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/nckit.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["nckit_poly_from_json", "nckit_poly_eval", "nckit_verify", "nckit_string_free", "nckit_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler on PATH; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
