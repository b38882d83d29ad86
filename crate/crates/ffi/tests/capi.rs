use std::ffi::{CStr, CString};
use std::ptr;

use mollify_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mlf_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn sphere_round_trip() {
    unsafe {
        let spec = CString::new("sphere:R=1").unwrap();
        let mut geo = ptr::null_mut();
        assert_eq!(mlf_geometry_parse(spec.as_ptr(), &mut geo), MlfStatus::Ok);
        let (mut dim, mut charts) = (0, 0);
        assert_eq!(
            mlf_geometry_shape(geo, &mut dim, &mut charts),
            MlfStatus::Ok
        );
        assert_eq!((dim, charts), (2, 2));

        let mut g = ptr::null_mut();
        assert_eq!(mlf_metric_sample(geo, 0, 41, &mut g), MlfStatus::Ok);
        let (mut total, mut valid) = (0, 0);
        assert_eq!(mlf_metric_nodes(g, &mut total, &mut valid), MlfStatus::Ok);
        assert_eq!((total, valid), (41 * 41, 41 * 41));
        let mut m = [0.0; 4];
        assert_eq!(
            mlf_metric_matrix(g, 20 * 41 + 20, m.as_mut_ptr()),
            MlfStatus::Ok
        );
        assert!((m[0] - 4.0).abs() < 1e-14 && m[1] == 0.0);

        let mut q = 0.0;
        assert_eq!(mlf_metric_n0(g, &mut q), MlfStatus::Ok);
        assert!(q > 0.0);

        let mut curv = ptr::null_mut();
        assert_eq!(mlf_curvature_compute(g, 1, &mut curv), MlfStatus::Ok);
        let (mut lo, mut hi, mut s, mut ok) = (0.0, 0.0, 0.0, false);
        assert_eq!(
            mlf_curvature_node(curv, 20 * 41 + 20, &mut lo, &mut hi, &mut s, &mut ok),
            MlfStatus::Ok
        );
        assert!(
            ok && (lo - 1.0).abs() < 3e-2 && (s - 2.0).abs() < 6e-2,
            "{lo} {s}"
        );
        assert_eq!(mlf_curvature_range(curv, &mut lo, &mut hi), MlfStatus::Ok);
        assert!(lo <= hi);
        mlf_curvature_free(curv);

        let mut gt = ptr::null_mut();
        assert_eq!(mlf_metric_assemble(geo, 81, 0.3, 1, &mut gt), MlfStatus::Ok);
        assert_eq!(mlf_metric_nodes(gt, &mut total, &mut valid), MlfStatus::Ok);
        assert_eq!(valid, total);
        mlf_metric_free(gt);
        mlf_metric_free(g);
        mlf_geometry_free(geo);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let spec = CString::new("torus").unwrap();
        let mut geo = ptr::null_mut();
        assert_eq!(
            mlf_geometry_parse(spec.as_ptr(), &mut geo),
            MlfStatus::Config
        );
        assert!(last_error().contains("torus"));
        assert!(geo.is_null());
        assert_eq!(
            mlf_geometry_parse(ptr::null(), &mut geo),
            MlfStatus::NullPointer
        );

        let spec = CString::new("flat").unwrap();
        assert_eq!(mlf_geometry_parse(spec.as_ptr(), &mut geo), MlfStatus::Ok);
        assert_eq!(last_error(), "");
        let mut g = ptr::null_mut();
        assert_eq!(
            mlf_metric_sample(geo, 3, 21, &mut g),
            MlfStatus::InvalidArgument
        );
        assert_eq!(mlf_metric_sample(geo, 0, 21, &mut g), MlfStatus::Ok);
        let mut gt = ptr::null_mut();
        assert_eq!(mlf_metric_mollify(g, 0.01, &mut gt), MlfStatus::Numerical);
        assert!(last_error().contains("under-resolved"), "{}", last_error());
        mlf_metric_free(g);
        mlf_geometry_free(geo);
        mlf_geometry_free(ptr::null_mut());
    }
}

#[test]
fn run_returns_csv_and_summary() {
    unsafe {
        let cmd = CString::new("curvature").unwrap();
        let cfg = CString::new("geometry = flat\nm = 11\n").unwrap();
        let (mut csv, mut summary, mut violation) = (ptr::null_mut(), ptr::null_mut(), true);
        assert_eq!(
            mlf_run(
                cmd.as_ptr(),
                cfg.as_ptr(),
                &mut csv,
                &mut summary,
                &mut violation
            ),
            MlfStatus::Ok
        );
        let text = CStr::from_ptr(csv).to_str().unwrap();
        assert!(text.starts_with("chart,node,x0,x1,min_sec"));
        assert!(!violation);
        mlf_string_free(csv);
        mlf_string_free(summary);

        let bad = CString::new("m = 11\nwhat = 1\n").unwrap();
        assert_eq!(
            mlf_run(
                cmd.as_ptr(),
                bad.as_ptr(),
                &mut csv,
                &mut summary,
                &mut violation
            ),
            MlfStatus::Config
        );
        assert!(last_error().starts_with("line 2"), "{}", last_error());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/mollify.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ MlfGeometry *g = 0; return (int)mlf_geometry_parse(\"flat\", &g); }}\n"),
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
        .expect("a C compiler");
    assert!(status.success());
}
