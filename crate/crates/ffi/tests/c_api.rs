use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use plmr::baselines::KtIdemModel;
use plmr::simgen::{simulate, ArchetypeMix, SimConfig};
use plmr_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(plmr_last_error()) }
        .to_string_lossy()
        .into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    plmr_string_free(s);
    out
}

fn course(dir: &Path) -> *mut PlmrCourse {
    let config = SimConfig {
        seed: 4,
        students: 60,
        mix: ArchetypeMix::completers_only(),
        ..SimConfig::default()
    };
    simulate(&config).unwrap().write_to(dir).unwrap();
    let log = c(dir.join("events.jsonl").to_str().unwrap());
    let catalog = c(dir.join("catalog.json").to_str().unwrap());
    let mut handle = ptr::null_mut();
    let code = unsafe { plmr_course_load(log.as_ptr(), catalog.as_ptr(), &mut handle) };
    assert_eq!(code, PLMR_OK, "{}", last_error());
    handle
}

#[test]
fn course_train_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let course = course(dir.path());
    unsafe {
        let mut rows = 0;
        let mut width = 0;
        assert_eq!(plmr_course_num_rows(course, &mut rows), PLMR_OK);
        assert_eq!(plmr_course_num_features(course, &mut width), PLMR_OK);
        assert_eq!((rows, width), (360, 22));

        let spec = c(r#"{"protocol":"previous_hw","target":6,"train":{"l":2,"seed":1}}"#);
        let mut report = ptr::null_mut();
        assert_eq!(
            plmr_course_evaluate(course, spec.as_ptr(), &mut report),
            PLMR_OK,
            "{}",
            last_error()
        );
        let report: serde_json::Value = serde_json::from_str(&take(report)).unwrap();
        assert_eq!(report["rows"], 60);
        assert!(report["rmse"].as_f64().unwrap() < 0.5);

        let mut model = ptr::null_mut();
        assert_eq!(
            plmr_course_train(course, spec.as_ptr(), &mut model),
            PLMR_OK,
            "{}",
            last_error()
        );
        let mut values = vec![0.0; width];
        let mut grade = 0.0;
        assert_eq!(
            plmr_course_row(course, 5, values.as_mut_ptr(), width, &mut grade),
            PLMR_OK
        );
        let mut student = ptr::null_mut();
        assert_eq!(plmr_course_row_student(course, 5, &mut student), PLMR_OK);
        let student = c(&take(student));
        let mut score = f64::NAN;
        assert_eq!(
            plmr_model_predict(model, student.as_ptr(), values.as_ptr(), width, &mut score),
            PLMR_OK
        );
        assert!(score.is_finite());
        let mut proba = 0.0;
        assert_eq!(
            plmr_model_predict_proba(model, student.as_ptr(), values.as_ptr(), width, &mut proba),
            PLMR_OK
        );
        assert_eq!(proba, 1.0 / (1.0 + (-score).exp()));

        let mut json = ptr::null_mut();
        assert_eq!(plmr_model_to_json(model, &mut json), PLMR_OK);
        let json = c(&take(json));
        let mut again = ptr::null_mut();
        assert_eq!(plmr_model_from_json(json.as_ptr(), &mut again), PLMR_OK);
        let mut score2 = 0.0;
        assert_eq!(
            plmr_model_predict(again, student.as_ptr(), values.as_ptr(), width, &mut score2),
            PLMR_OK
        );
        assert_eq!(score, score2);

        let stranger = c("nobody");
        assert_eq!(
            plmr_model_predict(model, stranger.as_ptr(), values.as_ptr(), width, &mut score),
            PLMR_ERR_UNKNOWN_STUDENT
        );
        assert_eq!(
            plmr_model_predict(
                model,
                student.as_ptr(),
                values.as_ptr(),
                width - 1,
                &mut score
            ),
            PLMR_ERR_DIMENSION
        );
        plmr_model_free(model);
        plmr_model_free(again);
        plmr_course_free(course);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut handle = ptr::null_mut();
        let missing = c("/nonexistent/events.jsonl");
        assert_eq!(
            plmr_course_load(missing.as_ptr(), missing.as_ptr(), &mut handle),
            PLMR_ERR_IO
        );
        assert!(!last_error().is_empty());
        assert_eq!(
            plmr_course_load(ptr::null(), missing.as_ptr(), &mut handle),
            PLMR_ERR_NULL
        );
        let bad = c("{not json");
        let mut model = ptr::null_mut();
        assert_eq!(
            plmr_model_from_json(bad.as_ptr(), &mut model),
            PLMR_ERR_PARSE
        );
        assert!(model.is_null());

        let dir = tempfile::tempdir().unwrap();
        let course = course(dir.path());
        let spec = c(r#"{"protocol":"previous_one_hw","target":1}"#);
        let mut report = ptr::null_mut();
        assert_eq!(
            plmr_course_evaluate(course, spec.as_ptr(), &mut report),
            PLMR_ERR_PROTOCOL
        );
        plmr_course_free(course);
        plmr_course_free(ptr::null_mut());
        plmr_string_free(ptr::null_mut());
    }
}

#[test]
fn metrics() {
    unsafe {
        let pred = [0.0, 1.0];
        let truth = [0.0, 0.0];
        let mut v = 0.0;
        assert_eq!(plmr_rmse(pred.as_ptr(), truth.as_ptr(), 2, &mut v), PLMR_OK);
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        let p = [1u8, 1, 0, 0];
        let t = [1u8, 0, 1, 0];
        let (mut acc, mut f1) = (0.0, 0.0);
        assert_eq!(
            plmr_accuracy_f1(p.as_ptr(), t.as_ptr(), 4, &mut acc, &mut f1),
            PLMR_OK
        );
        assert_eq!((acc, f1), (0.5, 0.5));
        assert_ne!(plmr_rmse(pred.as_ptr(), truth.as_ptr(), 0, &mut v), PLMR_OK);
    }
}

#[test]
fn knowledge_tracing_handle() {
    let mut m = KtIdemModel::new(0.5, 0.2);
    m.set_item("q1", 0.2, 0.1);
    let json = c(&m.to_json());
    unsafe {
        let mut kt = ptr::null_mut();
        assert_eq!(
            plmr_kt_from_json(json.as_ptr(), &mut kt),
            PLMR_OK,
            "{}",
            last_error()
        );
        let mut mastery = 0.0;
        assert_eq!(plmr_kt_initial_mastery(kt, &mut mastery), PLMR_OK);
        let item = c("q1");
        let mut p = 0.0;
        assert_eq!(plmr_kt_predict(kt, mastery, item.as_ptr(), &mut p), PLMR_OK);
        assert!((p - 0.55).abs() < 1e-12);
        let mut next = 0.0;
        assert_eq!(
            plmr_kt_update(kt, mastery, item.as_ptr(), 1, &mut next),
            PLMR_OK
        );
        assert_eq!(next, m.update(mastery, "q1", true).unwrap());
        let unknown = c("q9");
        assert_ne!(
            plmr_kt_predict(kt, mastery, unknown.as_ptr(), &mut p),
            PLMR_OK
        );
        plmr_kt_free(kt);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(plmr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/plmr.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "plmr_course_load",
        "plmr_model_predict",
        "plmr_kt_update",
        "PLMR_ERR_PANIC",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipped the compile check");
        return;
    };
    assert!(status.success());
}
