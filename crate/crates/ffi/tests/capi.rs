use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use keystep_ffi::*;

fn bundled() -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic_corpus.jsonl");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ks_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/keystep.h"))
            .unwrap();
    for name in [
        "ks_last_error_message",
        "ks_version",
        "ks_string_free",
        "ks_corpus_load",
        "ks_corpus_len",
        "ks_corpus_question_id",
        "ks_corpus_free",
        "ks_pipeline_run",
        "ks_budget_curve_new",
        "ks_budget_curve_at",
        "ks_budget_curve_free",
        "ks_select_ftgp",
        "ks_value_of",
        "ks_step_difficulty",
        "ks_evaluate_loss",
        "typedef struct KsCorpus KsCorpus",
        "KS_STATUS_VALIDATION = 2",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/keystep.h"))
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}

#[test]
fn corpus_handle_lifecycle() {
    let path = bundled();
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { ks_corpus_load(path.as_ptr(), false, &mut c) },
        KsStatus::Ok
    );
    assert!(ks_last_error_message().is_null());
    unsafe {
        assert_eq!(ks_corpus_len(c), 50);
        let id = ks_corpus_question_id(c, 0);
        assert_eq!(CStr::from_ptr(id).to_str().unwrap(), "q001");
        ks_string_free(id);
        assert!(ks_corpus_question_id(c, 50).is_null());
        ks_corpus_free(c);
        assert_eq!(ks_corpus_len(ptr::null()), 0);
        ks_corpus_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported() {
    let missing = CString::new("/no/such/file.jsonl").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { ks_corpus_load(missing.as_ptr(), false, &mut c) },
        KsStatus::Usage
    );
    assert!(c.is_null());
    assert!(last_error().contains("corpus not found"));

    assert_eq!(
        unsafe { ks_corpus_load(ptr::null(), false, &mut c) },
        KsStatus::NullPointer
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { ks_corpus_load(bad.as_ptr().cast(), false, &mut c) },
        KsStatus::InvalidUtf8
    );

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.jsonl");
    std::fs::write(
        &file,
        "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"1\",\"rationale_tokens\":[]}\n",
    )
    .unwrap();
    let file = CString::new(file.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { ks_corpus_load(file.as_ptr(), false, &mut c) },
        KsStatus::Validation
    );
}

#[test]
fn budget_curve_through_handle() {
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(ks_budget_curve_new(1.0, 0.3, 0.5, 10, &mut h), KsStatus::Ok);
        assert_eq!(ks_budget_curve_at(h, 0.0), 0.3);
        assert!((ks_budget_curve_at(h, 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(ks_budget_curve_at(h, 25.0), 1.0);
        ks_budget_curve_free(h);
        assert!(ks_budget_curve_at(ptr::null(), 1.0).is_nan());
        let mut bad = ptr::null_mut();
        assert_eq!(
            ks_budget_curve_new(1.0, 2.0, 0.5, 10, &mut bad),
            KsStatus::Usage
        );
        assert!(bad.is_null());
    }
}

#[test]
fn selection_and_value() {
    let inc = [1.0, 2.0, 3.0];
    let cl = [0usize, 0, 0];
    let mut sel = [9u8; 3];
    unsafe {
        assert_eq!(
            ks_select_ftgp(
                inc.as_ptr(),
                cl.as_ptr(),
                3,
                1,
                3.0,
                0.0,
                0.1,
                sel.as_mut_ptr()
            ),
            KsStatus::Ok
        );
        assert!(sel.iter().all(|&s| s <= 1));
        let cost: f64 = (0..3).filter(|&i| sel[i] == 1).map(|i| inc[i]).sum();
        assert!(cost <= 3.0);

        let mut v = 0.0;
        let ab = [1u8, 1, 0];
        assert_eq!(
            ks_value_of(
                inc.as_ptr(),
                cl.as_ptr(),
                3,
                1,
                3.0,
                12.0,
                ab.as_ptr(),
                &mut v
            ),
            KsStatus::Ok
        );
        assert!((v - (3.0 - 3.0 + 12.0 * 2f64.sqrt())).abs() < 1e-12);

        let bad_cl = [0usize, 1, 2];
        assert_eq!(
            ks_select_ftgp(
                inc.as_ptr(),
                bad_cl.as_ptr(),
                3,
                1,
                3.0,
                0.0,
                0.1,
                sel.as_mut_ptr()
            ),
            KsStatus::Usage
        );
        assert_eq!(
            ks_select_ftgp(
                inc.as_ptr(),
                cl.as_ptr(),
                3,
                1,
                3.0,
                0.0,
                0.7,
                sel.as_mut_ptr()
            ),
            KsStatus::Usage
        );
        assert!(last_error().contains("epsilon"));
        assert_eq!(
            ks_select_ftgp(
                ptr::null(),
                cl.as_ptr(),
                3,
                1,
                3.0,
                0.0,
                0.1,
                sel.as_mut_ptr()
            ),
            KsStatus::NullPointer
        );
    }
}

#[test]
fn difficulty_and_loss() {
    let half = 0.5f64.ln();
    let mut d = 0.0;
    unsafe {
        assert_eq!(
            ks_step_difficulty([half].as_ptr(), [1.0].as_ptr(), 1, &mut d),
            KsStatus::Ok
        );
        assert!((d - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            ks_step_difficulty(ptr::null(), ptr::null(), 0, &mut d),
            KsStatus::Usage
        );

        let lp = [-9.0, -9.0, -9.0, half, half];
        let mut l = 0.0;
        assert_eq!(
            ks_evaluate_loss(lp.as_ptr(), 5, 3, [1.0, 1.0].as_ptr(), &mut l),
            KsStatus::Ok
        );
        assert!((l - 1.3863).abs() < 1e-4);
        assert_eq!(
            ks_evaluate_loss(lp.as_ptr(), 5, 6, ptr::null(), &mut l),
            KsStatus::Usage
        );
    }
}

#[test]
fn pipeline_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 4\ncorpus = {:?}\n[weigh]\nepochs = 3\npredictor_warmup_epochs = 1\n[schedule]\nepochs = 4\n",
            bundled().to_str().unwrap()
        ),
    )
    .unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { ks_pipeline_run(cfg.as_ptr(), out.as_ptr()) },
        KsStatus::Ok
    );
    assert!(dir.path().join("out/schedule.json").is_file());

    let missing = CString::new("/no/such.toml").unwrap();
    assert_ne!(
        unsafe { ks_pipeline_run(missing.as_ptr(), ptr::null()) },
        KsStatus::Ok
    );
    assert!(!last_error().is_empty());
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ks_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
