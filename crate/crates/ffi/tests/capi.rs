use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::OnceLock;

use moviedesc::classifiers::{read_scores, ClassifierBank};
use moviedesc::corpus::read_clips;
use moviedesc::lstm::{ensemble_generate, Ensemble};
use moviedesc::pipeline::{synthetic_config, Pipeline, StageOptions};
use moviedesc::synth::{self, SynthConfig};
use moviedesc_ffi::*;

/// A finished small pipeline run shared by every test.
fn artifacts() -> &'static (tempfile::TempDir, PathBuf) {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tmp.path().join("corpus");
        std::fs::create_dir_all(&corpus).unwrap();
        synth::write_corpus(&synth::generate(&SynthConfig::default()), &corpus).unwrap();
        let out = tmp.path().join("out");
        let mut cfg = synthetic_config(&corpus, &out);
        cfg.lstm.ensemble_size = 2;
        for n in &mut cfg.lstm.grid {
            n.max_iters = 400;
        }
        Pipeline::new(cfg)
            .unwrap()
            .run_all(StageOptions::default())
            .unwrap();
        (tmp, corpus)
    })
}

fn out_dir() -> PathBuf {
    artifacts().0.path().join("out")
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = md_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let v = CStr::from_ptr(s).to_string_lossy().into_owned();
    md_string_free(s);
    v
}

#[test]
fn bank_scores_match_the_library() {
    let path = out_dir().join("bank.selected.json");
    let mut bank = ptr::null_mut();
    assert_eq!(
        unsafe { md_bank_load(cstr(&path).as_ptr(), &mut bank) },
        MdStatus::Ok
    );
    assert!(md_last_error().is_null());
    let lib = ClassifierBank::load(&path).unwrap();
    let n = unsafe { md_bank_len(bank) };
    assert_eq!(n, lib.len());

    for i in 0..n {
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { md_bank_label(bank, i, &mut s) }, MdStatus::Ok);
        assert_eq!(unsafe { take(s) }, lib.classifiers[i].label.text);
    }
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { md_bank_label(bank, n, &mut s) },
        MdStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));

    let (_, clips) = read_clips(&artifacts().1.join("test.clips.tsv")).unwrap();
    for clip in clips.iter().take(5) {
        let names: Vec<CString> = clip
            .features
            .keys()
            .map(|k| CString::new(k.as_str()).unwrap())
            .collect();
        let name_ptrs: Vec<*const c_char> = names.iter().map(|c| c.as_ptr()).collect();
        let values: Vec<*const f64> = clip.features.values().map(|v| v.as_ptr()).collect();
        let dims: Vec<usize> = clip.features.values().map(Vec::len).collect();
        let mut scores = vec![0.0; n];
        let st = unsafe {
            md_bank_score(
                bank,
                name_ptrs.as_ptr(),
                values.as_ptr(),
                dims.as_ptr(),
                names.len(),
                scores.as_mut_ptr(),
                n,
            )
        };
        assert_eq!(st, MdStatus::Ok);
        assert_eq!(scores, lib.score_clip(clip).unwrap().scores);

        // Dropping a channel is reported, not a crash.
        let st = unsafe {
            md_bank_score(
                bank,
                name_ptrs.as_ptr(),
                values.as_ptr(),
                dims.as_ptr(),
                1,
                scores.as_mut_ptr(),
                n,
            )
        };
        assert_eq!(st, MdStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let st = unsafe {
            md_bank_score(
                bank,
                name_ptrs.as_ptr(),
                values.as_ptr(),
                dims.as_ptr(),
                names.len(),
                scores.as_mut_ptr(),
                n + 1,
            )
        };
        assert_eq!(st, MdStatus::InvalidArgument);
    }
    unsafe { md_bank_free(bank) };
}

#[test]
fn ensemble_generation_matches_the_library() {
    let path = out_dir().join("ensemble.json");
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { md_ensemble_load(cstr(&path).as_ptr(), &mut e) },
        MdStatus::Ok
    );
    let lib = Ensemble::load(&path).unwrap();
    let dim = unsafe { md_ensemble_visual_dim(e) };
    assert_eq!(dim, lib.members()[0].config.visual_dim);

    for sv in read_scores(&out_dir().join("scores.test.tsv"))
        .unwrap()
        .iter()
        .take(5)
    {
        let mut s = ptr::null_mut();
        let st =
            unsafe { md_ensemble_generate(e, sv.scores.as_ptr(), sv.scores.len(), 30, &mut s) };
        assert_eq!(st, MdStatus::Ok);
        assert_eq!(
            unsafe { take(s) },
            ensemble_generate(&lib, &sv.scores, 30).unwrap().join(" ")
        );
    }
    let v = vec![0.5; dim + 1];
    let mut s = ptr::null_mut();
    assert_ne!(
        unsafe { md_ensemble_generate(e, v.as_ptr(), v.len(), 30, &mut s) },
        MdStatus::Ok
    );
    assert_eq!(
        unsafe { md_ensemble_generate(e, v.as_ptr(), dim, 0, &mut s) },
        MdStatus::InvalidArgument
    );
    unsafe { md_ensemble_free(e) };
}

#[test]
fn load_errors_are_classified() {
    let mut bank = ptr::null_mut();
    let missing = CString::new("/nonexistent/bank.json").unwrap();
    assert_eq!(
        unsafe { md_bank_load(missing.as_ptr(), &mut bank) },
        MdStatus::Io
    );
    assert!(bank.is_null());
    assert!(last_error().contains("/nonexistent/bank.json"));

    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.json");
    std::fs::write(&junk, b"{not json").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { md_ensemble_load(cstr(&junk).as_ptr(), &mut e) },
        MdStatus::Format
    );

    assert_eq!(
        unsafe { md_bank_load(ptr::null(), &mut bank) },
        MdStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { md_bank_load(missing.as_ptr(), ptr::null_mut()) },
        MdStatus::InvalidArgument
    );
    assert_eq!(unsafe { md_bank_len(ptr::null()) }, 0);
    assert_eq!(unsafe { md_ensemble_visual_dim(ptr::null()) }, 0);
    unsafe {
        md_bank_free(ptr::null_mut());
        md_ensemble_free(ptr::null_mut());
        md_string_free(ptr::null_mut());
    }
}

#[test]
fn meteor_through_the_c_abi() {
    let c = CString::new("Someone walks.").unwrap();
    let r = CString::new("someone walks").unwrap();
    let mut v = -1.0;
    assert_eq!(
        unsafe { md_meteor(c.as_ptr(), r.as_ptr(), &mut v) },
        MdStatus::Ok
    );
    assert_eq!(v, 0.9375);
    let empty = CString::new("  ").unwrap();
    assert_eq!(
        unsafe { md_meteor(empty.as_ptr(), r.as_ptr(), &mut v) },
        MdStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { md_meteor(c.as_ptr(), empty.as_ptr(), &mut v) },
        MdStatus::InvalidArgument
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { md_meteor(bad.as_ptr().cast(), r.as_ptr(), &mut v) },
        MdStatus::InvalidArgument
    );
    assert!(last_error().contains("UTF-8"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(md_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header parses as C and as C++ when a compiler exists.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("moviedesc.h").exists());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"moviedesc.h\"\nint main(void) { MdBank *b = 0; return md_bank_load(\"x\", &b) == MD_STATUS_OK; }\n",
    )
    .unwrap();
    for (cc, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let Ok(o) = std::process::Command::new(cc)
            .args(extra)
            .arg("-fsyntax-only")
            .arg("-Wall")
            .arg("-Werror")
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output()
        else {
            eprintln!("{cc} not available; skipping");
            continue;
        };
        assert!(
            o.status.success(),
            "{cc}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}
