use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use spawnlab::cli::{train_run, ExperimentConfig, CHECKPOINT_FILE};
use spawnlab::corpus::{generate_synthetic_corpus, SynthConfig};
use spawnlab::prior::PriorConfig;
use spawnlab_ffi::*;

fn trained_checkpoint(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::reference(4);
    cfg.training.steps = 20;
    cfg.prior = PriorConfig {
        components: 3,
        ..PriorConfig::default()
    };
    let corpus = generate_synthetic_corpus(
        &SynthConfig::gridded(8, 4, 3, 2, &["us", "gb"], &["f", "m"], 1),
        4,
    )
    .unwrap();
    train_run(&cfg, &corpus, dir, false).unwrap();
    dir.join(CHECKPOINT_FILE)
}

fn last_error() -> String {
    let p = spawnlab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_sample_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(trained_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { spawnlab_model_load(path.as_ptr(), &mut model) },
        SpawnlabStatus::Ok
    );
    let dim = unsafe { spawnlab_model_speaker_dim(model) };
    assert_eq!(dim, 8);

    let (us, f) = (CString::new("us").unwrap(), CString::new("f").unwrap());
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let st = unsafe {
        spawnlab_sample_speaker(model, us.as_ptr(), f.as_ptr(), 1.0, 9, a.as_mut_ptr(), dim)
    };
    assert_eq!(st, SpawnlabStatus::Ok);
    unsafe { spawnlab_sample_speaker(model, us.as_ptr(), f.as_ptr(), 1.0, 9, b.as_mut_ptr(), dim) };
    assert_eq!(a, b);

    let mut lp = f64::NAN;
    let st = unsafe {
        spawnlab_prior_log_prob(model, us.as_ptr(), f.as_ptr(), a.as_ptr(), dim, &mut lp)
    };
    assert_eq!(st, SpawnlabStatus::Ok);
    let ck = spawnlab::cli::load_checkpoint(path.to_str().unwrap()).unwrap();
    let meta = spawnlab::corpus::SpeakerMetadata {
        speaker_id: 0,
        locale: "us".into(),
        gender: "f".into(),
    };
    assert_eq!(lp, ck.state.prior.log_prob(&meta, &a).unwrap());

    let xx = CString::new("xx").unwrap();
    let st = unsafe {
        spawnlab_prior_log_prob(model, xx.as_ptr(), f.as_ptr(), a.as_ptr(), dim, &mut lp)
    };
    assert_eq!(st, SpawnlabStatus::UnknownLabel);
    assert!(last_error().contains("xx"));

    let st = unsafe {
        spawnlab_sample_speaker(
            model,
            us.as_ptr(),
            f.as_ptr(),
            1.0,
            9,
            b.as_mut_ptr(),
            dim - 1,
        )
    };
    assert_eq!(st, SpawnlabStatus::Shape);

    unsafe { spawnlab_model_free(model) };
}

#[test]
fn error_codes() {
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/checkpoint.json").unwrap();
    assert_eq!(
        unsafe { spawnlab_model_load(missing.as_ptr(), &mut model) },
        SpawnlabStatus::Io
    );
    assert!(model.is_null());
    assert_eq!(
        unsafe { spawnlab_model_load(ptr::null(), &mut model) },
        SpawnlabStatus::NullPointer
    );
    assert_eq!(unsafe { spawnlab_model_speaker_dim(ptr::null()) }, 0);
    unsafe { spawnlab_model_free(ptr::null_mut()) };

    let (a, z) = ([1.0, 0.0], [0.0, 0.0]);
    let mut d = 0.0;
    assert_eq!(
        unsafe { spawnlab_cosine_distance(a.as_ptr(), [0.0, 1.0].as_ptr(), 2, &mut d) },
        SpawnlabStatus::Ok
    );
    assert_eq!(d, 1.0);
    assert_eq!(
        unsafe { spawnlab_cosine_distance(a.as_ptr(), z.as_ptr(), 2, &mut d) },
        SpawnlabStatus::Degenerate
    );
    assert!(last_error().contains("zero"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"spawnlab.h\"\nint f(void) { SpawnlabModel *m = 0; double d; \
         spawnlab_model_free(m); return spawnlab_cosine_distance(&d, &d, 1, &d) == SPAWNLAB_STATUS_OK; }\n",
    )
    .unwrap();
    let out = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler found; skipping");
            return;
        }
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
