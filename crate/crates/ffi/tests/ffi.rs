use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ntmd::synth::gen_recall_dialogues;
use ntmd_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ntmd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_recall_corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("recall.tsv");
    let file = std::fs::File::create(&path).unwrap();
    ntmd::corpus::write_corpus(file, &gen_recall_dialogues(n, 5)).unwrap();
    path
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut out: *mut NtmdModel = ptr::null_mut();
        assert_eq!(ntmd_model_load(ptr::null(), &mut out), NtmdStatus::NullArgument);
        assert!(last_error().contains("path"));
        assert_eq!(ntmd_gradcheck(NtmdArch::Lm, 0, ptr::null_mut()), NtmdStatus::NullArgument);
        let mut size = 0usize;
        assert_eq!(ntmd_model_vocab_size(ptr::null(), &mut size), NtmdStatus::NullArgument);
        ntmd_model_free(ptr::null_mut());
        ntmd_trainer_free(ptr::null_mut());
    }
}

#[test]
fn missing_and_corrupt_files_map_to_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut out: *mut NtmdModel = ptr::null_mut();
    unsafe {
        let missing = cstr(&dir.path().join("nope.ck"));
        assert_eq!(ntmd_model_load(missing.as_ptr(), &mut out), NtmdStatus::Io);
        assert!(out.is_null());
        let junk = dir.path().join("junk.ck");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        assert_eq!(ntmd_model_load(cstr(&junk).as_ptr(), &mut out), NtmdStatus::Corrupt);
        assert!(last_error().contains("corrupt"));
        let mut bad_version = b"NTMD".to_vec();
        bad_version.extend(9u32.to_le_bytes());
        std::fs::write(&junk, bad_version).unwrap();
        assert_eq!(ntmd_model_load(cstr(&junk).as_ptr(), &mut out), NtmdStatus::UnsupportedVersion);
    }
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = CString::new(vec![0xffu8, 0xfe]).unwrap();
    let mut out: *mut NtmdModel = ptr::null_mut();
    let status = unsafe { ntmd_model_load(bytes.as_ptr(), &mut out) };
    assert_eq!(status, NtmdStatus::InvalidUtf8);
}

#[test]
fn gradcheck_passes_for_every_architecture() {
    for arch in [NtmdArch::Seq2seq, NtmdArch::DNtms, NtmdArch::Lm, NtmdArch::NtmLm] {
        let mut err = f64::NAN;
        assert_eq!(unsafe { ntmd_gradcheck(arch, 3, &mut err) }, NtmdStatus::Ok);
        assert!(err < 1e-4, "{arch:?}: {err}");
    }
}

#[test]
fn train_save_load_evaluate_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_recall_corpus(dir.path(), 200);
    let ck = dir.path().join("model.ck");
    unsafe {
        let mut opts = std::mem::zeroed::<NtmdTrainOptions>();
        assert_eq!(ntmd_train_options_default(NtmdArch::NtmLm, &mut opts), NtmdStatus::Ok);
        assert_eq!((opts.lr, opts.batch, opts.epochs), (1e-4, 32, 1));
        opts.preset = NtmdPreset::Desk;
        opts.lr = 3e-3;
        opts.batch = 8;

        let mut t: *mut NtmdTrainer = ptr::null_mut();
        assert_eq!(ntmd_trainer_new(&opts, cstr(&corpus).as_ptr(), &mut t), NtmdStatus::Ok);
        let (mut steps, mut loss) = (0u64, 0f64);
        assert_eq!(ntmd_trainer_run(t, 5, &mut steps, &mut loss), NtmdStatus::Ok);
        assert_eq!(steps, 5);
        assert!(loss.is_finite());
        assert_eq!(ntmd_trainer_run(t, 1_000, &mut steps, ptr::null_mut()), NtmdStatus::Ok);
        assert!(steps > 5 && steps < 1_000, "one epoch ends the schedule: {steps}");
        assert_eq!(ntmd_trainer_save(t, cstr(&ck).as_ptr()), NtmdStatus::Ok);
        ntmd_trainer_free(t);

        let mut m: *mut NtmdModel = ptr::null_mut();
        assert_eq!(ntmd_model_load(cstr(&ck).as_ptr(), &mut m), NtmdStatus::Ok);
        let mut arch = NtmdArch::Lm;
        assert_eq!(ntmd_model_arch(m, &mut arch), NtmdStatus::Ok);
        assert_eq!(arch, NtmdArch::NtmLm);
        let mut v = 0usize;
        assert_eq!(ntmd_model_vocab_size(m, &mut v), NtmdStatus::Ok);
        assert!(v > 4 && v <= 100);
        let mut ppl = 0.0;
        assert_eq!(ntmd_model_perplexity(m, cstr(&corpus).as_ptr(), &mut ppl), NtmdStatus::Ok);
        assert!(ppl > 1.0 && ppl < v as f64, "{ppl}");

        let prompt = CString::new("hi , what is your name ?").unwrap();
        let mut needed = 0usize;
        let status = ntmd_model_generate(m, prompt.as_ptr(), 30, 9, ptr::null_mut(), 0, &mut needed);
        assert_eq!(status, NtmdStatus::BufferTooSmall);
        assert!(needed >= 1);
        let mut buf = vec![0u8; needed];
        let status = ntmd_model_generate(m, prompt.as_ptr(), 30, 9, buf.as_mut_ptr().cast(), buf.len(), ptr::null_mut());
        assert_eq!(status, NtmdStatus::Ok);
        let text = CStr::from_bytes_with_nul(&buf).unwrap().to_str().unwrap();
        assert!(text.split_whitespace().count() <= 30);
        assert!(!text.contains("<pad>"));
        ntmd_model_free(m);
    }
}

#[test]
fn bad_options_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_recall_corpus(dir.path(), 20);
    unsafe {
        let mut opts = std::mem::zeroed::<NtmdTrainOptions>();
        ntmd_train_options_default(NtmdArch::Lm, &mut opts);
        opts.batch = 0;
        let mut t: *mut NtmdTrainer = ptr::null_mut();
        assert_eq!(ntmd_trainer_new(&opts, cstr(&corpus).as_ptr(), &mut t), NtmdStatus::Config);
        assert!(t.is_null());
        assert!(last_error().contains("batch"));
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ntmd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ntmd.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ntmd_last_error", "ntmd_model_load", "ntmd_trainer_run", "NTMD_STATUS_CORRUPT"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(out.status.success());
    for lang in ["c", "c++"] {
        let status = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
            .unwrap();
        assert!(status.success(), "header fails to compile as {lang}");
    }
}
