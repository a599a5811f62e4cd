//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dam.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).expect("header generated by build.rs");
    for name in [
        "dam_version",
        "dam_last_error_message",
        "dam_config_default",
        "dam_mask_from_rle",
        "dam_mask_to_rle",
        "dam_mask_free",
        "dam_session_new",
        "dam_session_step",
        "dam_session_view",
        "dam_session_free",
        "typedef struct DamMask DamMask",
        "typedef struct DamSession DamSession",
        "DAM_STATUS_BUFFER_TOO_SMALL",
        "DAM_REASON_ANCHOR",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

fn staticlib() -> Option<PathBuf> {
    // target/<profile>/deps/<test-binary> -> target/<profile>
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libdam_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = staticlib() else {
        eprintln!("skipping: static library not found next to the test binary");
        return;
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = out_dir.join("dam_smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping: no C compiler `{cc}`");
        return;
    };
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("view 3 first=0"), "{stdout}");
    assert!(stdout.contains("ok "), "{stdout}");
}
