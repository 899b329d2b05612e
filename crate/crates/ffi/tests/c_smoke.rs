//! Compiles and runs `tests/smoke.c` against the generated header and the
//! static library — proof the interface works from C, not only from Rust
//! unit tests calling the exported functions.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_client_compiles_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let workspace = manifest.parent().unwrap().parent().unwrap();
    let target_dir = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace.join("target"));

    // Place the final staticlib artifact at its stable path.
    let status = Command::new(env!("CARGO"))
        .args(["build", "-p", "darc-ffi"])
        .current_dir(workspace)
        .status()
        .expect("cargo should be runnable");
    assert!(status.success(), "building the static library failed");
    let staticlib = target_dir.join("debug").join("libdarc_ffi.a");
    assert!(staticlib.exists(), "missing {}", staticlib.display());

    let scratch = tempfile::tempdir().unwrap();
    let exe = scratch.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&staticlib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("cc should be runnable");
    assert!(status.success(), "compiling the C smoke client failed");

    let output = Command::new(&exe).output().expect("smoke client should run");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(output.status.success(), "stdout: {stdout}\nstderr: {stderr}");
    assert!(stdout.contains("OK"), "unexpected output: {stdout}");
}
