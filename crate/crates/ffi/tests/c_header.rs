//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "dyntrack.h"

int main(void) {
    DtMhb *f = NULL;
    if (dt_mhb_new(30, 3, 1, 100.0, 7, 0, &f) != DT_STATUS_OK) return 10;
    DtTrace *t = NULL;
    if (dt_run_population(f, "tournament:k=8", "bitwise:chi=1", 20, 2000, 3, 0, &t) != DT_STATUS_OK) return 11;
    uint64_t len = 0;
    dt_trace_len(t, &len);
    DtTracking rep;
    if (dt_tracking_score(t, 20, 20, 0.1, &rep) != DT_STATUS_OK) return 12;
    double p = 0.0;
    if (dt_ruin_exact(3, 100, 30, 4, &p) == DT_STATUS_OK) return 13;
    char msg[128];
    size_t n = dt_last_error(msg, sizeof msg);
    printf("len=%llu min=%.3f err=%zu:%s\n", (unsigned long long)len, rep.min, n, msg);
    dt_trace_free(t);
    dt_mhb_free(f);
    return 0;
}
"#;

fn find_staticlib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = dir.join("libdyntrack_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    lib
}

#[test]
fn c_program_links_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = tmp.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(find_staticlib())
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("a C compiler is available");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("len=2000 "), "{text}");
    assert!(text.contains("err="), "{text}");
}
