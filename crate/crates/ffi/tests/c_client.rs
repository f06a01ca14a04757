//! Builds the static library, compiles a C program against the generated
//! header and runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "lapfov.h"

int main(void) {
    LapfovSimulation *sim = NULL;
    if (lapfov_simulation_new("duration = 1.0\n", &sim) != LAPFOV_STATUS_OK) return 1;
    LapfovStep step;
    double v0 = -1.0;
    for (int i = 0; i < 50; i++) {
        if (lapfov_simulation_step(sim, &step) != LAPFOV_STATUS_OK) return 2;
        if (i == 0) v0 = step.v;
    }
    if (step.step != 49 || !(step.v <= v0)) return 3;
    lapfov_simulation_free(sim);

    LapfovSimulation *bad = NULL;
    if (lapfov_simulation_new("dt = 0.0", &bad) != LAPFOV_STATUS_CONFIG_ERROR || bad != NULL) return 4;
    char msg[256];
    size_t len = 0;
    if (lapfov_last_error(msg, sizeof msg, &len) != LAPFOV_STATUS_OK || len == 0 || strlen(msg) != len) return 5;

    LapfovIntrinsics k = lapfov_default_intrinsics();
    double j[6];
    if (lapfov_image_jacobian(k.cx, k.cy, 10.0, &k, &j) != LAPFOV_STATUS_OK) return 6;
    if (fabs(j[0] + 26.0) > 1e-12) return 7;
    printf("ok %s\n", msg);
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_client");
    std::fs::create_dir_all(&tmp).unwrap();
    let target = tmp.join("target");
    let status = Command::new(&cargo)
        .args(["build", "-q", "-p", "lapfov-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .current_dir(&root)
        .status()
        .unwrap();
    assert!(status.success());
    let lib = target.join("debug/liblapfov_ffi.a");
    let src = tmp.join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = tmp.join("main");
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).contains("dt"));
}
