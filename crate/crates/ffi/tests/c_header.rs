//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "rlrtr.h"

int main(void) {
    float data[2 * 2 * 3] = {0};
    RlrtrVideo *video = NULL;
    if (rlrtr_video_new(2, 2, 3, data, &video) != RLRTR_STATUS_OK) return 1;
    size_t h = 0, w = 0, t = 0;
    rlrtr_video_dims(video, &h, &w, &t);
    if (h != 2 || w != 2 || t != 3) return 2;
    rlrtr_video_free(video);

    RlrtrConfig *cfg = NULL;
    if (rlrtr_config_from_toml("[solver]\nd_max = 9\n", &cfg) != RLRTR_STATUS_CONFIG) return 3;
    char msg[128];
    rlrtr_last_error(msg, sizeof msg);
    printf("%s\n", msg);
    if (rlrtr_video_new(2, 2, 3, NULL, &video) != RLRTR_STATUS_NULL_POINTER) return 4;
    return 0;
}
"#;

fn library_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    // the test harness links the rlib only; make sure the static library is current
    let built = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "rlrtr-ffi", "--lib"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .unwrap();
    assert!(built.success());
    let lib = library_dir().join("librlrtr_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {}",
        lib.display()
    );
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("smoke.c");
    let bin = work.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("config: solver.d_max"), "{text}");
}
