use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use crydet_ffi::*;

fn last_error() -> String {
    let p = crydet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn tone(n: usize, rate: u32) -> Vec<f32> {
    (0..n)
        .map(|i| (i as f32 * 440.0 * std::f32::consts::TAU / rate as f32).sin() * 0.3)
        .collect()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(crydet_version()) }
        .to_str()
        .unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn backbone_lifecycle_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cpath(&tmp.path().join("net.cryd"));
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(crydet_backbone_new(3, &mut net), CrydetStatus::Ok);
        assert_eq!(crydet_backbone_param_count(net), 89_680);
        assert_eq!(crydet_backbone_save(net, path.as_ptr()), CrydetStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(
            crydet_backbone_load(path.as_ptr(), &mut back),
            CrydetStatus::Ok
        );
        let spec: Vec<f32> = (0..CRYDET_INPUT_SIZE * CRYDET_INPUT_SIZE)
            .map(|i| (i % 13) as f32 * 0.1 - 0.6)
            .collect();
        let (mut f1, mut f2) = (
            vec![0f32; CRYDET_FEATURE_DIM],
            vec![0f32; CRYDET_FEATURE_DIM],
        );
        let (mut l1, mut l2) = ([0f32; 2], [0f32; 2]);
        assert_eq!(
            crydet_backbone_forward(net, spec.as_ptr(), f1.as_mut_ptr(), l1.as_mut_ptr()),
            CrydetStatus::Ok
        );
        assert_eq!(
            crydet_backbone_forward(back, spec.as_ptr(), f2.as_mut_ptr(), l2.as_mut_ptr()),
            CrydetStatus::Ok
        );
        assert_eq!((f1, l1), (f2, l2));
        assert_eq!(
            crydet_backbone_forward(
                net,
                spec.as_ptr(),
                vec![0f32; CRYDET_FEATURE_DIM].as_mut_ptr(),
                ptr::null_mut()
            ),
            CrydetStatus::Ok
        );
        crydet_backbone_free(net);
        crydet_backbone_free(back);
        crydet_backbone_free(ptr::null_mut());
        assert_eq!(crydet_backbone_param_count(ptr::null()), 0);
    }
}

#[test]
fn score_clip_reports_window_count() {
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(crydet_backbone_new(0, &mut net), CrydetStatus::Ok);
        let clip = tone(3 * 16000, 16000);
        let mut n = 0usize;
        let st = crydet_backbone_score_clip(
            net,
            clip.as_ptr(),
            clip.len(),
            16000,
            ptr::null_mut(),
            0,
            &mut n,
        );
        assert_eq!((st, n), (CrydetStatus::BufferTooSmall, 3));
        let mut scores = vec![0f32; n];
        let st = crydet_backbone_score_clip(
            net,
            clip.as_ptr(),
            clip.len(),
            16000,
            scores.as_mut_ptr(),
            n,
            &mut n,
        );
        assert_eq!(st, CrydetStatus::Ok);
        assert!(scores.iter().all(|s| *s > 0.0 && *s < 1.0));
        crydet_backbone_free(net);
    }
}

#[test]
fn log_mel_shapes_per_profile() {
    for (profile, rate, shape) in [
        (CrydetProfile::Blazenet, 8000, (64, 64)),
        (CrydetProfile::Embedding, 16000, (96, 64)),
        (CrydetProfile::Blazenet, 16000, (64, 64)),
    ] {
        let clip = tone(rate as usize, rate);
        let mut out = vec![0f32; 96 * 64];
        let (mut f, mut m) = (0usize, 0usize);
        let st = unsafe {
            crydet_log_mel(
                clip.as_ptr(),
                clip.len(),
                rate,
                profile,
                out.as_mut_ptr(),
                out.len(),
                &mut f,
                &mut m,
            )
        };
        assert_eq!(st, CrydetStatus::Ok, "{}", last_error());
        assert_eq!((f, m), shape);
        assert!(out[..f * m].iter().all(|v| v.is_finite()));
    }
    let clip = tone(100, 8000);
    let mut out = vec![0f32; 64 * 64];
    let (mut f, mut m) = (0usize, 0usize);
    let st = unsafe {
        crydet_log_mel(
            clip.as_ptr(),
            clip.len(),
            8000,
            CrydetProfile::Blazenet,
            out.as_mut_ptr(),
            10,
            &mut f,
            &mut m,
        )
    };
    assert_eq!((st, f * m), (CrydetStatus::BufferTooSmall, 4096));
    let st = unsafe {
        crydet_log_mel(
            clip.as_ptr(),
            clip.len(),
            8000,
            CrydetProfile::Blazenet,
            out.as_mut_ptr(),
            out.len(),
            &mut f,
            &mut m,
        )
    };
    assert_eq!(st, CrydetStatus::InvalidArgument);
    assert!(last_error().contains("samples"));
}

#[test]
fn head_scores_and_dimension_errors() {
    let tmp = tempfile::tempdir().unwrap();
    unsafe {
        let mut head = ptr::null_mut();
        assert_eq!(crydet_head_new(8, 1, &mut head), CrydetStatus::Ok);
        assert_eq!(crydet_head_input_dim(head), 8);
        let feats: Vec<f32> = (0..3 * 8).map(|i| i as f32 / 10.0).collect();
        let (mut s, mut m) = ([0f32; 3], [0f32; 3]);
        assert_eq!(
            crydet_head_score(head, feats.as_ptr(), 3, 8, s.as_mut_ptr(), m.as_mut_ptr()),
            CrydetStatus::Ok
        );
        assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(m.iter().all(|v| *v >= 0.0));
        let st = crydet_head_score(head, feats.as_ptr(), 4, 6, s.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, CrydetStatus::Dimension);
        crydet_head_free(head);

        // A backbone file is not a head.
        let mut net = ptr::null_mut();
        assert_eq!(crydet_backbone_new(0, &mut net), CrydetStatus::Ok);
        let path = cpath(&tmp.path().join("net.cryd"));
        assert_eq!(crydet_backbone_save(net, path.as_ptr()), CrydetStatus::Ok);
        crydet_backbone_free(net);
        let mut h2 = ptr::null_mut();
        assert_eq!(
            crydet_head_load(path.as_ptr(), &mut h2),
            CrydetStatus::Format
        );
        assert!(h2.is_null());
        assert!(last_error().contains("shape-table mismatch"));
    }
}

#[test]
fn null_and_missing_inputs() {
    unsafe {
        assert_eq!(
            crydet_backbone_new(0, ptr::null_mut()),
            CrydetStatus::NullPointer
        );
        assert!(last_error().contains("out"));
        let mut net = ptr::null_mut();
        assert_eq!(
            crydet_backbone_load(ptr::null(), &mut net),
            CrydetStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/dir/x.cryd").unwrap();
        assert_eq!(
            crydet_backbone_load(missing.as_ptr(), &mut net),
            CrydetStatus::Io
        );
        assert!(net.is_null());
        let tmp = tempfile::tempdir().unwrap();
        let junk = tmp.path().join("junk.cryd");
        std::fs::write(&junk, b"CRYDgarbage").unwrap();
        assert_eq!(
            crydet_backbone_load(cpath(&junk).as_ptr(), &mut net),
            CrydetStatus::Format
        );
        let mut n = 0;
        assert_eq!(
            crydet_backbone_score_clip(
                ptr::null(),
                ptr::null(),
                0,
                8000,
                ptr::null_mut(),
                0,
                &mut n
            ),
            CrydetStatus::NullPointer
        );
    }
}

#[test]
fn header_is_generated_and_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crydet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "crydet_backbone_load",
        "crydet_head_score",
        "CRYDET_STATUS_BUFFER_TOO_SMALL",
        "typedef struct CrydetHead",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    // Compile-check when a C compiler is available.
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"crydet.h\"\nint main(void) { CrydetBackbone *n = 0; \
         return crydet_backbone_new(1, &n) == CRYDET_STATUS_OK ? 0 : (int)crydet_backbone_param_count(n); }\n",
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("no C compiler; header compile check skipped"),
    }
}
