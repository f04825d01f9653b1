//! Exercise the C ABI through the exported symbols.

use fedlora_ffi::*;
use std::ffi::{c_char, CString};
use std::ptr;

const CONFIG: &str = r#"{
    "problem": {"d": 8, "k": 6, "n_clients": 3, "target_rank": 2,
                "hetero_sigma": 0.2, "grad_noise_sigma": 0.1},
    "train": {"local_steps": 2, "learning_rate": 0.02},
    "ranks": [6, 4, 2],
    "rounds": 5,
    "master_seed": 17
}"#;

fn parse(json: &str) -> *mut FedloraConfig {
    let c = CString::new(json).unwrap();
    let mut cfg: *mut FedloraConfig = ptr::null_mut();
    let status = unsafe { fedlora_config_parse(c.as_ptr(), &mut cfg) };
    assert_eq!(status, FedloraStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let len = unsafe { fedlora_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    String::from_utf8_lossy(&buf[..len.min(buf.len() - 1)]).into_owned()
}

#[test]
fn parse_run_and_read_records() {
    let cfg = parse(CONFIG);
    let mut run: *mut FedloraRun = ptr::null_mut();
    assert_eq!(unsafe { fedlora_run(cfg, &mut run) }, FedloraStatus::Ok);
    let n = unsafe { fedlora_run_num_records(run) };
    assert_eq!(n, 6);

    let mut first = FedloraRoundMetrics {
        round: 0,
        global_loss: 0.0,
        global_grad_norm_sq: 0.0,
        trunc_bias_sq: 0.0,
        mean_trunc_err_sq: 0.0,
        weights_min: 0.0,
        weights_max: 0.0,
        wall_time_ms: 0.0,
    };
    assert_eq!(unsafe { fedlora_run_record(run, 0, &mut first) }, FedloraStatus::Ok);
    assert_eq!(first.round, 0);
    assert!(first.global_loss.is_finite() && first.global_loss > 0.0);

    let mut last = first;
    assert_eq!(unsafe { fedlora_run_record(run, n - 1, &mut last) }, FedloraStatus::Ok);
    assert_eq!(last.round, 5);
    assert!(last.global_loss < first.global_loss, "training made no progress");

    let status = unsafe { fedlora_run_record(run, n, &mut last) };
    assert_eq!(status, FedloraStatus::OutOfRange);
    assert!(last_error().contains("out of range"));

    unsafe {
        fedlora_run_free(run);
        fedlora_config_free(cfg);
    }
}

#[test]
fn csv_output_is_deterministic_across_handles() {
    let dir = tempfile::tempdir().unwrap();
    let write_csv = |tag: &str| {
        let cfg = parse(CONFIG);
        let mut run: *mut FedloraRun = ptr::null_mut();
        assert_eq!(unsafe { fedlora_run(cfg, &mut run) }, FedloraStatus::Ok);
        let path = dir.path().join(format!("{tag}.csv"));
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(
            unsafe { fedlora_run_write_csv(run, c_path.as_ptr()) },
            FedloraStatus::Ok
        );
        unsafe {
            fedlora_run_free(run);
            fedlora_config_free(cfg);
        }
        std::fs::read(path).unwrap()
    };
    let a = write_csv("a");
    let b = write_csv("b");
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("round,global_loss,"));
}

#[test]
fn strategy_and_seed_overrides_change_the_run() {
    let final_loss = |strategy: Option<&str>, seed: Option<u64>| {
        let cfg = parse(CONFIG);
        if let Some(name) = strategy {
            let c = CString::new(name).unwrap();
            assert_eq!(
                unsafe { fedlora_config_set_strategy(cfg, c.as_ptr()) },
                FedloraStatus::Ok
            );
        }
        if let Some(s) = seed {
            assert_eq!(unsafe { fedlora_config_set_seed(cfg, s) }, FedloraStatus::Ok);
        }
        let mut run: *mut FedloraRun = ptr::null_mut();
        assert_eq!(unsafe { fedlora_run(cfg, &mut run) }, FedloraStatus::Ok);
        let n = unsafe { fedlora_run_num_records(run) };
        let mut row = FedloraRoundMetrics {
            round: 0,
            global_loss: 0.0,
            global_grad_norm_sq: 0.0,
            trunc_bias_sq: 0.0,
            mean_trunc_err_sq: 0.0,
            weights_min: 0.0,
            weights_max: 0.0,
            wall_time_ms: 0.0,
        };
        assert_eq!(
            unsafe { fedlora_run_record(run, n - 1, &mut row) },
            FedloraStatus::Ok
        );
        unsafe {
            fedlora_run_free(run);
            fedlora_config_free(cfg);
        }
        row.global_loss
    };
    let base = final_loss(None, None);
    assert_eq!(base.to_bits(), final_loss(None, None).to_bits());
    assert_ne!(base.to_bits(), final_loss(None, Some(99)).to_bits());
    assert_ne!(
        base.to_bits(),
        final_loss(Some("zero_padding"), None).to_bits()
    );
}

#[test]
fn error_paths_set_codes_and_messages() {
    // Null out-pointer.
    let json = CString::new(CONFIG).unwrap();
    let status = unsafe { fedlora_config_parse(json.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, FedloraStatus::NullArgument);

    // Broken JSON.
    let mut cfg: *mut FedloraConfig = ptr::null_mut();
    let bad = CString::new("{ nope").unwrap();
    let status = unsafe { fedlora_config_parse(bad.as_ptr(), &mut cfg) };
    assert_eq!(status, FedloraStatus::Parse);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    // Structurally valid but semantically broken config.
    let invalid = CONFIG.replace("\"ranks\": [6, 4, 2]", "\"ranks\": [6, 4]");
    let invalid = CString::new(invalid).unwrap();
    let status = unsafe { fedlora_config_parse(invalid.as_ptr(), &mut cfg) };
    assert_eq!(status, FedloraStatus::InvalidConfig);
    assert!(last_error().contains("ranks"));

    // Unknown strategy override.
    let cfg = parse(CONFIG);
    let bogus = CString::new("bogus").unwrap();
    let status = unsafe { fedlora_config_set_strategy(cfg, bogus.as_ptr()) };
    assert_eq!(status, FedloraStatus::InvalidConfig);
    assert!(last_error().contains("bogus"));
    unsafe { fedlora_config_free(cfg) };

    // Freeing null handles is a no-op.
    unsafe {
        fedlora_config_free(ptr::null_mut());
        fedlora_run_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/fedlora.h"
    ))
    .expect("header is generated by the build script");
    for needle in [
        "typedef struct FedloraConfig FedloraConfig;",
        "typedef struct FedloraRun FedloraRun;",
        "FEDLORA_STATUS_OK",
        "fedlora_config_parse",
        "fedlora_run_record",
        "fedlora_last_error_message",
    ] {
        assert!(header.contains(needle), "header is missing `{needle}`");
    }
}
