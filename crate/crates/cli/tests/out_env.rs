use std::path::{Path, PathBuf};

use activeseed_cli::{resolve_out, OUT_ENV};

// Kept alone in its own test binary: it mutates the process environment.
#[test]
fn environment_overrides_flag() {
    std::env::remove_var(OUT_ENV);
    assert_eq!(resolve_out(None, None), PathBuf::from("out"));
    assert_eq!(resolve_out(None, Some(Path::new("m"))), PathBuf::from("m"));
    assert_eq!(resolve_out(Some(Path::new("flag")), Some(Path::new("m"))), PathBuf::from("flag"));
    std::env::set_var(OUT_ENV, "/tmp/env-out");
    assert_eq!(resolve_out(Some(Path::new("flag")), None), PathBuf::from("/tmp/env-out"));
    std::env::remove_var(OUT_ENV);
}
