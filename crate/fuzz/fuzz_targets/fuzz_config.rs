//! The config parser must never panic, hang, or over-allocate on arbitrary
//! input: it either resolves a full RunConfig or returns a line-numbered
//! error.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = nehari_cli::config::parse_config(text);
    }
});
