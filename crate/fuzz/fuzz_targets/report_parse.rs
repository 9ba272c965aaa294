//! Fuzz target: parse arbitrary bytes as an evaluation report.
//! Must not panic regardless of input.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = dsn_core::eval::parse_report(&text);
});
