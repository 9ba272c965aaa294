//! Fuzz target: parse arbitrary bytes as a trajectory file.
//! Uses lossy UTF-8 conversion since the format is line-delimited text.
//! Must not panic regardless of input.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = dsn_core::data::parse_trajectory_text(&text);
});
