//! Fuzz target: decode arbitrary bytes as a model checkpoint.
//! The loader must reject hostile headers without panicking or
//! over-allocating.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = dsn_core::nn::read_checkpoint_bytes(data);
});
