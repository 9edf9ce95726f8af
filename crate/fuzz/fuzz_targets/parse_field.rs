#![no_main]

use fastkf::io::{decode_field, encode_field};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = decode_field(data) {
        assert_eq!(field.values.len(), field.nx * field.ny);
        // decoding is exact, so re-encoding restores the input
        assert_eq!(encode_field(&field).unwrap(), data);
    }
});
