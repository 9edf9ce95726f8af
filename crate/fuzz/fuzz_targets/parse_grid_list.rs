#![no_main]

use fastkf::io::parse_grid_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(grids) = parse_grid_list(text) {
        assert!(!grids.is_empty());
        for (w, h) in grids {
            assert!(w > 0 && h > 0);
            assert!(w.checked_mul(h).is_some());
        }
    }
});
