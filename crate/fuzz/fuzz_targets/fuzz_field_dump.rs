//! The field-dump reader must never panic or allocate beyond the input
//! size: hostile headers cannot claim huge grids, and every value is
//! checked finite.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dump) = nehari_cli::report::parse_field_dump(text) {
            // A dump the reader accepts must reconstruct into a consistent
            // grid/field pair.
            let (grid, field) = dump.to_field().expect("accepted dump must rebuild");
            assert_eq!(field.values().len(), grid.node_count());
        }
    }
});
