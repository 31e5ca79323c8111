#![no_main]

use cellsbi_cli::observed::{parse_observed, parse_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(t) = parse_table(&text) {
        assert!(!t.rows.is_empty());
        assert!(t.rows.iter().all(|r| r.len() == t.rows[0].len()));
    }
    if let Ok(v) = parse_observed(&text) {
        assert!(v.iter().all(|x| x.is_finite()));
    }
});
