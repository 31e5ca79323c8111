#![no_main]

use cellsbi_cli::external::parse_summary_row;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(row) = parse_summary_row(&text) {
        assert!(!row.is_empty());
        assert!(row.iter().all(|x| x.is_finite()));
    }
});
