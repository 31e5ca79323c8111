#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = cellsbi_cli::parse_str(text) {
            // whatever parses must serialise and parse back to itself;
            // compared as text since NaN fields are not equal to themselves
            let text = cfg.to_toml();
            let again = cellsbi_cli::parse_str(&text).expect("round trip");
            assert_eq!(text, again.to_toml());
        }
    }
});
