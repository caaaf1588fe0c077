#![no_main]

use catalyst_cli::Table;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = Table::from_csv("fuzz", data) else { return };
    if t.rows.iter().any(|r| r.len() != t.columns.len()) {
        return;
    }
    if let Ok(bytes) = t.to_csv() {
        let again = Table::from_csv("fuzz", &bytes).expect("written table parses");
        assert_eq!(again.to_csv().unwrap(), bytes);
    }
});
