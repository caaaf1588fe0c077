#![no_main]

use catalyst_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let args = cfg.to_args().expect("validated config expands to flags");
        assert_eq!(args[0], "catalyst");
    }
});
