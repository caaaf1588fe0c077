#![no_main]

use catalyst_core::Kernel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(k) = Kernel::from_json(text) {
        let back = Kernel::from_json(&k.to_json()).expect("serialized kernel parses");
        assert_eq!(back.offsets(), k.offsets());
    }
});
