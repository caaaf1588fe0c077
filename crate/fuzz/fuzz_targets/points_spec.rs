#![no_main]

use catalyst_core::coalescing::{parse_points, points_dimension};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = parse_points(text) {
        assert!(!points.is_empty());
        assert!(points.windows(2).all(|w| w[0].birth_time <= w[1].birth_time));
        assert!(points_dimension(text).is_some());
    }
});
