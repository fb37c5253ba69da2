#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::boundary::BoundarySet;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = serde_json::from_slice::<BoundarySet>(data) {
        assert!(set.indices().windows(2).all(|w| w[0] < w[1]));
        let text = serde_json::to_string(&set).unwrap();
        assert_eq!(serde_json::from_str::<BoundarySet>(&text).unwrap(), set);
    }
});
