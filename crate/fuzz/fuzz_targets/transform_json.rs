#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::RigidTransform;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = serde_json::from_slice::<RigidTransform>(data) {
        let text = serde_json::to_string(&t).unwrap();
        let again: RigidTransform = serde_json::from_str(&text).expect("own output parses");
        assert!((again.rotation() - t.rotation()).abs().max() < 1e-9);
        assert_eq!(again.translation(), t.translation());
    }
});
