#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::boundary::CameraDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = CameraDocument::parse(text) {
        let again = serde_json::to_string(&doc).unwrap();
        let reparsed = CameraDocument::parse(&again).expect("own output parses");
        assert_eq!(reparsed.views.len(), doc.views.len());
    }
});
