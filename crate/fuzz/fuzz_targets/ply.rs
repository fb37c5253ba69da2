#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::ply::{self, Encoding, Precision};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = ply::parse(data) else {
        return;
    };
    // Whatever parses must survive a lossless write and re-read.
    for encoding in [Encoding::Ascii, Encoding::BinaryLittleEndian] {
        let bytes = ply::to_bytes(&cloud, encoding, Precision::F64);
        let again = ply::parse(&bytes).expect("own output parses");
        assert_eq!(again.points(), cloud.points());
    }
});
