#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::boundary::Mask;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = Mask::from_png_bytes(data) {
        let contour = mask.contour_pixels();
        assert!(contour.len() <= (mask.width() as usize) * (mask.height() as usize));
        let again = Mask::from_png_bytes(&mask.to_png_bytes()).unwrap();
        assert_eq!(again, mask);
    }
});
