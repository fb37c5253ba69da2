#![no_main]

use libfuzzer_sys::fuzz_target;
use sherd::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = PipelineConfig::from_toml_str(text) {
        let written = config.to_toml_string().expect("valid config serializes");
        assert_eq!(PipelineConfig::from_toml_str(&written).unwrap(), config);
    }
});
