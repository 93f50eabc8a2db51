#![no_main]

use libfuzzer_sys::fuzz_target;
use mvkit_cli::scene::SceneContainer;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = SceneContainer::from_json(text) {
        let again = SceneContainer::from_json(&scene.to_json()).expect("written scenes parse");
        assert_eq!(again, scene);
    }
});
