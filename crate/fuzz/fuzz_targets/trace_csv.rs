#![no_main]

use libfuzzer_sys::fuzz_target;
use mvkit_cli::trace::{read_trace, trace_to_string};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace(data) {
        assert!(trace.records.windows(2).all(|w| w[0].update < w[1].update));
        let again = read_trace(trace_to_string(&trace).as_bytes()).expect("written traces parse");
        assert_eq!(again, trace);
    }
});
