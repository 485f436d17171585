#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = cao_locate::pulses::decode_pulses_bin(data);
});
