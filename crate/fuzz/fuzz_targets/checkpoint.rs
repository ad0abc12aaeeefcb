#![no_main]

use libfuzzer_sys::fuzz_target;
use ratlab::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ck) = Checkpoint::decode(data) else { return };
    let bytes = ck.encode().expect("decoded checkpoint re-encodes");
    assert_eq!(bytes, data);
    let _ = ck.into_net();
});
