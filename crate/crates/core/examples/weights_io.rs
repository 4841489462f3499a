//! Weight files: save, reload, half precision, and corruption detection.

use lmk::model::{init_weights, ModelConfig};
use lmk::weights::WeightStore;

fn main() -> lmk::Result<()> {
    let store = init_weights(&ModelConfig::student(), 1);
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("student.lmkw");
    store.save(&path)?;
    println!("{} tensors, {} values, crc {:08x}", store.len(), store.total_elements(), store.checksum());
    println!("reload is bit-identical: {}", WeightStore::load(&path)?.bit_eq(&store));

    let half = store.to_f16();
    println!("f16 file: {} bytes vs {} bytes", half.to_bytes().len(), store.to_bytes().len());

    let mut bytes = store.to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    match WeightStore::from_bytes(&bytes) {
        Err(e) => println!("flipped bit rejected: {e}"),
        Ok(_) => println!("flipped bit went unnoticed"),
    }
    Ok(())
}
