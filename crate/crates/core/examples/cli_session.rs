//! Drives the command-line front end in-process: infer with a run manifest,
//! then replay that manifest.

use lmk::data::save_image;
use lmk::model::{init_weights, ModelConfig};
use lmk::Tensor;

fn lmk(args: &[&str]) -> i32 {
    let argv = std::iter::once("lmk").chain(args.iter().copied());
    lmk::cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    init_weights(&ModelConfig::student(), 5).save(path("w.lmkw"))?;
    save_image(&Tensor::from_fn(&[3, 200, 200], |i| ((i[1] + i[2]) % 256) as f32 / 255.0)?, path("face.ppm"))?;

    let code = lmk(&[
        "--manifest",
        &path("run.json"),
        "infer",
        "--weights",
        &path("w.lmkw"),
        "--image",
        &path("face.ppm"),
        "--bbox",
        "20,20,160,160",
        "--out",
        &path("a.txt"),
    ]);
    println!("infer exit {code}");
    std::fs::rename(path("a.txt"), path("first.txt"))?;
    println!("replay exit {}", lmk(&["replay", &path("run.json")]));
    let same = std::fs::read(path("first.txt"))? == std::fs::read(path("a.txt"))?;
    println!("replayed landmarks identical: {same}");
    Ok(())
}
