// Save a model and tensors to disk and load them back bit-exactly.

use neuapprox::io::{load_checkpoint, load_tensor, save_checkpoint, save_tensor, TrainConfig};
use neuapprox::{BlockTermModel, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = TrainConfig::default();
    let mut model = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 2, 2], 3, 8), 9)?;
    model.bind_grid(&[6, 5, 4])?;
    let x = model.eval_grid(&[6, 5, 4])?;

    let ck = dir.path().join("model.ckpt");
    let tp = dir.path().join("x.tensor");
    save_checkpoint(&model, &cfg, 0, &ck)?;
    save_tensor(&x, &tp)?;

    let back = load_checkpoint(&ck)?;
    let same_field = back.model.eval_grid(&[6, 5, 4])? == x;
    println!("checkpoint reproduces the field: {same_field}");
    println!("tensor round trip exact: {}", load_tensor(&tp)? == x);
    Ok(())
}
