// Unfold/fold, mode products and the CP/Tucker special cases of a
// block-term model.

use neuapprox::model::{reduce_check_cp, reduce_check_tucker};
use neuapprox::{BlockTermModel, DenseTensor, ModelSpec};

fn main() -> neuapprox::Result<()> {
    let t = DenseTensor::from_fn(&[2, 3, 4], |i| (i[0] * 12 + i[1] * 4 + i[2]) as f64);
    let m = t.unfold(1)?;
    println!("mode-1 unfolding of {:?}: {}x{}", t.shape(), m.rows(), m.cols());
    assert_eq!(DenseTensor::fold(&m, 1, t.shape())?, t);

    let a = DenseTensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0])?;
    let p = t.mode_product(&a, 1)?;
    println!("mode-1 product shape {:?}, norm {:.4}", p.shape(), p.frobenius_norm());

    let cp = BlockTermModel::init(&ModelSpec::neural(3, vec![1, 1, 1], 2, 8), 1)?;
    let tucker = BlockTermModel::init(&ModelSpec::neural(1, vec![2, 3, 2], 2, 8), 1)?;
    println!("CP special case: {}", reduce_check_cp(&cp));
    println!("Tucker special case: {}", reduce_check_tucker(&tucker));
    let x = tucker.eval_grid(&[5, 5, 3])?;
    println!("Tucker field {:?}, norm {:.4}", x.shape(), x.frobenius_norm());
    Ok(())
}
