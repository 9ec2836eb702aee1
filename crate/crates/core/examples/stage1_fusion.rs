// Element-wise cross-modal fusion of projected tokens.

use memefier::model::{fuse_stage1, Projections};
use memefier::tensor::Matrix;

pub fn run_example() -> memefier::Result<()> {
    let p = Projections {
        image_tokens: Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0])?,
        image_global: vec![2.0, 2.0, 2.0],
        text_tokens: Matrix::from_vec(1, 3, vec![1.0, 1.0, -1.0])?,
        text_global: vec![0.5, -1.0, 10.0],
    };
    let (img, txt) = fuse_stage1(&p)?;
    // each image token scaled by the text global vector, and vice versa
    assert_eq!(img.row(0), &[0.5, -2.0, 30.0]);
    assert_eq!(txt.row(0), &[2.0, 2.0, -2.0]);
    println!("fused image {:?}", img.data());
    println!("fused text  {:?}", txt.data());
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
