// Rank AUC, macro-F1 and accuracy.

use memefier::metrics::{accuracy, macro_f1, multilabel_macro_f1, roc_auc};

pub fn run_example() -> memefier::Result<()> {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [false, false, true, true];
    let auc = roc_auc(&scores, &labels)?;
    assert_eq!(auc, 0.75);
    println!("AUC {auc}");

    // ties count half
    println!("tied AUC {}", roc_auc(&[0.5, 0.5], &[false, true])?);

    let pred = [0, 1, 2, 2];
    let truth = [0, 1, 1, 2];
    println!("macro-F1 {:.4}", macro_f1(&pred, &truth, 3)?);
    println!("accuracy {}", accuracy(&pred, &truth)?);

    let ml_pred = vec![vec![true, false], vec![true, true]];
    let ml_truth = vec![vec![true, false], vec![false, true]];
    println!("multi-label macro-F1 {:.4}", multilabel_macro_f1(&ml_pred, &ml_truth)?);

    assert!(roc_auc(&[0.3, 0.7], &[true, true]).is_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
