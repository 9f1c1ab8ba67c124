//! Train a small MLP on synthetic data and read off its ultimate-layer gradient.

use fedblock::data;
use fedblock::harness::eval_ma;
use fedblock::nn::{self, ModelParams, TrainConfig};

fn main() -> fedblock::Result<()> {
    let all = data::gen_dataset(1500, 5, 20, 7)?;
    let (test, train) = all.split_at(500);
    let model = ModelParams::mlp(20, &[32], 5, 1)?;
    println!("params: {}, start loss {:.4}, accuracy {:.3}", model.num_params(), model.loss(train)?, eval_ma(&model, test)?);

    let cfg = TrainConfig { learning_rate: 0.05, local_epochs: 5, batch_size: 20, seed: 3 };
    let trained = nn::sgd_train(&model, train, &cfg)?;
    println!("after {} epochs: loss {:.4}, accuracy {:.3}", cfg.local_epochs, trained.loss(train)?, eval_ma(&trained, test)?);

    let g = nn::extract_ultimate_gradient(&model, &trained, cfg.learning_rate)?;
    let mu = nn::by_class_gradient(&g);
    println!("ultimate layer {}x{}, by-class gradient:", g.classes(), g.width());
    for v in mu {
        print!(" {v:+.3}");
    }
    println!();
    Ok(())
}
