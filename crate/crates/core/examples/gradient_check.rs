//! Compare backpropagated CNN gradients with central differences on a
//! tiny float64 model. Each field is already padded to its `max_len`,
//! as [`tweetgeo::cnn::FeatureEncoder`] does.

use tweetgeo::cnn::{gradient_check, CnnConfig, CnnModel, Features};
use tweetgeo::nncore::{dropout_mask, gradcheck::STEP};

fn main() -> tweetgeo::Result<()> {
    for shared_filters in [true, false] {
        let config = CnnConfig {
            embed_dim: 4,
            windows: vec![2, 3],
            filters_per_window: 2,
            dropout: 0.5,
            max_lens: [6, 4, 3, 3],
            n_labels: 3,
            shared_filters,
        };
        let onehot_dim = 12;
        let mut model = CnnModel::<f64>::new(config, 20, onehot_dim, 5)?;
        // With zero biases every all-padding window sits exactly on the ReLU
        // kink, where central differences are meaningless.
        model.banks.iter_mut().for_each(|b| b.bias.fill(0.1));
        let batch = vec![
            (
                Features {
                    fields: [vec![2, 3, 4, 5, 6, 7], vec![8, 9, 0, 0], vec![10, 11, 12], vec![13, 0, 0]],
                    onehot: [0, 3, 6, 10],
                },
                1,
            ),
            (
                Features {
                    fields: [vec![14, 15, 16, 0, 0, 0], vec![17, 18, 19, 1], vec![2, 4, 0], vec![6, 8, 10]],
                    onehot: [1, 2, 7, 11],
                },
                2,
            ),
        ];
        let masks = (0..batch.len() as u64)
            .map(|s| dropout_mask(model.config.pooled_dim(), 0.5, s))
            .collect::<tweetgeo::Result<Vec<Vec<f64>>>>()?;
        let err = gradient_check(&model, &batch, &masks, STEP)?;
        println!(
            "shared_filters={shared_filters}: {} parameters, max relative error {err:.2e}",
            model.parameters().iter().map(|t| t.len()).sum::<usize>()
        );
    }
    Ok(())
}
