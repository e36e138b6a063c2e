//! Datasets, a small tanh MLP, symmetric cross entropy and local SGD.

mod dataset;
mod idx;
mod loss;
mod model;
mod train;

pub use dataset::{add_gaussian_noise, synth_dataset, BlobLayout, Dataset, DEFAULT_SPREAD};
pub use idx::{decode_idx, load_idx, parse_images, parse_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use loss::{sce_loss, softmax};
pub use model::{MlpShape, ModelParams};
pub use train::{evaluate_accuracy, local_train, mean_loss, TrainConfig};
