//! Comparison reconstructions: total variation by ADMM and a patch
//! dictionary learned with ITKrM and applied by orthogonal matching pursuit.

mod dic;
mod dictionary;
mod itkrm;
mod omp;
mod tv;

pub use dic::{dic_reconstruct, patch_training_vectors, DicConfig, DicOptions, DicOutcome};
pub use dictionary::{mean_approximation_error, Dictionary, DICTIONARY_MAGIC};
pub use itkrm::{itkrm_train, ItkrmOutcome};
pub use omp::{omp_sparse_code, SparseCode};
pub use tv::{div3d, grad3d, isotropic_shrinkage, total_variation, tv_admm_reconstruct, GradientField, TvConfig, TvOutcome};
