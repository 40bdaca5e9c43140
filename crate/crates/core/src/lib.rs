//! Boosted local image descriptors: the real-valued BELID-U-ADA and its
//! binary successor BEBLID.
//!
//! Weak learners threshold the difference of mean intensity over two square
//! boxes in a 32×32 patch. AdaBoost selects them from pairs of matching and
//! non-matching patches, and each selected learner becomes one descriptor
//! dimension.

pub mod boosting;
pub mod datasets;
pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod matching;
pub mod weaklearners;

pub use boosting::{train, TrainConfig, TrainMode, TrainedEnsemble};
pub use descriptor::{
    describe, describe_binary, describe_real, BinaryDescriptor, DescriptorMode, DescriptorModel, Descriptors, Keypoint,
    RealDescriptor,
};
pub use error::{Error, Result};
pub use imaging::{integral_image, GrayImage, IntegralImage};
pub use matching::{hamming, l2_sq, match_nn, MatchResult, Metric};
