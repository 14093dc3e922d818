//! Local matching engine for memory-based few-shot video object segmentation.
//!
//! The crate covers the whole non-learned path of a memory network:
//! direction-based local sampling ([`sampling`]), softmax affinity and
//! readout against a keyframe memory ([`matching`]), the object-aware
//! contrastive objective ([`contrastive`]), frame-by-frame propagation and the
//! J / F metrics ([`pipeline`], [`metrics`]), and a kernel benchmark harness
//! ([`bench`]). Learned encoders are replaced by synthetic feature videos
//! ([`synth`]) or by feature maps loaded from disk ([`io`]).

pub mod bench;
pub mod contrastive;
pub mod error;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use matching::{AffinityMatrix, MatchConfig, MemoryBank, ReferenceMode};
pub use sampling::{DirectionSet, ReferenceMap, SampledMatrix};
pub use synth::{SynthConfig, VideoSequence};
pub use tensor::{FeatureMap, ObjectLabelMap};
