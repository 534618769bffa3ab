//! BlazeNet backbone, anomaly head and their weight files.

mod blazenet;
mod head;
mod weights;

pub use blazenet::{
    blaze_block, blazenet_forward, blazenet_graph, blazenet_layout, build_blazenet, classify,
    input_tensor, label_at, BlazeBlockSpec, BlazeNet, BlazeOutput, ParamVars, BLAZE_BLOCKS,
    CRY_CLASS, FEATURE_DIM, INPUT_CHANNELS, INPUT_SIZE, PARAM_COUNT,
};
pub use head::{
    head_graph, head_layout, AnomalyHead, HeadOutput, HeadVars, DROPOUT, HIDDEN1, HIDDEN2,
};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, ModelWeights, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
