//! Transformer building blocks: multi-head attention, the residual
//! attention + feed-forward unit, encoder and decoder stacks, and the
//! key/value cache used for incremental decoding.

pub mod cache;
pub mod layers;

pub use cache::{decoder_step, init_decoder_cache, DecoderCache};
pub use layers::{
    attention_projected, attention_sublayer, decoder_stack_full, encoder_stack, ffn_sublayer,
    init_decoder_layer, init_encoder_layer, multi_head_attention, AttnIds, DecoderLayerIds,
    EncoderLayerIds, FfnIds, NormIds, INIT_STD,
};

use rand_chacha::ChaCha8Rng;

use crate::numcore::{NodeId, NumResult, ParamId, Params, Scalar, Tape};

/// A computation graph under construction: the tape plus the parameter store
/// it draws leaves from.
pub struct Graph<'p, S: Scalar> {
    pub tape: Tape<S>,
    pub params: &'p Params<S>,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p Params<S>) -> Self {
        Graph {
            tape: Tape::new(),
            params,
        }
    }

    /// Imports a parameter as a (memoized) gradient-tracked leaf.
    pub fn p(&mut self, id: ParamId) -> NodeId {
        self.tape.param(self.params, id)
    }
}

/// Whether a forward pass applies dropout. Training mode owns its stream of
/// randomness so a run is reproducible from the seed alone.
// One value lives for a whole run, so the size gap to `Eval` is harmless.
#[allow(clippy::large_enum_variant)]
pub enum DropoutMode {
    Eval,
    Train { rate: f64, rng: ChaCha8Rng },
}

impl DropoutMode {
    pub fn apply<S: Scalar>(&mut self, tape: &mut Tape<S>, x: NodeId) -> NumResult<NodeId> {
        match self {
            DropoutMode::Eval => Ok(x),
            DropoutMode::Train { rate, rng } => tape.dropout(x, *rate, rng),
        }
    }
}
