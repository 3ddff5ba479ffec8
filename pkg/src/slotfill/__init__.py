"""Multi-domain BIO slot filling.

Bi-LSTM sequence taggers trained per-domain, across domains, or across
domains with an adversarial domain classifier behind gradient reversal,
plus a joint model that ensembles two frozen encoders.  Built on a small
tape-based reverse-mode autodiff engine over numpy float64 arrays.
"""

from .autodiff import LstmParams, RngState, Tape, Tensor, lstm_cell
from .data import (
    Batch,
    Utterance,
    Vocabulary,
    batch_tokens,
    build_vocab,
    encode_and_batch,
    read_bio,
    write_bio,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    ShapeError,
    SlotFillError,
    TrainingDiverged,
)
from .metrics import Chunk, EvalReport, Scores, chunk_f1, extract_chunks, probe_domain_accuracy
from .models import (
    JointModel,
    LossBundle,
    ModelConfig,
    SlotModel,
    attention_pool,
    domain_label_dist,
    domain_loss,
    encode,
    joint_forward,
    predict_labels,
    slot_label_dist,
    slot_loss,
    tagger_forward,
    total_loss,
)
from .synth import GrammarSpec, Suite, generate, standard_suite, suite_specs
from .training import (
    Adam,
    TrainConfig,
    TrainResult,
    clip_gradients,
    train_general,
    train_joint,
    train_specific,
)
from .checkpoint import load_checkpoint, params_digest, save_checkpoint, serialize

__version__ = "0.1.0"
