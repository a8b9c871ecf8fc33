from .blocks import KINDS, AxisBlock, SelfAttention
from .flow import (FlowSample, autoregress, block_dropout, flow_loss, initial_noise, make_flow_sample,
                   oracle_predictor, sample, sample_times)
from .model import (N_CONTROL, NULL_TOKEN, BlockMask, ConditionBundle, DiffusionConfig, VideoDiT,
                    control_from_rasters)
from .reshape import (from_crossview, from_spatial, from_temporal, inverse_crossview, inverse_spatial,
                      inverse_temporal, reshape_crossview, reshape_spatial, reshape_temporal, to_crossview,
                      to_spatial, to_temporal)

__all__ = [
    "AxisBlock", "BlockMask", "ConditionBundle", "DiffusionConfig", "FlowSample", "KINDS", "N_CONTROL",
    "NULL_TOKEN", "SelfAttention", "VideoDiT", "autoregress", "block_dropout", "control_from_rasters",
    "flow_loss", "from_crossview", "from_spatial", "from_temporal", "initial_noise", "inverse_crossview",
    "inverse_spatial", "inverse_temporal", "make_flow_sample", "oracle_predictor", "reshape_crossview",
    "reshape_spatial", "reshape_temporal", "sample", "sample_times", "to_crossview", "to_spatial",
    "to_temporal",
]
