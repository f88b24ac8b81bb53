from .cost import CostReport, LayerCost, conv_cost, count_cost
from .graph import (ArgMaxHead, ConfigError, ConvLayer, ModelGraph, ResidualBlock, Upsample,
                    block_forward, build_enet_mini, forward, predict)
from .layers import (BatchNormParams, ConvFilter, ShapeError, conv_forward, factorized_conv_forward,
                     fold_batchnorm, relu, upsample_nearest)
from .serialize import (ModelFormatError, ModelVersionError, dumps_model, load_model, loads_model,
                        parse_model, save_model)
