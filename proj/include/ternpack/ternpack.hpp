#pragma once

#include "ternpack/bench.hpp"
#include "ternpack/block_quant.hpp"
#include "ternpack/container.hpp"
#include "ternpack/error.hpp"
#include "ternpack/half.hpp"
#include "ternpack/packed_linear.hpp"
#include "ternpack/roofline.hpp"
#include "ternpack/scaling_law.hpp"
#include "ternpack/trit_codec.hpp"
