// SPDX-License-Identifier: Apache-2.0
/**
 * @file   avsel.hpp
 * @brief  Umbrella header for the audio-visual track selection library.
 */
#pragma once

#include "avsel/tensor.hpp"
#include "avsel/ops.hpp"
#include "avsel/optim.hpp"
#include "avsel/finite_diff.hpp"
#include "avsel/tensor_io.hpp"
#include "avsel/features.hpp"
#include "avsel/frontend.hpp"
#include "avsel/attention.hpp"
#include "avsel/training.hpp"
#include "avsel/gradcheck.hpp"
#include "avsel/harness.hpp"
