// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "osc/errors.hpp"
#include "osc/mx_format.hpp"
#include "osc/perf_model.hpp"
#include "osc/pipeline.hpp"
#include "osc/profiler.hpp"
#include "osc/quantized_tensor.hpp"
#include "osc/report.hpp"
#include "osc/suppression_table.hpp"
#include "osc/synth.hpp"
#include "osc/tensor.hpp"
#include "osc/tensor_io.hpp"
#include "osc/version.hpp"
