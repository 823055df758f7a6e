// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bokeh/aperture_attention.hpp"
#include "bokeh/autodiff.hpp"
#include "bokeh/blocks.hpp"
#include "bokeh/data_synth.hpp"
#include "bokeh/gradcheck.hpp"
#include "bokeh/image_io.hpp"
#include "bokeh/loss_metrics.hpp"
#include "bokeh/model.hpp"
#include "bokeh/ops.hpp"
#include "bokeh/tensor.hpp"
#include "bokeh/train.hpp"
