#pragma once

#include "autopainter/checkpoint.hpp"
#include "autopainter/color_hints.hpp"
#include "autopainter/dataset.hpp"
#include "autopainter/errors.hpp"
#include "autopainter/evaluation.hpp"
#include "autopainter/features.hpp"
#include "autopainter/image.hpp"
#include "autopainter/losses.hpp"
#include "autopainter/networks.hpp"
#include "autopainter/ops.hpp"
#include "autopainter/painter.hpp"
#include "autopainter/param_set.hpp"
#include "autopainter/png_io.hpp"
#include "autopainter/sketch.hpp"
#include "autopainter/tensor.hpp"
#include "autopainter/training.hpp"
