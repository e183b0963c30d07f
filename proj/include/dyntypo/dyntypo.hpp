#pragma once

#include "dyntypo/adam.hpp"
#include "dyntypo/augment.hpp"
#include "dyntypo/autodiff.hpp"
#include "dyntypo/engine.hpp"
#include "dyntypo/error.hpp"
#include "dyntypo/fields.hpp"
#include "dyntypo/geometry.hpp"
#include "dyntypo/glyph.hpp"
#include "dyntypo/gradient_suite.hpp"
#include "dyntypo/guidance.hpp"
#include "dyntypo/io_export.hpp"
#include "dyntypo/losses.hpp"
#include "dyntypo/metrics.hpp"
#include "dyntypo/net.hpp"
#include "dyntypo/raster.hpp"
#include "dyntypo/rng.hpp"
#include "dyntypo/tensor.hpp"
