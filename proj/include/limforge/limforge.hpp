#pragma once

#include "limforge/annotations.hpp"
#include "limforge/common.hpp"
#include "limforge/geometry.hpp"
#include "limforge/morphometry.hpp"
#include "limforge/nn_kernels.hpp"
#include "limforge/pyramid_advisor.hpp"
#include "limforge/raster.hpp"
#include "limforge/rf_engine.hpp"
#include "limforge/tiler.hpp"
