#pragma once

#include "mrcn/arch.hpp"
#include "mrcn/checkpoint.hpp"
#include "mrcn/config.hpp"
#include "mrcn/data.hpp"
#include "mrcn/error.hpp"
#include "mrcn/gradcheck.hpp"
#include "mrcn/gradcheck_suite.hpp"
#include "mrcn/graph.hpp"
#include "mrcn/inference.hpp"
#include "mrcn/metrics.hpp"
#include "mrcn/ops.hpp"
#include "mrcn/raster_io.hpp"
#include "mrcn/rng.hpp"
#include "mrcn/tensor.hpp"
#include "mrcn/training.hpp"
