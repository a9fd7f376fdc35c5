#pragma once

#include "crowdscale/autodiff.hpp"
#include "crowdscale/error.hpp"
#include "crowdscale/evaluation.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/grid.hpp"
#include "crowdscale/groundtruth.hpp"
#include "crowdscale/image_io.hpp"
#include "crowdscale/kernels.hpp"
#include "crowdscale/log.hpp"
#include "crowdscale/model.hpp"
#include "crowdscale/synth.hpp"
#include "crowdscale/tensor.hpp"
#include "crowdscale/training.hpp"
