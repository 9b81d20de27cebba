#pragma once

// Umbrella header.
#include "dipa/errors.hpp"
#include "dipa/tensor.hpp"
#include "dipa/png_io.hpp"
#include "dipa/types.hpp"
#include "dipa/median_pool.hpp"
#include "dipa/total_variation.hpp"
#include "dipa/resample.hpp"
#include "dipa/compositing.hpp"
#include "dipa/camera_channel.hpp"
#include "dipa/embedders.hpp"
#include "dipa/optimizer.hpp"
#include "dipa/metrics.hpp"
#include "dipa/verifier.hpp"
#include "dipa/remote.hpp"
#include "dipa/benchmark.hpp"
#include "dipa/report.hpp"
#include "dipa/service.hpp"
#include "dipa/synthetic.hpp"
