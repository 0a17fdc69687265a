#pragma once

#include "cdla/adamw.hpp"
#include "cdla/clicksim.hpp"
#include "cdla/config.hpp"
#include "cdla/data.hpp"
#include "cdla/error.hpp"
#include "cdla/experiment.hpp"
#include "cdla/graph.hpp"
#include "cdla/losses.hpp"
#include "cdla/metrics.hpp"
#include "cdla/models.hpp"
#include "cdla/nn.hpp"
#include "cdla/params.hpp"
#include "cdla/rng.hpp"
#include "cdla/tensor.hpp"
#include "cdla/text.hpp"
#include "cdla/training.hpp"
