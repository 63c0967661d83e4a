#pragma once

#include "dscsim/array_sim.hpp"
#include "dscsim/config.hpp"
#include "dscsim/design_space.hpp"
#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/functional.hpp"
#include "dscsim/memory_sim.hpp"
#include "dscsim/mme_sim.hpp"
#include "dscsim/netfile.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/report.hpp"
#include "dscsim/scheduler.hpp"
#include "dscsim/tensor.hpp"
#include "dscsim/tensor_io.hpp"
#include "dscsim/weight_gen.hpp"
#include "dscsim/weights.hpp"
