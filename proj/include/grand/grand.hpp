#pragma once

#include "grand/attention.hpp"
#include "grand/autodiff.hpp"
#include "grand/data.hpp"
#include "grand/diffusion_ops.hpp"
#include "grand/error.hpp"
#include "grand/experiments.hpp"
#include "grand/graph.hpp"
#include "grand/integrators.hpp"
#include "grand/model.hpp"
#include "grand/parallel.hpp"
#include "grand/rewiring.hpp"
#include "grand/sparse.hpp"
#include "grand/stability.hpp"
