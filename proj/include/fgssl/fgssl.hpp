#pragma once

#include "fgssl/errors.hpp"
#include "fgssl/tensor.hpp"
#include "fgssl/autodiff.hpp"
#include "fgssl/optim.hpp"
#include "fgssl/grad_check.hpp"
#include "fgssl/rng.hpp"
#include "fgssl/graph.hpp"
#include "fgssl/graph_io.hpp"
#include "fgssl/partition.hpp"
#include "fgssl/gat.hpp"
#include "fgssl/augment.hpp"
#include "fgssl/losses.hpp"
#include "fgssl/federation.hpp"
#include "fgssl/analysis.hpp"
#include "fgssl/config.hpp"
#include "fgssl/experiment.hpp"
