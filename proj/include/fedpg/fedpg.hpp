#pragma once

#include "fedpg/backbone.hpp"
#include "fedpg/common.hpp"
#include "fedpg/config.hpp"
#include "fedpg/engine.hpp"
#include "fedpg/generators.hpp"
#include "fedpg/graph.hpp"
#include "fedpg/local_training.hpp"
#include "fedpg/partition.hpp"
#include "fedpg/prototypes.hpp"
#include "fedpg/report.hpp"
#include "fedpg/server.hpp"
#include "fedpg/sparsify.hpp"
