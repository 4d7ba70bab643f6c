#pragma once

#include "airbfl/aircomp.hpp"
#include "airbfl/bayes.hpp"
#include "airbfl/channel.hpp"
#include "airbfl/config.hpp"
#include "airbfl/data.hpp"
#include "airbfl/experiment.hpp"
#include "airbfl/gaussian.hpp"
#include "airbfl/metrics.hpp"
#include "airbfl/network.hpp"
#include "airbfl/orchestrator.hpp"
#include "airbfl/rng.hpp"
#include "airbfl/round_log.hpp"
#include "airbfl/units.hpp"
