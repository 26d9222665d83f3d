#pragma once

#include "mfgm/common.hpp"
#include "mfgm/evolution.hpp"
#include "mfgm/fixedpoint.hpp"
#include "mfgm/grid.hpp"
#include "mfgm/limits.hpp"
#include "mfgm/model.hpp"
#include "mfgm/oracle.hpp"
#include "mfgm/runner.hpp"
#include "mfgm/scenario.hpp"
#include "mfgm/stopping.hpp"
