#pragma once

#include "bcil/core.hpp"
#include "bcil/plant.hpp"
#include "bcil/control.hpp"
#include "bcil/trajectory.hpp"
#include "bcil/tasks.hpp"
#include "bcil/teleop.hpp"
#include "bcil/seqmodel.hpp"
#include "bcil/autonomy.hpp"
#include "bcil/metrics.hpp"
#include "bcil/plot.hpp"
#include "bcil/experiment.hpp"
