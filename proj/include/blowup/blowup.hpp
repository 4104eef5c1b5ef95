#pragma once

#include "blowup/comparison_ode.hpp"
#include "blowup/critical_curves.hpp"
#include "blowup/eigenfunction.hpp"
#include "blowup/errors.hpp"
#include "blowup/experiment.hpp"
#include "blowup/metric.hpp"
#include "blowup/ode.hpp"
#include "blowup/wave_sim.hpp"
