#pragma once

#include "application.hpp"
#include "config.hpp"
#include "core.hpp"
#include "estimation.hpp"
#include "hac.hpp"
#include "kl_pso.hpp"
#include "likelihood.hpp"
#include "limitdist.hpp"
#include "linalg.hpp"
#include "montecarlo.hpp"
#include "pipeline.hpp"
#include "random.hpp"
