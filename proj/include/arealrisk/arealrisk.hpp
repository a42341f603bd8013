#ifndef AREALRISK_AREALRISK_HPP
#define AREALRISK_AREALRISK_HPP

#include "arealrisk/csv.hpp"
#include "arealrisk/error.hpp"
#include "arealrisk/estimators.hpp"
#include "arealrisk/graph.hpp"
#include "arealrisk/metrics.hpp"
#include "arealrisk/model.hpp"
#include "arealrisk/rng.hpp"
#include "arealrisk/sampler.hpp"
#include "arealrisk/simstudy.hpp"

#endif // AREALRISK_AREALRISK_HPP
