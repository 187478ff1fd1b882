#ifndef MCDIFF_MCDIFF_HPP
#define MCDIFF_MCDIFF_HPP

#include "ablation.hpp"
#include "core_types.hpp"
#include "degradation.hpp"
#include "fidelity.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "operators.hpp"
#include "phantoms.hpp"
#include "run_config.hpp"
#include "sampler.hpp"
#include "schedule.hpp"
#include "score_models.hpp"

#endif
