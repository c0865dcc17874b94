#pragma once

#include "fep/bundle.hpp"
#include "fep/common.hpp"
#include "fep/config.hpp"
#include "fep/csv.hpp"
#include "fep/experiment.hpp"
#include "fep/features.hpp"
#include "fep/learner.hpp"
#include "fep/ledger.hpp"
#include "fep/metrics.hpp"
#include "fep/oulad.hpp"
#include "fep/parallel.hpp"
#include "fep/pipeline.hpp"
#include "fep/report.hpp"
#include "fep/rng.hpp"
#include "fep/synthetic.hpp"
