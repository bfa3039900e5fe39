#pragma once

#include "impact/classifier_eval.hpp"
#include "impact/core_data.hpp"
#include "impact/date.hpp"
#include "impact/descriptives.hpp"
#include "impact/design.hpp"
#include "impact/effects.hpp"
#include "impact/error.hpp"
#include "impact/estimator.hpp"
#include "impact/forecast.hpp"
#include "impact/pipeline.hpp"
#include "impact/selection.hpp"
#include "impact/synthgen.hpp"
