#pragma once

#include "deepesn/bundle.hpp"
#include "deepesn/data.hpp"
#include "deepesn/errors.hpp"
#include "deepesn/evaluation.hpp"
#include "deepesn/linalg.hpp"
#include "deepesn/matrix.hpp"
#include "deepesn/random.hpp"
#include "deepesn/readout.hpp"
#include "deepesn/reports.hpp"
#include "deepesn/reservoir.hpp"
