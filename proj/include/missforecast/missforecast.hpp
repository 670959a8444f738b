#pragma once

#include "core.hpp"
#include "csv.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "eval.hpp"
#include "gaussian.hpp"
#include "mechanisms.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "procedures.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "runner.hpp"
