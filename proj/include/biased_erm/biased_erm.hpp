#pragma once

#include "bias.hpp"
#include "distribution.hpp"
#include "errors.hpp"
#include "fairness.hpp"
#include "recovery.hpp"
#include "simulate.hpp"
#include "solver.hpp"
#include "verify.hpp"

namespace biased_erm {
inline constexpr const char* kVersion = "0.1.0";
}
